//! Lloyd relaxation with Voronoi cells clipped to the unit square.

use std::collections::HashSet;

use nalgebra::Vector2;

use crate::atlas::Uv;

const DUPLICATE_OFFSET: f64 = 1e-9;

type Polygon = Vec<Vector2<f64>>;

/// Keep the part of `poly` on the side of `p` of the bisector between `p` and `q`.
fn clip_bisector(poly: &Polygon, p: Vector2<f64>, q: Vector2<f64>) -> Polygon {
    let n = q - p;
    let c = n.dot(&((p + q) * 0.5));
    let side = |x: &Vector2<f64>| n.dot(x) - c;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        let (sa, sb) = (side(&a), side(&b));
        if sa <= 0.0 {
            out.push(a);
        }
        if (sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0) {
            out.push(a + (b - a) * (sa / (sa - sb)));
        }
    }
    out
}

/// Area and area centroid of a simple polygon.
fn area_centroid(poly: &Polygon) -> (f64, Vector2<f64>) {
    let mut area = 0.0;
    let mut c = Vector2::zeros();
    for k in 0..poly.len() {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        let cross = a.x * b.y - b.x * a.y;
        area += cross;
        c += (a + b) * cross;
    }
    area *= 0.5;
    if area.abs() < 1e-300 {
        return (0.0, Vector2::zeros());
    }
    (area, c / (6.0 * area))
}

/// Uniform bucket grid used to visit sites in rings of increasing distance.
struct Buckets {
    side: usize,
    cells: Vec<Vec<usize>>,
}

impl Buckets {
    fn new(sites: &[Vector2<f64>]) -> Self {
        let side = ((sites.len() as f64 / 2.0).sqrt().ceil() as usize).clamp(1, 256);
        let mut cells = vec![Vec::new(); side * side];
        for (k, s) in sites.iter().enumerate() {
            let (i, j) = Self::cell_of(side, s);
            cells[i * side + j].push(k);
        }
        Self { side, cells }
    }

    fn cell_of(side: usize, s: &Vector2<f64>) -> (usize, usize) {
        let f = |x: f64| ((x * side as f64).floor().max(0.0) as usize).min(side - 1);
        (f(s.y), f(s.x))
    }
}

/// The Voronoi cell of `sites[k]` clipped to `[0,1]^2`.
fn clipped_cell(k: usize, sites: &[Vector2<f64>], buckets: &Buckets) -> Polygon {
    let p = sites[k];
    let mut poly: Polygon = vec![
        Vector2::new(0.0, 0.0),
        Vector2::new(1.0, 0.0),
        Vector2::new(1.0, 1.0),
        Vector2::new(0.0, 1.0),
    ];
    let side = buckets.side as isize;
    let h = 1.0 / buckets.side as f64;
    let (ci, cj) = Buckets::cell_of(buckets.side, &p);
    let (ci, cj) = (ci as isize, cj as isize);
    for ring in 0..side {
        // every site beyond this ring is at least ring * h away
        let reach = poly.iter().map(|v| (v - p).norm()).fold(0.0, f64::max);
        if ring > 0 && (ring - 1) as f64 * h > 2.0 * reach {
            break;
        }
        for di in -ring..=ring {
            for dj in -ring..=ring {
                if di.abs() != ring && dj.abs() != ring {
                    continue;
                }
                let (i, j) = (ci + di, cj + dj);
                if i < 0 || j < 0 || i >= side || j >= side {
                    continue;
                }
                for &other in &buckets.cells[(i * side + j) as usize] {
                    if other != k {
                        poly = clip_bisector(&poly, p, sites[other]);
                    }
                }
            }
        }
    }
    poly
}

/// Nudge exact duplicates apart so every site owns a cell.
fn separate_duplicates(points: &[Uv]) -> Vec<Vector2<f64>> {
    let mut seen = HashSet::new();
    points
        .iter()
        .map(|p| {
            let mut v = p.coords;
            let mut step = 0u32;
            while !seen.insert((v.x.to_bits(), v.y.to_bits())) {
                step += 1;
                let d = DUPLICATE_OFFSET * step as f64;
                v = Vector2::new(
                    if p.x + d <= 1.0 { p.x + d } else { p.x - d },
                    if p.y + d <= 1.0 { p.y + d } else { p.y - d },
                );
            }
            v
        })
        .collect()
}

/// One Lloyd step: move every site to the area centroid of its clipped cell.
pub fn lloyd_step(points: &[Uv]) -> Vec<Uv> {
    if points.is_empty() {
        return Vec::new();
    }
    let sites = separate_duplicates(points);
    let buckets = Buckets::new(&sites);
    (0..sites.len())
        .map(|k| {
            let (area, c) = area_centroid(&clipped_cell(k, &sites, &buckets));
            let c = if area > 0.0 { c } else { sites[k] };
            Uv::new(c.x.clamp(0.0, 1.0), c.y.clamp(0.0, 1.0))
        })
        .collect()
}

pub fn lloyd_relax(points: &[Uv], iterations: usize) -> Vec<Uv> {
    let mut pts = points.to_vec();
    for _ in 0..iterations {
        pts = lloyd_step(&pts);
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_site_moves_to_center() {
        assert_eq!(lloyd_relax(&[Uv::new(0.1, 0.9)], 1), vec![Uv::new(0.5, 0.5)]);
    }

    #[test]
    fn mirror_symmetry_is_preserved() {
        let mut pts = vec![Uv::new(0.2, 0.3), Uv::new(0.8, 0.3)];
        for _ in 0..5 {
            pts = lloyd_step(&pts);
            assert!((pts[0].x + pts[1].x - 1.0).abs() < 1e-12);
            assert!((pts[0].y - pts[1].y).abs() < 1e-12);
        }
        assert!((pts[0] - Uv::new(0.25, 0.5)).norm() < 1e-9);
    }

    #[test]
    fn cells_tile_the_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Uv> = (0..300).map(|_| Uv::new(rng.gen(), rng.gen())).collect();
        let sites = separate_duplicates(&pts);
        let buckets = Buckets::new(&sites);
        let total: f64 = (0..sites.len()).map(|k| area_centroid(&clipped_cell(k, &sites, &buckets)).0).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ring_search_matches_full_clipping() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<Uv> = (0..200).map(|_| Uv::new(rng.gen::<f64>().powi(3), rng.gen())).collect();
        let sites = separate_duplicates(&pts);
        let buckets = Buckets::new(&sites);
        for k in 0..sites.len() {
            let mut full: Polygon =
                vec![Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.0), Vector2::new(1.0, 1.0), Vector2::new(0.0, 1.0)];
            for (o, s) in sites.iter().enumerate() {
                if o != k {
                    full = clip_bisector(&full, sites[k], *s);
                }
            }
            let (a, c) = area_centroid(&full);
            let (b, d) = area_centroid(&clipped_cell(k, &sites, &buckets));
            assert!((a - b).abs() < 1e-14 && (c - d).norm() < 1e-12);
        }
    }

    #[test]
    fn duplicates_get_separate_cells() {
        let pts = vec![Uv::new(0.5, 0.5), Uv::new(0.5, 0.5), Uv::new(1.0, 1.0), Uv::new(1.0, 1.0)];
        let out = lloyd_step(&pts);
        assert_eq!(out.len(), 4);
        assert!((out[0] - out[1]).norm() > 0.01);
        assert!(out.iter().all(|p| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y)));
    }
}
