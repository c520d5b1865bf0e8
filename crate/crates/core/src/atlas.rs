//! Garment rest mesh, its uv parametrization, and the rest-position atlas.
//!
//! Any uv point covered by a uv triangle ("valid" point) has a rest position
//! obtained by barycentric interpolation of the triangle's 3D vertices. The
//! [`RestAtlas`] rasterizes that map once per garment.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{Point2, Point3, Vector3};
use rayon::prelude::*;

use crate::error::{DrapeError, Result};

/// A point in uv space.
pub type Uv = Point2<f64>;

/// Containment tolerance on barycentric coordinates.
pub const INSIDE_TOLERANCE: f64 = -1e-9;
/// Triangles with |signed area| at or below this are rejected.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarycentricCoords {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl BarycentricCoords {
    pub fn is_inside(&self) -> bool {
        self.lambda1 >= INSIDE_TOLERANCE
            && self.lambda2 >= INSIDE_TOLERANCE
            && self.lambda3 >= INSIDE_TOLERANCE
    }

    /// Linear blend of the corner values; a coordinate shared by all three
    /// corners is returned exactly, so flat regions stay flat.
    pub fn interpolate(&self, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Point3<f64> {
        Point3::from(Vector3::from_fn(|d, _| {
            if a[d] == b[d] && b[d] == c[d] {
                a[d]
            } else {
                a[d] * self.lambda1 + b[d] * self.lambda2 + c[d] * self.lambda3
            }
        }))
    }
}

pub fn signed_area(a: &Uv, b: &Uv, c: &Uv) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

/// Barycentric coordinates of `p` with respect to triangle `(a, b, c)`.
pub fn barycentric_coords(p: &Uv, a: &Uv, b: &Uv, c: &Uv) -> Result<BarycentricCoords> {
    let area = signed_area(a, b, c);
    if area.abs() <= DEGENERATE_AREA {
        return Err(DrapeError::DegenerateTriangle { area });
    }
    let inv = 1.0 / (2.0 * area);
    let l2 = ((p.x - a.x) * (c.y - a.y) - (c.x - a.x) * (p.y - a.y)) * inv;
    let l3 = ((b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)) * inv;
    Ok(BarycentricCoords { lambda1: 1.0 - l2 - l3, lambda2: l2, lambda3: l3 })
}

/// Per-triangle data cached for fast point location.
#[derive(Debug, Clone)]
struct UvTriangle {
    a: Uv,
    ab: [f64; 2],
    ac: [f64; 2],
    inv_det: f64,
}

impl UvTriangle {
    fn new(a: Uv, b: Uv, c: Uv) -> Self {
        let ab = [b.x - a.x, b.y - a.y];
        let ac = [c.x - a.x, c.y - a.y];
        let det = ab[0] * ac[1] - ac[0] * ab[1];
        Self { a, ab, ac, inv_det: 1.0 / det }
    }

    #[inline]
    fn coords(&self, p: &Uv) -> BarycentricCoords {
        let dx = p.x - self.a.x;
        let dy = p.y - self.a.y;
        let l2 = (dx * self.ac[1] - self.ac[0] * dy) * self.inv_det;
        let l3 = (self.ab[0] * dy - dx * self.ab[1]) * self.inv_det;
        BarycentricCoords { lambda1: 1.0 - l2 - l3, lambda2: l2, lambda3: l3 }
    }
}

/// Uniform bucket grid over [0,1]^2 listing candidate triangles per bucket
/// in ascending index order.
#[derive(Debug, Clone)]
struct TriangleLocator {
    side: usize,
    buckets: Vec<Vec<u32>>,
}

impl TriangleLocator {
    fn build(uvs: &[Uv], triangles: &[[usize; 3]]) -> Self {
        let side = ((triangles.len() as f64).sqrt().ceil() as usize).clamp(1, 512);
        let mut buckets = vec![Vec::new(); side * side];
        let pad = 1e-9;
        for (t, tri) in triangles.iter().enumerate() {
            let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
            for &v in tri {
                lo[0] = lo[0].min(uvs[v].x);
                lo[1] = lo[1].min(uvs[v].y);
                hi[0] = hi[0].max(uvs[v].x);
                hi[1] = hi[1].max(uvs[v].y);
            }
            let (c0, c1) = (Self::cell(side, lo[0] - pad), Self::cell(side, hi[0] + pad));
            let (r0, r1) = (Self::cell(side, lo[1] - pad), Self::cell(side, hi[1] + pad));
            for r in r0..=r1 {
                for c in c0..=c1 {
                    buckets[r * side + c].push(t as u32);
                }
            }
        }
        Self { side, buckets }
    }

    #[inline]
    fn cell(side: usize, x: f64) -> usize {
        ((x * side as f64).floor().max(0.0) as usize).min(side - 1)
    }

    #[inline]
    fn candidates(&self, p: &Uv) -> &[u32] {
        let c = Self::cell(self.side, p.x);
        let r = Self::cell(self.side, p.y);
        &self.buckets[r * self.side + c]
    }
}

/// The garment in its rest pose together with its uv layout.
///
/// 3D vertices and uv coordinates share one index space.
#[derive(Debug, Clone)]
pub struct GarmentRestMesh {
    pub name: String,
    pub vertices: Vec<Point3<f64>>,
    pub uvs: Vec<Uv>,
    pub triangles: Vec<[usize; 3]>,
    uv_triangles: Vec<UvTriangle>,
    locator: TriangleLocator,
}

impl GarmentRestMesh {
    pub fn new(
        name: impl Into<String>,
        vertices: Vec<Point3<f64>>,
        uvs: Vec<Uv>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<Self> {
        if vertices.len() != uvs.len() {
            return Err(DrapeError::InconsistentDims(format!(
                "{} vertices but {} uv coordinates",
                vertices.len(),
                uvs.len()
            )));
        }
        if triangles.is_empty() {
            return Err(DrapeError::DegenerateMesh("garment has no triangles".into()));
        }
        for (i, uv) in uvs.iter().enumerate() {
            if !(0.0..=1.0).contains(&uv.x) || !(0.0..=1.0).contains(&uv.y) {
                return Err(DrapeError::OutOfDomain { u: uv.x, v: uv.y })
                    .map_err(|e| DrapeError::Parse(format!("uv {i}: {e}")));
            }
        }
        let mut uv_triangles = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(DrapeError::InconsistentDims(format!(
                    "triangle {t} references a vertex out of range"
                )));
            }
            let (a, b, c) = (uvs[tri[0]], uvs[tri[1]], uvs[tri[2]]);
            let area = signed_area(&a, &b, &c);
            if area.abs() <= DEGENERATE_AREA {
                return Err(DrapeError::DegenerateTriangle { area });
            }
            uv_triangles.push(UvTriangle::new(a, b, c));
        }
        let locator = TriangleLocator::build(&uvs, &triangles);
        let mesh = Self { name: name.into(), vertices, uvs, triangles, uv_triangles, locator };
        if let Some((s, t)) = mesh.find_overlap() {
            return Err(DrapeError::DegenerateMesh(format!(
                "uv triangles {s} and {t} overlap"
            )));
        }
        Ok(mesh)
    }

    /// First pair of uv triangles whose interiors intersect, if any.
    fn find_overlap(&self) -> Option<(usize, usize)> {
        for bucket in &self.locator.buckets {
            for (k, &s) in bucket.iter().enumerate() {
                for &t in &bucket[k + 1..] {
                    if self.interiors_overlap(s as usize, t as usize) {
                        return Some((s as usize, t as usize));
                    }
                }
            }
        }
        None
    }

    fn interiors_overlap(&self, s: usize, t: usize) -> bool {
        let ps: Vec<Uv> = self.triangles[s].iter().map(|&v| self.uvs[v]).collect();
        let pt: Vec<Uv> = self.triangles[t].iter().map(|&v| self.uvs[v]).collect();
        // separating axis test; touching along an edge or vertex is not overlap
        for poly in [&ps, &pt] {
            for e in 0..3 {
                let (a, b) = (poly[e], poly[(e + 1) % 3]);
                let axis = [-(b.y - a.y), b.x - a.x];
                let project = |q: &[Uv]| {
                    q.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| {
                        let d = p.x * axis[0] + p.y * axis[1];
                        (lo.min(d), hi.max(d))
                    })
                };
                let (lo1, hi1) = project(&ps);
                let (lo2, hi2) = project(&pt);
                let scale = (axis[0].abs() + axis[1].abs()).max(1e-300);
                if hi1.min(hi2) - lo1.max(lo2) <= 1e-12 * scale {
                    return false;
                }
            }
        }
        true
    }

    /// Index of a triangle containing `p`; the lowest index wins ties.
    pub fn locate_triangle(&self, p: &Uv) -> Option<usize> {
        if !p.x.is_finite() || !p.y.is_finite() {
            return None;
        }
        self.locator
            .candidates(p)
            .iter()
            .map(|&t| t as usize)
            .find(|&t| self.uv_triangles[t].coords(p).is_inside())
    }

    /// Triangle index and barycentric coordinates for a valid point.
    pub fn locate(&self, p: &Uv) -> Option<(usize, BarycentricCoords)> {
        let t = self.locate_triangle(p)?;
        Some((t, self.uv_triangles[t].coords(p)))
    }

    pub fn is_valid(&self, p: &Uv) -> bool {
        self.locate_triangle(p).is_some()
    }

    pub fn rest_position(&self, p: &Uv) -> Result<Point3<f64>> {
        let (t, bary) = self.locate(p).ok_or(DrapeError::InvalidUvPoint { u: p.x, v: p.y })?;
        let [a, b, c] = self.triangles[t];
        Ok(bary.interpolate(&self.vertices[a], &self.vertices[b], &self.vertices[c]))
    }

    pub fn rest_length(&self, a: &Uv, b: &Uv) -> Result<f64> {
        let pa = self.rest_position(a)?;
        let pb = self.rest_position(b)?;
        Ok((pa - pb).norm())
    }

    /// Axis-aligned bounding box of the rest vertices.
    pub fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = Point3::new(f64::MAX, f64::MAX, f64::MAX);
        let mut hi = Point3::new(f64::MIN, f64::MIN, f64::MIN);
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Undirected edges of the triangulation, each listed once with `a < b`.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut edges: Vec<[usize; 2]> = self
            .triangles
            .iter()
            .flat_map(|t| [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]])
            .map(|[a, b]| if a < b { [a, b] } else { [b, a] })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Rasterize the rest positions at `resolution`² pixel centers.
    pub fn build_atlas(&self, resolution: usize) -> Result<RestAtlas> {
        if resolution < 2 {
            return Err(DrapeError::InconsistentDims(format!(
                "atlas resolution must be at least 2, got {resolution}"
            )));
        }
        let (lo, hi) = self.bounds();
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0_f64, f64::max);
        let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
        let offset = lo.coords;

        let rows: Vec<Vec<Option<[f64; 3]>>> = (0..resolution)
            .into_par_iter()
            .map(|row| {
                (0..resolution)
                    .map(|col| {
                        let p = RestAtlas::pixel_center(resolution, row, col);
                        self.rest_position(&p).ok().map(|x| {
                            let n = (x.coords - offset) * scale;
                            [n.x, n.y, n.z]
                        })
                    })
                    .collect()
            })
            .collect();

        let mut positions = Vec::with_capacity(resolution * resolution);
        let mut mask = Vec::with_capacity(resolution * resolution);
        for px in rows.into_iter().flatten() {
            mask.push(px.is_some());
            positions.push(px.unwrap_or([0.0; 3]));
        }
        Ok(RestAtlas { resolution, positions, mask, scale, offset })
    }
}

/// Rest positions sampled at pixel centers, normalized into [0,1]^3.
///
/// Pixel `(row, col)` has its center at `u = (col + 0.5) / R`, `v = (row + 0.5) / R`.
#[derive(Debug, Clone)]
pub struct RestAtlas {
    pub resolution: usize,
    pub positions: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
    pub scale: f64,
    pub offset: Vector3<f64>,
}

impl RestAtlas {
    pub fn pixel_center(resolution: usize, row: usize, col: usize) -> Uv {
        let r = resolution as f64;
        Uv::new((col as f64 + 0.5) / r, (row as f64 + 0.5) / r)
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.resolution + col]
    }

    /// De-normalized rest position of a valid pixel.
    pub fn position(&self, row: usize, col: usize) -> Option<Point3<f64>> {
        let i = row * self.resolution + col;
        self.mask[i].then(|| {
            let n = Vector3::from(self.positions[i]);
            Point3::from(n / self.scale + self.offset)
        })
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count() as f64 / self.mask.len() as f64
    }

    /// Debug dump: 16-bit RGBA PNG (alpha = mask) plus a side-car text file
    /// holding the de-normalization constants.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let r = self.resolution as u32;
        let mut img = image::ImageBuffer::<image::Rgba<u16>, Vec<u16>>::new(r, r);
        for row in 0..self.resolution {
            for col in 0..self.resolution {
                let i = row * self.resolution + col;
                let q = |x: f64| (x.clamp(0.0, 1.0) * 65535.0).round() as u16;
                let [x, y, z] = self.positions[i];
                let a = if self.mask[i] { u16::MAX } else { 0 };
                img.put_pixel(col as u32, row as u32, image::Rgba([q(x), q(y), q(z), a]));
            }
        }
        img.save(path).map_err(|e| DrapeError::Io(std::io::Error::other(e)))?;
        let mut side = fs::File::create(path.with_extension("txt"))?;
        writeln!(side, "resolution {}", self.resolution)?;
        writeln!(side, "scale {:.17e}", self.scale)?;
        writeln!(
            side,
            "offset {:.17e} {:.17e} {:.17e}",
            self.offset.x, self.offset.y, self.offset.z
        )?;
        writeln!(side, "valid_fraction {:.6}", self.valid_fraction())?;
        Ok(())
    }
}
