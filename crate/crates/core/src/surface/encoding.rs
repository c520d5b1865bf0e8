//! Bilinear feature-grid lookups and the sinusoidal positional encoding.

use std::f64::consts::PI;

use crate::atlas::Uv;
use crate::error::{DrapeError, Result};
use crate::real::Real;

const DOMAIN_SLACK: f64 = 1e-12;

/// Clamp a point into [0,1]^2, rejecting anything further out than round-off.
pub fn check_domain(p: &Uv) -> Result<(f64, f64)> {
    let inside = |x: f64| x >= -DOMAIN_SLACK && x <= 1.0 + DOMAIN_SLACK;
    if !inside(p.x) || !inside(p.y) {
        return Err(DrapeError::OutOfDomain { u: p.x, v: p.y });
    }
    Ok((p.x.clamp(0.0, 1.0), p.y.clamp(0.0, 1.0)))
}

/// The four grid nodes touched by a bilinear lookup and their weights.
///
/// Node `(i, j)` sits at `u = i / (R-1)`, `v = j / (R-1)`; its flat index is
/// `i * R + j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridTap {
    pub nodes: [usize; 4],
    pub weights: [f64; 4],
}

impl GridTap {
    pub fn new(resolution: usize, u: f64, v: f64) -> Self {
        let last = (resolution - 1) as f64;
        let (x, y) = (u * last, v * last);
        // upper boundary stays in the last cell with a unit weight on node R-1
        let i0 = (x.floor() as usize).min(resolution - 2);
        let j0 = (y.floor() as usize).min(resolution - 2);
        let (fx, fy) = (x - i0 as f64, y - j0 as f64);
        let base = i0 * resolution + j0;
        Self {
            nodes: [base, base + resolution, base + 1, base + resolution + 1],
            weights: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
        }
    }
}

/// One square feature grid over [0,1]^2.
#[derive(Debug, Clone, Copy)]
pub struct GridLayer<'a, T> {
    pub resolution: usize,
    pub feature_dim: usize,
    /// `R * R * F` values, node-major with features innermost.
    pub features: &'a [T],
}

impl<'a, T: Real> GridLayer<'a, T> {
    pub fn node(&self, i: usize, j: usize) -> &'a [T] {
        let at = (i * self.resolution + j) * self.feature_dim;
        &self.features[at..at + self.feature_dim]
    }

    pub fn interpolate_into(&self, tap: &GridTap, out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (&node, &w) in tap.nodes.iter().zip(&tap.weights) {
            let w = T::of(w);
            let f = &self.features[node * self.feature_dim..(node + 1) * self.feature_dim];
            for (o, &x) in out.iter_mut().zip(f) {
                *o += w * x;
            }
        }
    }

    /// Bilinearly interpolated feature vector at `p`.
    pub fn bilinear_features(&self, p: &Uv) -> Result<Vec<T>> {
        let (u, v) = check_domain(p)?;
        let tap = GridTap::new(self.resolution, u, v);
        let mut out = vec![T::zero(); self.feature_dim];
        self.interpolate_into(&tap, &mut out);
        Ok(out)
    }
}

/// `(u, v, sin(2^k pi u), cos(2^k pi u), sin(2^k pi v), cos(2^k pi v), ...)`.
pub fn positional_encode(p: &Uv, num_frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 + 4 * num_frequencies);
    out.push(p.x);
    out.push(p.y);
    for k in 0..num_frequencies {
        let w = (1u64 << k) as f64 * PI;
        out.extend([(w * p.x).sin(), (w * p.x).cos(), (w * p.y).sin(), (w * p.y).cos()]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(resolution: usize, f: usize, seed: u64) -> Vec<f64> {
        (0..resolution * resolution * f)
            .map(|k| ((k as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0 - 0.5)
            .collect()
    }

    #[test]
    fn nodes_are_reproduced() {
        let features = grid(5, 3, 1);
        let layer = GridLayer { resolution: 5, feature_dim: 3, features: &features };
        for i in 0..5 {
            for j in 0..5 {
                let p = Uv::new(i as f64 / 4.0, j as f64 / 4.0);
                assert_eq!(layer.bilinear_features(&p).unwrap(), layer.node(i, j).to_vec());
            }
        }
    }

    #[test]
    fn cell_center_is_corner_mean() {
        let features = grid(4, 2, 9);
        let layer = GridLayer { resolution: 4, feature_dim: 2, features: &features };
        let got = layer.bilinear_features(&Uv::new(1.5 / 3.0, 0.5 / 3.0)).unwrap();
        for f in 0..2 {
            let mean = (layer.node(1, 0)[f] + layer.node(2, 0)[f] + layer.node(1, 1)[f] + layer.node(2, 1)[f]) / 4.0;
            assert!((got[f] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let features = grid(3, 1, 0);
        let layer = GridLayer { resolution: 3, feature_dim: 1, features: &features };
        assert!(layer.bilinear_features(&Uv::new(1.0 + 1e-9, 0.5)).is_err());
        assert!(layer.bilinear_features(&Uv::new(1.0 + 1e-13, 0.5)).is_ok());
    }

    #[test]
    fn positional_examples() {
        assert_eq!(positional_encode(&Uv::new(0.3, 0.8), 0), vec![0.3, 0.8]);
        let enc = positional_encode(&Uv::new(0.0, 0.0), 3);
        for k in 0..3 {
            assert_eq!(enc[2 + 4 * k], 0.0);
            assert_eq!(enc[3 + 4 * k], 1.0);
            assert_eq!(enc[4 + 4 * k], 0.0);
            assert_eq!(enc[5 + 4 * k], 1.0);
        }
        assert_eq!(positional_encode(&Uv::new(0.1, 0.2), 4).len(), 18);
    }

    proptest! {
        #[test]
        fn weights_partition_unity(r in 2usize..40, u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
            let tap = GridTap::new(r, u, v);
            let s: f64 = tap.weights.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(tap.weights.iter().all(|&w| w >= -1e-15));
            prop_assert!(tap.nodes.iter().all(|&n| n < r * r));
        }

        #[test]
        fn constant_grid_is_constant(r in 2usize..20, c in -5.0f64..5.0, u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
            let features = vec![c; r * r * 2];
            let layer = GridLayer { resolution: r, feature_dim: 2, features: &features };
            for x in layer.bilinear_features(&Uv::new(u, v)).unwrap() {
                prop_assert!((x - c).abs() < 1e-12);
            }
        }
    }
}
