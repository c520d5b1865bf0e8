//! Fixed-grid evaluation used to compare trained models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atlas::Uv;
use crate::error::{DrapeError, Result};
use crate::losses::LossBreakdown;
use crate::objective::Problem;
use crate::real::Real;
use crate::structure::{build_structure_2d, random_theta, LocalStructure2D};
use crate::surface::SurfaceModel;

const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseReport {
    /// Per-structure loss averaged over the valid cells.
    pub mean: LossBreakdown,
    /// Mean over structures and edges of `| |e'| / L - 1 |`.
    pub mean_abs_strain: f64,
    /// Share of valid cells whose center lies behind the collider (`d . n < 0`).
    pub penetration_fraction: f64,
    pub valid_cells: usize,
    pub resolution: usize,
}

/// Evaluate at the centers of a `resolution x resolution` grid over the UV
/// square. Rotations come from `seed`, one per cell in row-major order, so two
/// models scored with the same seed see the same structures.
pub fn evaluate_dense<T: Real>(
    model: &SurfaceModel<T>,
    problem: &Problem<'_>,
    resolution: usize,
    seed: u64,
) -> Result<DenseReport> {
    if resolution < 2 {
        return Err(DrapeError::Config(vec![format!("dense resolution must be >= 2 (got {resolution})")]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut structures: Vec<LocalStructure2D> = Vec::new();
    for i in 0..resolution {
        for j in 0..resolution {
            let p = Uv::new((j as f64 + 0.5) / resolution as f64, (i as f64 + 0.5) / resolution as f64);
            let s = build_structure_2d(p, problem.settings.side, random_theta(&mut rng));
            if s.is_valid(problem.mesh) {
                structures.push(s);
            }
        }
    }
    if structures.is_empty() {
        return Err(DrapeError::AllPointsInvalid);
    }
    let mut total = LossBreakdown::default();
    let mut strain_abs = 0.0;
    let mut strain_edges = 0usize;
    let mut penetrating = 0usize;
    for chunk in structures.chunks(CHUNK) {
        total += problem.evaluate(model, chunk, None)?.total;
        let lifted = problem.lift(model, chunk)?;
        for s3d in &lifted.structures {
            for &k in problem.settings.edge_set.indices() {
                strain_abs += (s3d.edge_vector(k).norm() / s3d.rest_lengths[k] - 1.0).abs();
                strain_edges += 1;
            }
        }
        if let Some(col) = problem.collider {
            penetrating += lifted.centers.iter().filter(|c| col.normal_offset(c) < 0.0).count();
        }
    }
    let n = structures.len();
    Ok(DenseReport {
        mean: total.scaled(1.0 / n as f64),
        mean_abs_strain: strain_abs / strain_edges as f64,
        penetration_fraction: penetrating as f64 / n as f64,
        valid_cells: n,
        resolution,
    })
}
