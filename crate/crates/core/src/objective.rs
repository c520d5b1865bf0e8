//! Batched evaluation of the summed structure losses and their parameter gradient.

use nalgebra::{Point3, Vector3};
use ndarray::Array2;
use rayon::prelude::*;

use crate::atlas::GarmentRestMesh;
use crate::collider::ColliderMesh;
use crate::error::{DrapeError, Result};
use crate::losses::{evaluate_structure, LossBreakdown, LossSettings, StructureEval};
use crate::real::Real;
use crate::structure::{rest_lengths, LocalStructure2D, LocalStructure3D};
use crate::surface::{GradientBuffer, SurfaceModel};

/// Rows per structure in the forward batch: six vertices and the center.
const ROWS: usize = 7;

/// The scene a model is trained against.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub mesh: &'a GarmentRestMesh,
    pub collider: Option<&'a ColliderMesh>,
    pub settings: LossSettings,
}

/// Structures placed on the current surface, in input order.
#[derive(Debug, Clone)]
pub struct LiftedBatch {
    pub structures: Vec<LocalStructure3D>,
    pub centers: Vec<Point3<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct BatchEval {
    pub per_structure: Vec<LossBreakdown>,
    /// Sum over structures.
    pub total: LossBreakdown,
    pub degenerate_pairs: usize,
}

fn to_f64<T: Real>(d: Vector3<T>) -> Vector3<f64> {
    Vector3::new(d.x.to_f64(), d.y.to_f64(), d.z.to_f64())
}

impl<'a> Problem<'a> {
    pub fn new(mesh: &'a GarmentRestMesh, collider: Option<&'a ColliderMesh>, settings: LossSettings) -> Self {
        Self { mesh, collider, settings }
    }

    fn lift_with_tape<T: Real>(
        &self,
        model: &SurfaceModel<T>,
        s2ds: &[LocalStructure2D],
    ) -> Result<(crate::surface::ForwardTape<T>, LiftedBatch)> {
        let mut points = Vec::with_capacity(s2ds.len() * ROWS);
        for s in s2ds {
            points.extend_from_slice(&s.query_points());
        }
        let mut rest = Vec::with_capacity(points.len());
        for (k, p) in points.iter().enumerate() {
            match self.mesh.rest_position(p) {
                Ok(x) => rest.push(x),
                Err(_) => {
                    let c = s2ds[k / ROWS].center;
                    return Err(DrapeError::InvalidStructure { u: c.x, v: c.y });
                }
            }
        }
        let tape = model.forward(&points)?;
        let mut structures = Vec::with_capacity(s2ds.len());
        let mut centers = Vec::with_capacity(s2ds.len());
        for (b, s) in s2ds.iter().enumerate() {
            let row = |k: usize| rest[b * ROWS + k] + to_f64(tape.displacement(b * ROWS + k));
            let positions = [row(0), row(1), row(2), row(3), row(4), row(5)];
            structures.push(LocalStructure3D { positions, rest_lengths: rest_lengths(self.mesh, s)? });
            centers.push(row(6));
        }
        Ok((tape, LiftedBatch { structures, centers }))
    }

    pub fn lift<T: Real>(&self, model: &SurfaceModel<T>, s2ds: &[LocalStructure2D]) -> Result<LiftedBatch> {
        Ok(self.lift_with_tape(model, s2ds)?.1)
    }

    /// Per-structure losses and their sum; with `grads`, also accumulate the
    /// gradient of the summed weighted total.
    pub fn evaluate<T: Real>(
        &self,
        model: &SurfaceModel<T>,
        s2ds: &[LocalStructure2D],
        grads: Option<&mut GradientBuffer<T>>,
    ) -> Result<BatchEval> {
        let (tape, lifted) = self.lift_with_tape(model, s2ds)?;
        let mut out = BatchEval { per_structure: Vec::with_capacity(s2ds.len()), ..Default::default() };
        let mut upstream = grads.is_some().then(|| Array2::<T>::zeros((s2ds.len() * ROWS, 3)));
        // evaluated in parallel, reduced serially in input order
        let evals: Vec<StructureEval> = lifted
            .structures
            .par_iter()
            .zip(&lifted.centers)
            .map(|(s3d, center)| evaluate_structure(s3d, center, self.collider, &self.settings))
            .collect::<Result<_>>()?;
        for (b, eval) in evals.iter().enumerate() {
            out.total += eval.breakdown;
            out.per_structure.push(eval.breakdown);
            out.degenerate_pairs += eval.degenerate_pairs;
            if let Some(up) = upstream.as_mut() {
                for (k, g) in eval.grad_vertices.iter().chain(std::iter::once(&eval.grad_center)).enumerate() {
                    for d in 0..3 {
                        up[[b * ROWS + k, d]] = T::of(g[d]);
                    }
                }
            }
        }
        if let (Some(grads), Some(up)) = (grads, upstream) {
            model.backward(&tape, up.view(), grads)?;
        }
        Ok(out)
    }
}
