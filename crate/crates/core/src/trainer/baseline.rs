//! Baselines that evaluate the losses on the garment's own mesh connectivity.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use ndarray::Array2;

use crate::atlas::GarmentRestMesh;
use crate::collider::ColliderMesh;
use crate::error::{DrapeError, Result};
use crate::losses::{
    collision_term, gravity_energy, normal_pair_term, strain_absolute_term, strain_ratio_term, LossBreakdown,
    LossSettings, StrainMode,
};
use crate::optim::Optimizer;
use crate::surface::GradientBuffer;

use super::{EpochRecord, TrainConfig, TrainState};

/// Edges with rest lengths and pairs of triangles sharing an edge.
#[derive(Debug, Clone)]
pub struct MeshTopology {
    pub edges: Vec<[usize; 2]>,
    pub rest_lengths: Vec<f64>,
    pub triangles: Vec<[usize; 3]>,
    pub face_pairs: Vec<(usize, usize)>,
}

impl MeshTopology {
    pub fn new(mesh: &GarmentRestMesh) -> Result<Self> {
        let edges = mesh.edges();
        let mut rest_lengths = Vec::with_capacity(edges.len());
        for (k, &[i, j]) in edges.iter().enumerate() {
            let l = (mesh.vertices[j] - mesh.vertices[i]).norm();
            if l <= 0.0 {
                return Err(DrapeError::ZeroRestLength { edge: k });
            }
            rest_lengths.push(l);
        }
        let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                by_edge.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }
        let mut face_pairs: Vec<(usize, usize)> = by_edge
            .values()
            .filter(|f| f.len() == 2)
            .map(|f| (f[0].min(f[1]), f[0].max(f[1])))
            .collect();
        face_pairs.sort_unstable();
        Ok(Self { edges, rest_lengths, triangles: mesh.triangles.clone(), face_pairs })
    }
}

/// Loss terms on mesh connectivity and the gradient of the weighted total
/// w.r.t. every vertex position.
pub fn mesh_losses(
    positions: &[Point3<f64>],
    topo: &MeshTopology,
    collider: Option<&ColliderMesh>,
    settings: &LossSettings,
) -> (LossBreakdown, Vec<Vector3<f64>>) {
    let w = &settings.weights;
    let consts = &settings.consts;
    let mut grad = vec![Vector3::zeros(); positions.len()];

    let mut strain = 0.0;
    for (&[i, j], &rest) in topo.edges.iter().zip(&topo.rest_lengths) {
        let e = positions[j] - positions[i];
        let (v, g) = match settings.strain_mode {
            StrainMode::Ratio => strain_ratio_term(&e, rest),
            StrainMode::Absolute => strain_absolute_term(&e, rest),
        };
        strain += v;
        grad[j] += g * w.strain;
        grad[i] -= g * w.strain;
    }

    let mut bend = 0.0;
    let corners = |t: usize| topo.triangles[t].map(|k| positions[k]);
    for &(a, b) in &topo.face_pairs {
        if let Some((v, ga, gb)) = normal_pair_term(corners(a), corners(b)) {
            bend += v;
            for t in 0..3 {
                grad[topo.triangles[a][t]] += ga[t] * w.bend;
                grad[topo.triangles[b][t]] += gb[t] * w.bend;
            }
        }
    }

    let mut gravity = 0.0;
    let g_grav = consts.axis() * (consts.mass_per_point * consts.gravity * w.gravity);
    let mut collision = 0.0;
    for (x, g) in positions.iter().zip(grad.iter_mut()) {
        gravity += gravity_energy(x, consts);
        *g += g_grav;
        if let Some(col) = collider {
            let (v, gc) = collision_term(x, col, consts.collision_epsilon);
            collision += v;
            *g += gc * w.collision;
        }
    }
    (LossBreakdown::new(strain, bend, gravity, collision, w), grad)
}

fn record(epoch: usize, b: &LossBreakdown, start: std::time::Instant) -> EpochRecord {
    EpochRecord {
        epoch,
        strain: b.strain,
        bend: b.bend,
        gravity: b.gravity,
        collision: b.collision,
        total: b.weighted_total,
        min_spacing: f64::NAN,
        epoch_ms: start.elapsed().as_secs_f64() * 1e3,
        points: 0,
        skipped: 0,
    }
}

fn check_finite(epoch: usize, b: &LossBreakdown, grads_finite: bool) -> Result<()> {
    if b.weighted_total.is_finite() && grads_finite {
        Ok(())
    } else {
        Err(DrapeError::NonFiniteLoss { epoch, detail: format!("{b:?}") })
    }
}

/// Direct optimization of the garment's vertex positions.
#[derive(Debug, Clone)]
pub struct VertexBaseline {
    pub positions: Vec<Point3<f64>>,
    pub topology: MeshTopology,
    pub optimizer: Optimizer,
    pub history: Vec<EpochRecord>,
}

impl VertexBaseline {
    pub fn new(mesh: &GarmentRestMesh, config: &TrainConfig) -> Result<Self> {
        let topology = MeshTopology::new(mesh)?;
        let n = 3 * mesh.vertices.len();
        Ok(Self {
            positions: mesh.vertices.clone(),
            topology,
            optimizer: Optimizer::new(config.optimizer, config.learning_rate, n),
            history: Vec::new(),
        })
    }

    pub fn free_variables(&self) -> usize {
        3 * self.positions.len()
    }

    pub fn step(&mut self, collider: Option<&ColliderMesh>, settings: &LossSettings) -> Result<EpochRecord> {
        let start = std::time::Instant::now();
        let epoch = self.history.len();
        let (b, grad) = mesh_losses(&self.positions, &self.topology, collider, settings);
        let flat_grad: Vec<f64> = grad.iter().flat_map(|g| [g.x, g.y, g.z]).collect();
        check_finite(epoch, &b, flat_grad.iter().all(|g| g.is_finite()))?;
        let mut flat: Vec<f64> = self.positions.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        self.optimizer.step(&mut flat, &flat_grad)?;
        for (p, c) in self.positions.iter_mut().zip(flat.chunks_exact(3)) {
            *p = Point3::new(c[0], c[1], c[2]);
        }
        let r = record(epoch, &b, start);
        self.history.push(r);
        Ok(r)
    }
}

/// The neural surface queried only at the garment's vertex UVs.
pub fn neural_mesh_step(
    state: &mut TrainState,
    topology: &MeshTopology,
    mesh: &GarmentRestMesh,
    collider: Option<&ColliderMesh>,
    settings: &LossSettings,
) -> Result<EpochRecord> {
    let start = std::time::Instant::now();
    let epoch = state.epoch;
    let tape = state.model.forward(&mesh.uvs)?;
    let positions: Vec<Point3<f64>> = mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let d = tape.displacement(k);
            x + Vector3::new(d.x as f64, d.y as f64, d.z as f64)
        })
        .collect();
    let (b, grad) = mesh_losses(&positions, topology, collider, settings);
    let mut upstream = Array2::<f32>::zeros((positions.len(), 3));
    for (k, g) in grad.iter().enumerate() {
        for d in 0..3 {
            upstream[[k, d]] = g[d] as f32;
        }
    }
    let mut grads = GradientBuffer::zeros_like(&state.model);
    state.model.backward(&tape, upstream.view(), &mut grads)?;
    check_finite(epoch, &b, grads.is_finite())?;
    state.optimizer.step(state.model.params_mut(), grads.values())?;
    let r = record(epoch, &b, start);
    state.history.push(r);
    state.epoch += 1;
    Ok(r)
}

/// Result of [`mesh_connectivity_baseline`].
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub vertex: VertexBaseline,
    pub neural: TrainState,
}

impl BaselineRun {
    pub fn vertex_free_variables(&self) -> usize {
        self.vertex.free_variables()
    }

    pub fn neural_parameters(&self) -> usize {
        self.neural.model.param_count()
    }
}

/// Run both mesh-connectivity baselines for `config.epochs` epochs.
pub fn mesh_connectivity_baseline(
    mesh: &GarmentRestMesh,
    collider: Option<&ColliderMesh>,
    config: &TrainConfig,
) -> Result<BaselineRun> {
    config.validate()?;
    let settings = config.loss_settings();
    let mut vertex = VertexBaseline::new(mesh, config)?;
    let mut neural = TrainState::new(config)?;
    for _ in 0..config.epochs {
        vertex.step(collider, &settings)?;
        neural_mesh_step(&mut neural, &vertex.topology, mesh, collider, &settings)?;
    }
    Ok(BaselineRun { vertex, neural })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::PhysicsConstants;
    use crate::scene::{flat_square, icosphere};
    use crate::surface::ModelConfig;

    #[test]
    fn free_variable_counts() {
        let mesh = flat_square(128, 1.0, Point3::origin()).unwrap();
        let config = TrainConfig { epochs: 1, ..Default::default() };
        let v = VertexBaseline::new(&mesh, &config).unwrap();
        assert_eq!(v.free_variables(), 49152);
        let s = TrainState::new(&config).unwrap();
        assert_eq!(s.model.param_count(), 47369);
    }

    #[test]
    fn topology_of_a_grid() {
        let mesh = flat_square(4, 1.0, Point3::origin()).unwrap();
        let t = MeshTopology::new(&mesh).unwrap();
        // 3 * 4 horizontal + vertical, 9 diagonals
        assert_eq!(t.edges.len(), 2 * 3 * 4 + 9);
        // every interior edge joins two faces
        assert_eq!(t.face_pairs.len(), t.edges.len() - 4 * 3);
    }

    #[test]
    fn rest_without_forces_is_a_fixed_point() {
        let mesh = flat_square(8, 1.0, Point3::origin()).unwrap();
        let settings = LossSettings { consts: PhysicsConstants { gravity: 0.0, ..Default::default() }, ..Default::default() };
        let config = TrainConfig { epochs: 1, ..Default::default() };
        let mut v = VertexBaseline::new(&mesh, &config).unwrap();
        let (b, grad) = mesh_losses(&v.positions, &v.topology, None, &settings);
        assert_eq!(b.weighted_total, 0.0);
        assert!(grad.iter().all(|g| *g == Vector3::zeros()));
        v.step(None, &settings).unwrap();
        assert_eq!(v.positions, mesh.vertices);
    }

    #[test]
    fn mesh_gradient_matches_finite_differences() {
        let mesh = flat_square(4, 1.0, Point3::new(-0.5, -0.5, 0.05)).unwrap();
        let ball = icosphere(Point3::origin(), 0.3, 2).unwrap();
        let settings = LossSettings::default();
        let topo = MeshTopology::new(&mesh).unwrap();
        let mut x: Vec<Point3<f64>> = mesh
            .vertices
            .iter()
            .enumerate()
            .map(|(k, p)| p + Vector3::new(0.01 * (k as f64).sin(), 0.02 * (k as f64 * 1.7).cos(), -0.04 * (k % 3) as f64))
            .collect();
        let (b, grad) = mesh_losses(&x, &topo, Some(&ball), &settings);
        assert!(b.collision > 0.0 && b.bend > 0.0 && b.strain > 0.0);
        let h = 1e-6;
        for k in 0..x.len() {
            for d in 0..3 {
                let orig = x[k][d];
                x[k][d] = orig + h;
                let up = mesh_losses(&x, &topo, Some(&ball), &settings).0.weighted_total;
                x[k][d] = orig - h;
                let down = mesh_losses(&x, &topo, Some(&ball), &settings).0.weighted_total;
                x[k][d] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - grad[k][d]).abs() <= 1e-4 * fd.abs().max(grad[k][d].abs()).max(1.0), "{k} {d}: {fd} vs {}", grad[k][d]);
            }
        }
    }

    #[test]
    fn both_baselines_lower_a_gravity_loss() {
        let mesh = flat_square(6, 1.0, Point3::origin()).unwrap();
        let config = TrainConfig {
            epochs: 20,
            model: ModelConfig::multigrid_default(),
            optimizer: crate::optim::OptimizerKind::Adam,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let run = mesh_connectivity_baseline(&mesh, None, &config).unwrap();
        let v = &run.vertex.history;
        let n = &run.neural.history;
        assert!(v.last().unwrap().total < v[0].total);
        assert!(n.last().unwrap().total < n[0].total);
        assert_eq!(n.len(), 20);
    }
}
