//! Physics losses on lifted structures, with gradients w.r.t. the 3D positions.

use std::ops::{Add, AddAssign};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::atlas::{GarmentRestMesh, Uv};
use crate::collider::ColliderMesh;
use crate::error::{DrapeError, Result};
use crate::real::Real;
use crate::structure::{build_structure_2d, lift_structure, EdgeSet, LocalStructure3D, ALL_EDGES, FACES, FACE_PAIRS};
use crate::surface::SurfaceModel;

/// Faces at or below this area (m²) are skipped by the bend term.
pub const DEGENERATE_FACE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub strain: f64,
    pub bend: f64,
    pub gravity: f64,
    pub collision: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { strain: 0.005, bend: 0.0005, gravity: 2.0, collision: 1e7 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self { strain: 0.0, bend: 0.0, gravity: 0.0, collision: 0.0 }
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        for (name, w) in [("strain", self.strain), ("bend", self.bend), ("gravity", self.gravity), ("collision", self.collision)] {
            if !w.is_finite() || w < 0.0 {
                errors.push(format!("weights.{name} must be finite and >= 0 (got {w})"));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConstants {
    pub mass_per_point: f64,
    pub gravity: f64,
    pub gravity_axis: [f64; 3],
    pub collision_epsilon: f64,
}

impl Default for PhysicsConstants {
    fn default() -> Self {
        Self { mass_per_point: 1.0, gravity: 9.81, gravity_axis: [0.0, 0.0, 1.0], collision_epsilon: 1e-3 }
    }
}

impl PhysicsConstants {
    pub fn axis(&self) -> Vector3<f64> {
        Vector3::from(self.gravity_axis)
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        if !(self.mass_per_point.is_finite() && self.mass_per_point >= 0.0) {
            errors.push(format!("physics.mass_per_point must be >= 0 (got {})", self.mass_per_point));
        }
        if !(self.gravity.is_finite() && self.gravity >= 0.0) {
            errors.push(format!("physics.gravity must be >= 0 (got {})", self.gravity));
        }
        if (self.axis().norm() - 1.0).abs() > 1e-9 {
            errors.push(format!("physics.gravity_axis must have unit length (got {:?})", self.gravity_axis));
        }
        if !(self.collision_epsilon.is_finite() && self.collision_epsilon >= 0.0) {
            errors.push(format!("physics.collision_epsilon must be >= 0 (got {})", self.collision_epsilon));
        }
    }
}

/// Relative (default) or absolute edge-length strain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrainMode {
    #[default]
    Ratio,
    Absolute,
}

/// Per-term values and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub strain: f64,
    pub bend: f64,
    pub gravity: f64,
    pub collision: f64,
    pub weighted_total: f64,
}

impl LossBreakdown {
    pub fn new(strain: f64, bend: f64, gravity: f64, collision: f64, w: &LossWeights) -> Self {
        let weighted_total = w.strain * strain + w.bend * bend + w.gravity * gravity + w.collision * collision;
        Self { strain, bend, gravity, collision, weighted_total }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            strain: self.strain * k,
            bend: self.bend * k,
            gravity: self.gravity * k,
            collision: self.collision * k,
            weighted_total: self.weighted_total * k,
        }
    }

    /// Weighted total restricted to the terms enabled in `mask`.
    pub fn masked_total(&self, w: &LossWeights, mask: &LossMask) -> f64 {
        let pick = |on: bool, x: f64| if on { x } else { 0.0 };
        pick(mask.strain, w.strain * self.strain)
            + pick(mask.bend, w.bend * self.bend)
            + pick(mask.gravity, w.gravity * self.gravity)
            + pick(mask.collision, w.collision * self.collision)
    }
}

impl Add for LossBreakdown {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            strain: self.strain + o.strain,
            bend: self.bend + o.bend,
            gravity: self.gravity + o.gravity,
            collision: self.collision + o.collision,
            weighted_total: self.weighted_total + o.weighted_total,
        }
    }
}

impl AddAssign for LossBreakdown {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Which terms count towards the sampling density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossMask {
    pub strain: bool,
    pub bend: bool,
    pub gravity: bool,
    pub collision: bool,
}

impl Default for LossMask {
    fn default() -> Self {
        Self { strain: true, bend: true, gravity: true, collision: true }
    }
}

/// Everything needed to score one structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub weights: LossWeights,
    pub consts: PhysicsConstants,
    pub edge_set: EdgeSet,
    pub strain_mode: StrainMode,
    pub side: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            consts: PhysicsConstants::default(),
            edge_set: EdgeSet::All9,
            strain_mode: StrainMode::Ratio,
            side: crate::structure::DEFAULT_SIDE,
        }
    }
}

/// `((|e'| - L) / L)^2` and its gradient w.r.t. `e'`.
pub fn strain_ratio_term(e: &Vector3<f64>, rest: f64) -> (f64, Vector3<f64>) {
    let len = e.norm();
    let r = (len - rest) / rest;
    let grad = if len > 0.0 { e * (2.0 * r / (rest * len)) } else { Vector3::zeros() };
    (r * r, grad)
}

/// `(|e'| - L)^2` and its gradient w.r.t. `e'`.
pub fn strain_absolute_term(e: &Vector3<f64>, rest: f64) -> (f64, Vector3<f64>) {
    let len = e.norm();
    let d = len - rest;
    let grad = if len > 0.0 { e * (2.0 * d / len) } else { Vector3::zeros() };
    (d * d, grad)
}

fn check_rest(s3d: &LocalStructure3D, edge_set: EdgeSet) -> Result<()> {
    for &k in edge_set.indices() {
        if s3d.rest_lengths[k] <= 0.0 {
            return Err(DrapeError::ZeroRestLength { edge: k });
        }
    }
    Ok(())
}

pub fn strain_loss(s3d: &LocalStructure3D, edge_set: EdgeSet) -> Result<f64> {
    check_rest(s3d, edge_set)?;
    Ok(edge_set.indices().iter().map(|&k| strain_ratio_term(&s3d.edge_vector(k), s3d.rest_lengths[k]).0).sum())
}

pub fn strain_loss_absolute(s3d: &LocalStructure3D, edge_set: EdgeSet) -> f64 {
    edge_set.indices().iter().map(|&k| strain_absolute_term(&s3d.edge_vector(k), s3d.rest_lengths[k]).0).sum()
}

/// `|n1 - n2|^2` for the unit normals of triangles `f1` and `f2` (corner
/// order sets orientation) and its gradient w.r.t. their corners. `None`
/// when either face has area at or below [`DEGENERATE_FACE_AREA`].
pub fn normal_pair_term(f1: [Point3<f64>; 3], f2: [Point3<f64>; 3]) -> Option<(f64, [Vector3<f64>; 3], [Vector3<f64>; 3])> {
    let cross = |f: &[Point3<f64>; 3]| {
        let (e1, e2) = (f[1] - f[0], f[2] - f[0]);
        (e1.cross(&e2), e1, e2)
    };
    let (c1, a1, b1) = cross(&f1);
    let (c2, a2, b2) = cross(&f2);
    let (l1, l2) = (c1.norm(), c2.norm());
    if 0.5 * l1 <= DEGENERATE_FACE_AREA || 0.5 * l2 <= DEGENERATE_FACE_AREA {
        return None;
    }
    let (n1, n2) = (c1 / l1, c2 / l2);
    let diff = n1 - n2;
    let corner_grads = |len: f64, n: Vector3<f64>, e1: Vector3<f64>, e2: Vector3<f64>, g: Vector3<f64>| {
        // d n / d c = (I - n n^T) / |c|
        let gc = (g - n * n.dot(&g)) / len;
        let g1 = e2.cross(&gc);
        let g2 = gc.cross(&e1);
        [-(g1 + g2), g1, g2]
    };
    Some((diff.norm_squared(), corner_grads(l1, n1, a1, b1, diff * 2.0), corner_grads(l2, n2, a2, b2, diff * -2.0)))
}

/// Sum over face pairs of `|n1 - n2|^2`, the number of skipped degenerate
/// pairs, and the gradient w.r.t. each of the six positions.
pub fn bend_with_gradient(s3d: &LocalStructure3D) -> (f64, usize, [Vector3<f64>; 6]) {
    let mut grad = [Vector3::zeros(); 6];
    let mut total = 0.0;
    let mut degenerate = 0;
    let corners = |f: [usize; 3]| f.map(|k| s3d.positions[k]);
    for &(i, j) in &FACE_PAIRS {
        match normal_pair_term(corners(FACES[i]), corners(FACES[j])) {
            Some((v, gi, gj)) => {
                total += v;
                for t in 0..3 {
                    grad[FACES[i][t]] += gi[t];
                    grad[FACES[j][t]] += gj[t];
                }
            }
            None => degenerate += 1,
        }
    }
    (total, degenerate, grad)
}

pub fn bend_loss(s3d: &LocalStructure3D) -> f64 {
    bend_with_gradient(s3d).0
}

/// `m g (x . axis)`.
pub fn gravity_energy(x: &Point3<f64>, consts: &PhysicsConstants) -> f64 {
    consts.mass_per_point * consts.gravity * x.coords.dot(&consts.axis())
}

pub fn gravity_loss<T: Real>(
    model: &SurfaceModel<T>,
    mesh: &GarmentRestMesh,
    p: &Uv,
    consts: &PhysicsConstants,
) -> Result<f64> {
    let x = model.surface_position(mesh, p)?;
    let x = Point3::new(x.x.to_f64(), x.y.to_f64(), x.z.to_f64());
    Ok(gravity_energy(&x, consts))
}

/// `min(d . n - eps, 0)^2` against the nearest collider vertex, and its
/// gradient w.r.t. `x` with the correspondence held fixed.
pub fn collision_term(x: &Point3<f64>, collider: &ColliderMesh, eps: f64) -> (f64, Vector3<f64>) {
    let (j, _) = collider.nearest_vertex(x);
    let n = collider.normals[j];
    let s = (x - collider.vertices[j]).dot(&n) - eps;
    if s < 0.0 {
        (s * s, n * (2.0 * s))
    } else {
        (0.0, Vector3::zeros())
    }
}

pub fn collision_loss(s3d: &LocalStructure3D, collider: &ColliderMesh, consts: &PhysicsConstants) -> f64 {
    s3d.positions.iter().map(|x| collision_term(x, collider, consts.collision_epsilon).0).sum()
}

/// Loss and weighted gradient of one lifted structure.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureEval {
    pub breakdown: LossBreakdown,
    pub degenerate_pairs: usize,
    /// Gradient of the weighted total w.r.t. the six vertex positions.
    pub grad_vertices: [Vector3<f64>; 6],
    /// Gradient of the weighted total w.r.t. the lifted center.
    pub grad_center: Vector3<f64>,
}

pub fn evaluate_structure(
    s3d: &LocalStructure3D,
    center: &Point3<f64>,
    collider: Option<&ColliderMesh>,
    settings: &LossSettings,
) -> Result<StructureEval> {
    let w = &settings.weights;
    check_rest(s3d, settings.edge_set)?;
    let mut grad = [Vector3::zeros(); 6];

    let mut strain = 0.0;
    for &k in settings.edge_set.indices() {
        let e = s3d.edge_vector(k);
        let (v, g) = match settings.strain_mode {
            StrainMode::Ratio => strain_ratio_term(&e, s3d.rest_lengths[k]),
            StrainMode::Absolute => strain_absolute_term(&e, s3d.rest_lengths[k]),
        };
        strain += v;
        let [i, j] = ALL_EDGES[k];
        grad[j] += g * w.strain;
        grad[i] -= g * w.strain;
    }

    let (bend, degenerate_pairs, gb) = bend_with_gradient(s3d);
    for (g, b) in grad.iter_mut().zip(gb) {
        *g += b * w.bend;
    }

    let consts = &settings.consts;
    let gravity = gravity_energy(center, consts);
    let grad_center = consts.axis() * (consts.mass_per_point * consts.gravity * w.gravity);

    let mut collision = 0.0;
    if let Some(col) = collider {
        for (x, g) in s3d.positions.iter().zip(grad.iter_mut()) {
            let (v, gc) = collision_term(x, col, consts.collision_epsilon);
            collision += v;
            *g += gc * w.collision;
        }
    }

    Ok(StructureEval {
        breakdown: LossBreakdown::new(strain, bend, gravity, collision, w),
        degenerate_pairs,
        grad_vertices: grad,
        grad_center,
    })
}

/// Build, lift and score the structure at `p` with rotation `theta`.
pub fn structure_loss<T: Real>(
    model: &SurfaceModel<T>,
    mesh: &GarmentRestMesh,
    collider: Option<&ColliderMesh>,
    p: Uv,
    theta: f64,
    settings: &LossSettings,
) -> Result<LossBreakdown> {
    let s2d = build_structure_2d(p, settings.side, theta);
    if !s2d.is_valid(mesh) {
        return Err(DrapeError::InvalidStructure { u: p.x, v: p.y });
    }
    let s3d = lift_structure(model, mesh, &s2d)?;
    let center = model.surface_position(mesh, &p)?;
    let center = Point3::new(center.x.to_f64(), center.y.to_f64(), center.z.to_f64());
    Ok(evaluate_structure(&s3d, &center, collider, settings)?.breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{flat_square, icosphere};
    use crate::structure::{build_structure_2d, rest_lengths, C, M_BC, M_CA};
    use crate::surface::ModelConfig;
    use nalgebra::{Rotation3, Translation3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat(side: f64) -> LocalStructure3D {
        let s = build_structure_2d(Uv::new(0.5, 0.5), side, 0.2);
        let positions = s.vertices.map(|v| Point3::new(v.x, v.y, 0.0));
        let mut rest = [0.0; 9];
        for (k, [i, j]) in ALL_EDGES.iter().enumerate() {
            rest[k] = (positions[*j] - positions[*i]).norm();
        }
        LocalStructure3D { positions, rest_lengths: rest }
    }

    fn jittered(seed: u64) -> LocalStructure3D {
        let mut s = flat(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut s.positions {
            *p += Vector3::new(rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03));
        }
        s
    }

    #[test]
    fn strain_examples() {
        let s = flat(0.1);
        assert_eq!(strain_loss(&s, EdgeSet::All9).unwrap(), 0.0);
        let mut doubled = s.clone();
        for p in &mut doubled.positions {
            *p = Point3::from(p.coords * 2.0);
        }
        assert!((strain_loss(&doubled, EdgeSet::All9).unwrap() - 9.0).abs() < 1e-12);
        assert!((strain_loss(&doubled, EdgeSet::Inner3).unwrap() - 3.0).abs() < 1e-12);
        let mut one = s.clone();
        one.rest_lengths[4] /= 1.1;
        assert!((strain_loss(&one, EdgeSet::All9).unwrap() - 0.01).abs() < 1e-12);
        one.rest_lengths[4] = 0.0;
        assert!(matches!(strain_loss(&one, EdgeSet::All9), Err(DrapeError::ZeroRestLength { edge: 4 })));
    }

    #[test]
    fn absolute_strain_examples() {
        let mut s = flat(0.5);
        assert_eq!(strain_loss_absolute(&s, EdgeSet::All9), 0.0);
        s.rest_lengths[0] = 0.4;
        assert!((strain_loss_absolute(&s, EdgeSet::All9) - 0.01).abs() < 1e-12);
        for seed in 0..20 {
            let s = jittered(seed);
            for k in 0..9 {
                let e = s.edge_vector(k);
                let l = s.rest_lengths[k];
                let ratio = strain_ratio_term(&e, l).0;
                let abs = strain_absolute_term(&e, l).0;
                assert!((abs - ratio * l * l).abs() < 1e-15);
            }
        }
    }

    fn fold_corner(s: &mut LocalStructure3D, corner: usize, angle: f64) {
        // rotate corner C about the inner edge M_BC -> M_CA
        let a = s.positions[M_BC];
        let axis = nalgebra::Unit::new_normalize(s.positions[M_CA] - a);
        let rot = Rotation3::from_axis_angle(&axis, angle);
        s.positions[corner] = a + rot * (s.positions[corner] - a);
    }

    #[test]
    fn bend_examples() {
        let s = flat(0.1);
        assert!(bend_loss(&s).abs() < 1e-24);
        let mut f90 = s.clone();
        fold_corner(&mut f90, C, std::f64::consts::FRAC_PI_2);
        assert!((bend_loss(&f90) - 2.0).abs() < 1e-12);
        let mut f180 = s.clone();
        fold_corner(&mut f180, C, std::f64::consts::PI);
        assert!((bend_loss(&f180) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_pairs_are_counted() {
        let mut s = flat(1e-7);
        s.positions[C] = s.positions[M_BC];
        let (v, count, _) = bend_with_gradient(&s);
        assert_eq!(v, 0.0);
        assert_eq!(count, 3);
    }

    #[test]
    fn gravity_examples() {
        let c = PhysicsConstants::default();
        assert_eq!(gravity_energy(&Point3::new(3.0, 1.0, 0.0), &c), 0.0);
        assert!((gravity_energy(&Point3::new(0.0, 0.0, 2.0), &c) - 19.62).abs() < 1e-12);
        assert!(gravity_energy(&Point3::new(0.0, 0.0, 1.9), &c) < gravity_energy(&Point3::new(0.0, 0.0, 2.0), &c));
        let mesh = flat_square(3, 1.0, Point3::new(0.0, 0.0, 2.0)).unwrap();
        let model = SurfaceModel::<f64>::init(&ModelConfig::multigrid_default(), 0).unwrap();
        assert!((gravity_loss(&model, &mesh, &Uv::new(0.2, 0.2), &c).unwrap() - 19.62).abs() < 1e-12);
    }

    #[test]
    fn collision_examples() {
        let sphere = icosphere(Point3::origin(), 1.0, 2).unwrap();
        let c = PhysicsConstants::default();
        let mut s = flat(0.1);
        for p in &mut s.positions {
            *p += Vector3::new(0.0, 0.0, 5.0);
        }
        assert_eq!(collision_loss(&s, &sphere, &c), 0.0);

        let top = sphere.vertices.iter().position(|v| (v - Point3::new(0.0, 0.0, 1.0)).norm() < 1e-12).unwrap();
        assert_eq!(sphere.nearest_vertex(&Point3::new(0.0, 0.0, 1.0)).0, top);
        let n = sphere.normals[top];
        let x = sphere.vertices[top] + n * (c.collision_epsilon - 0.01);
        let (v, _) = collision_term(&x, &sphere, c.collision_epsilon);
        assert!((v - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn collision_matches_brute_force_oracle() {
        let sphere = icosphere(Point3::new(0.1, 0.0, 0.0), 0.8, 3).unwrap();
        let c = PhysicsConstants::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mut s = flat(0.05);
            let shift = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            for p in &mut s.positions {
                *p += shift;
            }
            let mut oracle = 0.0;
            for x in &s.positions {
                let mut best = (0, f64::INFINITY);
                for (j, q) in sphere.vertices.iter().enumerate() {
                    let d = (x - q).norm();
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                let pen = (x - sphere.vertices[best.0]).dot(&sphere.normals[best.0]) - c.collision_epsilon;
                oracle += pen.min(0.0).powi(2);
            }
            assert!((collision_loss(&s, &sphere, &c) - oracle).abs() <= 1e-15 * oracle.max(1.0));
        }
    }

    #[test]
    fn structure_loss_examples() {
        let mesh = flat_square(5, 1.0, Point3::origin()).unwrap();
        let model = SurfaceModel::<f64>::init(&ModelConfig::multigrid_default(), 2).unwrap();
        let settings = LossSettings { side: 0.01, ..Default::default() };
        let far = icosphere(Point3::new(0.0, 0.0, -10.0), 1.0, 1).unwrap();
        let b = structure_loss(&model, &mesh, Some(&far), Uv::new(0.5, 0.5), 0.4, &settings).unwrap();
        assert!(b.strain.abs() < 1e-20 && b.bend.abs() < 1e-20);
        assert_eq!((b.gravity, b.collision, b.weighted_total), (0.0, 0.0, b.strain * 0.005 + b.bend * 0.0005));

        let zero = LossSettings { weights: LossWeights::zero(), ..settings };
        let lifted = flat_square(5, 1.0, Point3::new(0.0, 0.0, 3.0)).unwrap();
        let b = structure_loss(&model, &lifted, None, Uv::new(0.5, 0.5), 0.4, &zero).unwrap();
        assert_eq!(b.weighted_total, 0.0);
        assert!(b.gravity > 0.0);
    }

    #[test]
    fn structure_loss_recombines_components() {
        let mesh = flat_square(6, 1.5, Point3::new(-0.75, -0.75, 0.6)).unwrap();
        let sphere = icosphere(Point3::origin(), 0.6, 3).unwrap();
        let mut model = SurfaceModel::<f64>::init(&ModelConfig::multigrid_default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for p in model.params_mut() {
            *p += rng.gen_range(-0.05..0.05);
        }
        let settings = LossSettings { side: 0.02, ..Default::default() };
        for _ in 0..20 {
            let p = Uv::new(rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9));
            let theta = rng.gen_range(0.0..2.0);
            let b = structure_loss(&model, &mesh, Some(&sphere), p, theta, &settings).unwrap();
            let s2d = build_structure_2d(p, settings.side, theta);
            let s3d = lift_structure(&model, &mesh, &s2d).unwrap();
            assert_eq!(s3d.rest_lengths, rest_lengths(&mesh, &s2d).unwrap());
            let c = &settings.consts;
            let w = &settings.weights;
            let manual = w.strain * strain_loss(&s3d, EdgeSet::All9).unwrap()
                + w.bend * bend_loss(&s3d)
                + w.gravity * gravity_loss(&model, &mesh, &p, c).unwrap()
                + w.collision * collision_loss(&s3d, &sphere, c);
            assert!((b.weighted_total - manual).abs() <= 1e-9 * manual.abs().max(1e-300));
        }
    }

    fn fd_check(s: &LocalStructure3D, center: &Point3<f64>, collider: Option<&ColliderMesh>, settings: &LossSettings) {
        let eval = evaluate_structure(s, center, collider, settings).unwrap();
        let h = 1e-6;
        for v in 0..7 {
            for d in 0..3 {
                let total = |delta: f64| {
                    let mut s = s.clone();
                    let mut c = *center;
                    if v < 6 {
                        s.positions[v][d] += delta;
                    } else {
                        c[d] += delta;
                    }
                    evaluate_structure(&s, &c, collider, settings).unwrap().breakdown.weighted_total
                };
                let fd = (total(h) - total(-h)) / (2.0 * h);
                let an = if v < 6 { eval.grad_vertices[v][d] } else { eval.grad_center[d] };
                assert!((fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()) + 1e-7, "vertex {v} axis {d}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn position_gradients_match_finite_differences() {
        let sphere = icosphere(Point3::new(0.5, 0.5, -0.95), 1.0, 3).unwrap();
        for seed in 0..10 {
            let s = jittered(seed);
            let center = Point3::new(0.5, 0.5, 0.01 * seed as f64);
            for mode in [StrainMode::Ratio, StrainMode::Absolute] {
                let settings = LossSettings {
                    weights: LossWeights { strain: 1.0, bend: 0.7, gravity: 0.3, collision: 50.0 },
                    strain_mode: mode,
                    ..Default::default()
                };
                fd_check(&s, &center, Some(&sphere), &settings);
            }
        }
    }

    fn rigid(s: &LocalStructure3D, axis: Vector3<f64>, angle: f64, t: Vector3<f64>) -> LocalStructure3D {
        let iso = Translation3::from(t) * Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        LocalStructure3D { positions: s.positions.map(|p| iso * p), rest_lengths: s.rest_lengths }
    }

    proptest! {
        #[test]
        fn strain_and_bend_are_rigid_invariant(
            seed in 0u64..1000,
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0,
            angle in -3.0f64..3.0,
            tx in -5.0f64..5.0, ty in -5.0f64..5.0, tz in -5.0f64..5.0,
        ) {
            let s = jittered(seed);
            let r = rigid(&s, Vector3::new(ax, ay, az), angle, Vector3::new(tx, ty, tz));
            prop_assert!((strain_loss(&s, EdgeSet::All9).unwrap() - strain_loss(&r, EdgeSet::All9).unwrap()).abs() < 1e-9);
            prop_assert!((bend_loss(&s) - bend_loss(&r)).abs() < 1e-9);
        }

        #[test]
        fn losses_are_nonnegative(seed in 0u64..1000, z in -2.0f64..2.0) {
            let s = jittered(seed);
            let sphere = icosphere(Point3::new(0.5, 0.5, z), 0.5, 2).unwrap();
            let c = PhysicsConstants::default();
            prop_assert!(strain_loss(&s, EdgeSet::All9).unwrap() >= 0.0);
            prop_assert!(bend_loss(&s) >= 0.0);
            prop_assert!(collision_loss(&s, &sphere, &c) >= 0.0);
            prop_assert!(gravity_energy(&Point3::new(0.0, 0.0, z.abs()), &c) >= 0.0);
        }

        #[test]
        fn gravity_is_translation_covariant(h in -10.0f64..10.0, dh in -10.0f64..10.0, m in 0.0f64..5.0) {
            let c = PhysicsConstants { mass_per_point: m, ..Default::default() };
            let a = gravity_energy(&Point3::new(0.3, 0.1, h), &c);
            let b = gravity_energy(&Point3::new(0.3, 0.1, h + dh), &c);
            prop_assert!((b - a - m * c.gravity * dh).abs() < 1e-9);
        }
    }
}
