//! Sampling structures: four equilateral triangles around a uv point.
//!
//! Vertex order is `[A, B, C, M_AB, M_BC, M_CA]`. The outer triangle `ABC`
//! has side `2s`; the midpoints split it into a center face and three corner
//! faces of side `s`, all wound counter-clockwise in uv.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Point3, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::atlas::{GarmentRestMesh, Uv};
use crate::error::{DrapeError, Result};
use crate::real::Real;
use crate::surface::SurfaceModel;

pub const DEFAULT_SIDE: f64 = 0.001;
pub const MAX_THETA: f64 = 2.0 * PI / 3.0;

pub const A: usize = 0;
pub const B: usize = 1;
pub const C: usize = 2;
pub const M_AB: usize = 3;
pub const M_BC: usize = 4;
pub const M_CA: usize = 5;

/// Center face first, then the corner faces at A, B and C.
pub const FACES: [[usize; 3]; 4] = [[M_AB, M_BC, M_CA], [A, M_AB, M_CA], [B, M_BC, M_AB], [C, M_CA, M_BC]];
pub const INNER_EDGES: [[usize; 2]; 3] = [[M_AB, M_BC], [M_BC, M_CA], [M_CA, M_AB]];
pub const OUTER_EDGES: [[usize; 2]; 6] = [[A, M_AB], [M_AB, B], [B, M_BC], [M_BC, C], [C, M_CA], [M_CA, A]];
/// Inner edges followed by outer edges.
pub const ALL_EDGES: [[usize; 2]; 9] = [
    INNER_EDGES[0], INNER_EDGES[1], INNER_EDGES[2],
    OUTER_EDGES[0], OUTER_EDGES[1], OUTER_EDGES[2], OUTER_EDGES[3], OUTER_EDGES[4], OUTER_EDGES[5],
];
/// `(center face, corner face)` index pairs into [`FACES`]; each shares one inner edge.
pub const FACE_PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (0, 3)];

/// Which edges enter the strain loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EdgeSet {
    #[default]
    #[serde(rename = "all9")]
    All9,
    #[serde(rename = "inner3")]
    Inner3,
}

impl EdgeSet {
    /// Indices into [`ALL_EDGES`].
    pub fn indices(self) -> &'static [usize] {
        match self {
            EdgeSet::All9 => &[0, 1, 2, 3, 4, 5, 6, 7, 8],
            EdgeSet::Inner3 => &[0, 1, 2],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeSet::All9 => "all9",
            EdgeSet::Inner3 => "inner3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all9" => Some(EdgeSet::All9),
            "inner3" => Some(EdgeSet::Inner3),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalStructure2D {
    pub center: Uv,
    pub theta: f64,
    pub side: f64,
    pub vertices: [Uv; 6],
}

impl LocalStructure2D {
    pub fn faces(&self) -> &'static [[usize; 3]; 4] {
        &FACES
    }

    pub fn edges(&self) -> &'static [[usize; 2]; 9] {
        &ALL_EDGES
    }

    pub fn face_pairs(&self) -> &'static [(usize, usize); 3] {
        &FACE_PAIRS
    }

    /// The six vertices followed by the center.
    pub fn query_points(&self) -> [Uv; 7] {
        let v = &self.vertices;
        [v[0], v[1], v[2], v[3], v[4], v[5], self.center]
    }

    pub fn is_valid(&self, mesh: &GarmentRestMesh) -> bool {
        mesh.is_valid(&self.center) && self.vertices.iter().all(|v| mesh.is_valid(v))
    }
}

pub fn build_structure_2d(p: Uv, side: f64, theta: f64) -> LocalStructure2D {
    let r = 2.0 * side / 3f64.sqrt();
    let at = |angle: f64| p + Vector2::new(angle.cos(), angle.sin()) * r;
    let a = at(theta + FRAC_PI_2);
    let b = at(theta + 7.0 * PI / 6.0);
    let c = at(theta + 11.0 * PI / 6.0);
    let mid = |x: Uv, y: Uv| Uv::from((x.coords + y.coords) * 0.5);
    LocalStructure2D { center: p, theta, side, vertices: [a, b, c, mid(a, b), mid(b, c), mid(c, a)] }
}

/// Rotation drawn uniformly from `[0, 2π/3]`.
pub fn random_theta<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen_range(0.0..=MAX_THETA)
}

/// A structure placed on the current surface. Lengths follow [`ALL_EDGES`].
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStructure3D {
    pub positions: [Point3<f64>; 6],
    pub rest_lengths: [f64; 9],
}

impl LocalStructure3D {
    pub fn edge_vector(&self, k: usize) -> Vector3<f64> {
        let [i, j] = ALL_EDGES[k];
        self.positions[j] - self.positions[i]
    }
}

/// Rest edge lengths of a 2D structure, in [`ALL_EDGES`] order.
pub fn rest_lengths(mesh: &GarmentRestMesh, s2d: &LocalStructure2D) -> Result<[f64; 9]> {
    let mut out = [0.0; 9];
    for (k, [i, j]) in ALL_EDGES.iter().enumerate() {
        out[k] = mesh.rest_length(&s2d.vertices[*i], &s2d.vertices[*j])?;
    }
    Ok(out)
}

/// Lift a structure onto `rest + deform`.
pub fn lift_structure<T: Real>(
    model: &SurfaceModel<T>,
    mesh: &GarmentRestMesh,
    s2d: &LocalStructure2D,
) -> Result<LocalStructure3D> {
    if !s2d.vertices.iter().all(|v| mesh.is_valid(v)) {
        return Err(DrapeError::InvalidStructure { u: s2d.center.x, v: s2d.center.y });
    }
    let tape = model.forward(&s2d.vertices)?;
    let mut positions = [Point3::origin(); 6];
    for (k, v) in s2d.vertices.iter().enumerate() {
        let d = tape.displacement(k);
        positions[k] = mesh.rest_position(v)? + Vector3::new(d.x.to_f64(), d.y.to_f64(), d.z.to_f64());
    }
    Ok(LocalStructure3D { positions, rest_lengths: rest_lengths(mesh, s2d)? })
}
