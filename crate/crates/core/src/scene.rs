//! Built-in garments and analytic colliders.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};

use crate::atlas::{GarmentRestMesh, Uv};
use crate::collider::ColliderMesh;
use crate::error::{DrapeError, Result};

/// Flat square cloth in the plane `z = origin.z` with an identity uv map:
/// vertex `(u, v)` sits at `origin + size * (u, v, 0)`. `resolution` counts
/// vertices per side.
pub fn flat_square(resolution: usize, size: f64, origin: Point3<f64>) -> Result<GarmentRestMesh> {
    if resolution < 2 {
        return Err(DrapeError::InconsistentDims("square cloth needs at least 2 vertices per side".into()));
    }
    let n = resolution - 1;
    let mut vertices = Vec::with_capacity(resolution * resolution);
    let mut uvs = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let (u, v) = (j as f64 / n as f64, i as f64 / n as f64);
            vertices.push(origin + Vector3::new(u * size, v * size, 0.0));
            uvs.push(Uv::new(u, v));
        }
    }
    let idx = |i: usize, j: usize| i * resolution + j;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            triangles.push([idx(i, j), idx(i, j + 1), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i + 1, j)]);
        }
    }
    GarmentRestMesh::new(format!("square{resolution}"), vertices, uvs, triangles)
}

/// Subdivided icosahedron projected onto a sphere; faces wind outward.
pub fn icosphere(center: Point3<f64>, radius: f64, subdivisions: usize) -> Result<ColliderMesh> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Vector3::from(*c).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = verts.iter().map(|v| center + v * radius).collect();
    ColliderMesh::new(vertices, faces)
}

/// Torus around the z axis.
pub fn torus(
    center: Point3<f64>,
    major_radius: f64,
    minor_radius: f64,
    major_segments: usize,
    minor_segments: usize,
) -> Result<ColliderMesh> {
    let (m, n) = (major_segments.max(3), minor_segments.max(3));
    let mut vertices = Vec::with_capacity(m * n);
    for i in 0..m {
        let a = 2.0 * PI * i as f64 / m as f64;
        for j in 0..n {
            let b = 2.0 * PI * j as f64 / n as f64;
            let r = major_radius + minor_radius * b.cos();
            vertices.push(center + Vector3::new(r * a.cos(), r * a.sin(), minor_radius * b.sin()));
        }
    }
    let idx = |i: usize, j: usize| (i % m) * n + (j % n);
    let mut triangles = Vec::with_capacity(2 * m * n);
    for i in 0..m {
        for j in 0..n {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    ColliderMesh::new(vertices, triangles)
}

/// Triangular prism with its ridge along y and apex pointing up (+z).
/// Each face is tessellated separately with `divisions` steps per side.
pub fn prism(center: Point3<f64>, side: f64, length: f64, divisions: usize) -> Result<ColliderMesh> {
    let d = divisions.max(1);
    let h = side * 3f64.sqrt() / 2.0;
    // cross-section in the xz plane, centroid at the origin
    let corners = [
        Vector3::new(-side / 2.0, 0.0, -h / 3.0),
        Vector3::new(side / 2.0, 0.0, -h / 3.0),
        Vector3::new(0.0, 0.0, 2.0 * h / 3.0),
    ];
    let ahead = Vector3::new(0.0, length / 2.0, 0.0);
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut triangles = Vec::new();

    let mut quad = |p0: Vector3<f64>, du: Vector3<f64>, dv: Vector3<f64>| {
        let base = vertices.len();
        for i in 0..=d {
            for j in 0..=d {
                vertices.push(center + p0 + du * (j as f64 / d as f64) + dv * (i as f64 / d as f64));
            }
        }
        let idx = |i: usize, j: usize| base + i * (d + 1) + j;
        for i in 0..d {
            for j in 0..d {
                triangles.push([idx(i, j), idx(i, j + 1), idx(i + 1, j + 1)]);
                triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i + 1, j)]);
            }
        }
    };
    // side walls: edge (a -> b) swept along +y, wound so normals face outward
    for k in 0..3 {
        let (a, b) = (corners[k], corners[(k + 1) % 3]);
        quad(b - ahead, a - b, ahead * 2.0);
    }
    let mut cap = |apex: [Vector3<f64>; 3]| {
        let mut index = HashMap::new();
        for i in 0..=d {
            for j in 0..=(d - i) {
                let (s, t) = (i as f64 / d as f64, j as f64 / d as f64);
                index.insert((i, j), vertices.len());
                vertices.push(center + apex[0] + (apex[1] - apex[0]) * s + (apex[2] - apex[0]) * t);
            }
        }
        for i in 0..d {
            for j in 0..(d - i) {
                triangles.push([index[&(i, j)], index[&(i + 1, j)], index[&(i, j + 1)]]);
                if j + 1 < d - i {
                    triangles.push([index[&(i + 1, j)], index[&(i + 1, j + 1)], index[&(i, j + 1)]]);
                }
            }
        }
    };
    cap([corners[0] + ahead, corners[2] + ahead, corners[1] + ahead]);
    cap([corners[0] - ahead, corners[1] - ahead, corners[2] - ahead]);
    ColliderMesh::new(vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_cloth_is_identity_mapped() {
        let cloth = flat_square(4, 2.0, Point3::new(-1.0, -1.0, 0.5)).unwrap();
        assert_eq!(cloth.vertices.len(), 16);
        assert_eq!(cloth.triangles.len(), 18);
        let p = cloth.rest_position(&Uv::new(0.25, 0.75)).unwrap();
        assert!((p - Point3::new(-0.5, 0.5, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn icosphere_vertices_and_normals_are_radial() {
        let s = icosphere(Point3::new(0.0, 0.0, 1.0), 0.5, 3).unwrap();
        assert_eq!(s.vertices.len(), 642);
        for (v, n) in s.vertices.iter().zip(&s.normals) {
            let r = v - Point3::new(0.0, 0.0, 1.0);
            assert!((r.norm() - 0.5).abs() < 1e-12);
            assert!(n.dot(&r.normalize()) > 0.99);
        }
    }

    #[test]
    fn torus_and_prism_normals_face_outward() {
        let t = torus(Point3::origin(), 1.0, 0.25, 48, 16).unwrap();
        for (v, n) in t.vertices.iter().zip(&t.normals) {
            let ring = Vector3::new(v.x, v.y, 0.0).normalize();
            let tube = v.coords - ring;
            assert!(n.dot(&tube.normalize()) > 0.95);
        }
        let p = prism(Point3::origin(), 1.0, 2.0, 6).unwrap();
        for (v, n) in p.vertices.iter().zip(&p.normals) {
            assert!(n.dot(&v.coords) > 0.0);
        }
    }
}
