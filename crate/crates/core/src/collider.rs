//! Rigid obstacles: vertex normals and exact nearest-vertex queries.

use nalgebra::{Point3, Vector3};

use crate::error::{DrapeError, Result};

/// Area-weighted vertex normals. Vertices not referenced by any face (or
/// only by degenerate faces) get a zero normal.
pub fn compute_vertex_normals(vertices: &[Point3<f64>], triangles: &[[usize; 3]]) -> Result<Vec<Vector3<f64>>> {
    let mut normals = vec![Vector3::zeros(); vertices.len()];
    let mut any = false;
    for t in triangles {
        let [a, b, c] = t.map(|i| vertices[i]);
        let n = (b - a).cross(&(c - a));
        if n.norm_squared() > 0.0 {
            any = true;
        }
        for &i in t {
            normals[i] += n;
        }
    }
    if !any {
        return Err(DrapeError::DegenerateMesh("every collider face is degenerate".into()));
    }
    for n in &mut normals {
        let len = n.norm();
        *n = if len > 0.0 { *n / len } else { Vector3::zeros() };
    }
    Ok(normals)
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Split { left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Node {
    lo: [f64; 3],
    hi: [f64; 3],
    kind: NodeKind,
}

/// Static kd-tree over 3D points answering exact nearest-neighbour queries.
///
/// Ties are broken by the lowest point id.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<[f64; 3]>,
    ids: Vec<usize>,
    nodes: Vec<Node>,
    pub leaf_size: usize,
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

impl SpatialIndex {
    pub const DEFAULT_LEAF_SIZE: usize = 16;

    /// Index all `vertices`; ids are positions in the slice.
    pub fn build(vertices: &[Point3<f64>]) -> Result<Self> {
        let ids = (0..vertices.len()).collect();
        Self::build_subset(vertices, ids, Self::DEFAULT_LEAF_SIZE)
    }

    pub fn build_subset(vertices: &[Point3<f64>], mut ids: Vec<usize>, leaf_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(DrapeError::EmptyCollider);
        }
        let points: Vec<[f64; 3]> = vertices.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut nodes = Vec::new();
        let n = ids.len();
        Self::build_node(&points, &mut ids, 0, n, leaf_size.max(1), &mut nodes);
        Ok(Self { points, ids, nodes, leaf_size })
    }

    fn build_node(
        points: &[[f64; 3]],
        ids: &mut [usize],
        start: usize,
        end: usize,
        leaf_size: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let mut lo = [f64::MAX; 3];
        let mut hi = [f64::MIN; 3];
        for &i in &ids[start..end] {
            for k in 0..3 {
                lo[k] = lo[k].min(points[i][k]);
                hi[k] = hi[k].max(points[i][k]);
            }
        }
        let me = nodes.len();
        nodes.push(Node { lo, hi, kind: NodeKind::Leaf { start, end } });
        if end - start <= leaf_size {
            return me;
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        let mid = start + (end - start) / 2;
        ids[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let left = Self::build_node(points, ids, start, mid, leaf_size, nodes);
        let right = Self::build_node(points, ids, mid, end, leaf_size, nodes);
        nodes[me].kind = NodeKind::Split { left, right };
        me
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn box_dist2(node: &Node, q: &[f64; 3]) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let e = if q[k] < node.lo[k] {
                node.lo[k] - q[k]
            } else if q[k] > node.hi[k] {
                q[k] - node.hi[k]
            } else {
                0.0
            };
            d += e * e;
        }
        d
    }

    /// Nearest indexed point to `q` and its Euclidean distance.
    pub fn nearest(&self, q: &Point3<f64>) -> (usize, f64) {
        let q = [q.x, q.y, q.z];
        let mut best = (f64::INFINITY, usize::MAX);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if Self::box_dist2(node, &q) > best.0 {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, end } => {
                    for &i in &self.ids[start..end] {
                        let d = dist2(&self.points[i], &q);
                        if d < best.0 || (d == best.0 && i < best.1) {
                            best = (d, i);
                        }
                    }
                }
                NodeKind::Split { left, right } => {
                    let dl = Self::box_dist2(&self.nodes[left], &q);
                    let dr = Self::box_dist2(&self.nodes[right], &q);
                    // push the farther child first so the nearer one pops next
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        (best.1, best.0.sqrt())
    }

    /// Linear scan over the indexed points; same tie rule as [`Self::nearest`].
    pub fn nearest_brute_force(&self, q: &Point3<f64>) -> (usize, f64) {
        let q = [q.x, q.y, q.z];
        let mut best = (f64::INFINITY, usize::MAX);
        for &i in &self.ids {
            let d = dist2(&self.points[i], &q);
            if d < best.0 || (d == best.0 && i < best.1) {
                best = (d, i);
            }
        }
        (best.1, best.0.sqrt())
    }
}

/// Rigid obstacle with per-vertex unit normals.
#[derive(Debug, Clone)]
pub struct ColliderMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub normals: Vec<Vector3<f64>>,
    index: SpatialIndex,
}

impl ColliderMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(DrapeError::EmptyCollider);
        }
        check_indices(&vertices, &triangles)?;
        let normals = compute_vertex_normals(&vertices, &triangles)?;
        Self::with_normals(vertices, triangles, normals)
    }

    /// Use supplied normals (normalized here). Vertices with a zero normal
    /// never take part in nearest-vertex correspondences.
    pub fn with_normals(
        vertices: Vec<Point3<f64>>,
        triangles: Vec<[usize; 3]>,
        normals: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        if vertices.is_empty() {
            return Err(DrapeError::EmptyCollider);
        }
        check_indices(&vertices, &triangles)?;
        if normals.len() != vertices.len() {
            return Err(DrapeError::ShapeMismatch(format!(
                "{} normals for {} collider vertices",
                normals.len(),
                vertices.len()
            )));
        }
        let normals: Vec<Vector3<f64>> = normals
            .into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 && len.is_finite() { n / len } else { Vector3::zeros() }
            })
            .collect();
        let ids = (0..vertices.len()).filter(|&i| normals[i] != Vector3::zeros()).collect();
        let index = SpatialIndex::build_subset(&vertices, ids, SpatialIndex::DEFAULT_LEAF_SIZE)?;
        Ok(Self { vertices, triangles, normals, index })
    }

    pub fn index(&self) -> &SpatialIndex {
        &self.index
    }

    /// Nearest collider vertex (with a usable normal) and its distance.
    pub fn nearest_vertex(&self, q: &Point3<f64>) -> (usize, f64) {
        self.index.nearest(q)
    }

    /// Signed offset of `q` along the normal of its nearest collider vertex.
    pub fn normal_offset(&self, q: &Point3<f64>) -> f64 {
        let (j, _) = self.nearest_vertex(q);
        (q - self.vertices[j]).dot(&self.normals[j])
    }

    /// Copy of the collider with every vertex moved by a rigid transform.
    pub fn transformed(&self, iso: &nalgebra::Isometry3<f64>) -> Result<Self> {
        let vertices = self.vertices.iter().map(|v| iso * v).collect();
        Self::new(vertices, self.triangles.clone())
    }
}

fn check_indices(vertices: &[Point3<f64>], triangles: &[[usize; 3]]) -> Result<()> {
    if let Some(t) = triangles.iter().position(|t| t.iter().any(|&i| i >= vertices.len())) {
        return Err(DrapeError::InconsistentDims(format!(
            "collider triangle {t} references a missing vertex"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene;
    use nalgebra::{Isometry3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_square_normals_point_up() {
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let n = compute_vertex_normals(&v, &[[0, 1, 2], [0, 2, 3]]).unwrap();
        assert!(n.iter().all(|n| (n - Vector3::z()).norm() < 1e-15));
    }

    #[test]
    fn octahedron_normals_are_radial() {
        let v: Vec<Point3<f64>> = [
            [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
        ]
        .iter()
        .map(|c| Point3::from(*c))
        .collect();
        let t = vec![
            [0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
            [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5],
        ];
        let n = compute_vertex_normals(&v, &t).unwrap();
        for (p, n) in v.iter().zip(&n) {
            assert!((n - p.coords).norm() < 1e-12);
        }
    }

    #[test]
    fn normals_match_accumulation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<Point3<f64>> = (0..40).map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let t: Vec<[usize; 3]> = (0..60)
            .map(|_| {
                let a = rng.gen_range(0..40);
                let b = (a + rng.gen_range(1..39)) % 40;
                let mut c = rng.gen_range(0..40);
                while c == a || c == b {
                    c = rng.gen_range(0..40);
                }
                [a, b, c]
            })
            .collect();
        let n = compute_vertex_normals(&v, &t).unwrap();
        for i in 0..40 {
            let mut acc = [0.0; 3];
            for tri in t.iter().filter(|tri| tri.contains(&i)) {
                let (a, b, c) = (v[tri[0]], v[tri[1]], v[tri[2]]);
                let e1 = [b.x - a.x, b.y - a.y, b.z - a.z];
                let e2 = [c.x - a.x, c.y - a.y, c.z - a.z];
                acc[0] += e1[1] * e2[2] - e1[2] * e2[1];
                acc[1] += e1[2] * e2[0] - e1[0] * e2[2];
                acc[2] += e1[0] * e2[1] - e1[1] * e2[0];
            }
            let len = (acc[0] * acc[0] + acc[1] * acc[1] + acc[2] * acc[2]).sqrt();
            if len == 0.0 {
                assert_eq!(n[i], Vector3::zeros());
            } else {
                assert!((n[i] - Vector3::new(acc[0], acc[1], acc[2]) / len).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn all_degenerate_faces_fail() {
        let v = vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)];
        assert!(matches!(compute_vertex_normals(&v, &[[0, 1, 2]]), Err(DrapeError::DegenerateMesh(_))));
    }

    #[test]
    fn index_edge_cases() {
        assert!(matches!(SpatialIndex::build(&[]), Err(DrapeError::EmptyCollider)));
        let one = SpatialIndex::build(&[Point3::new(0.3, 0.2, 0.1)]).unwrap();
        assert_eq!(one.nearest(&Point3::new(9.0, -4.0, 2.0)).0, 0);

        let grid: Vec<Point3<f64>> = (0..1000)
            .map(|k| Point3::new((k % 10) as f64, ((k / 10) % 10) as f64, (k / 100) as f64))
            .collect();
        let index = SpatialIndex::build(&grid).unwrap();
        for k in [0, 17, 555, 999] {
            assert_eq!(index.nearest(&grid[k]), (k, 0.0));
        }
        // equidistant from vertices 0 and 1: lowest id wins
        assert_eq!(index.nearest(&Point3::new(0.5, 0.0, 0.0)).0, 0);
    }

    #[test]
    fn index_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let v: Vec<Point3<f64>> = (0..10_000)
            .map(|_| Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let index = SpatialIndex::build(&v).unwrap();
        for _ in 0..1000 {
            let q = Point3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
            let (i, d) = index.nearest(&q);
            let (j, e) = index.nearest_brute_force(&q);
            assert_eq!(i, j);
            assert_eq!(d.to_bits(), e.to_bits());
        }
    }

    #[test]
    fn normals_rotate_with_the_mesh() {
        let sphere = scene::icosphere(Point3::new(0.1, 0.2, 0.3), 0.7, 2).unwrap();
        let iso = Isometry3::from_parts(
            nalgebra::Translation3::new(1.0, -2.0, 0.5),
            UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0),
        );
        let moved = sphere.transformed(&iso).unwrap();
        for (n, m) in sphere.normals.iter().zip(&moved.normals) {
            assert!((iso.rotation * n - m).norm() < 1e-9);
        }
    }
}
