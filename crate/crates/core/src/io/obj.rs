//! Wavefront OBJ import and export.

use std::fs;
use std::io::{BufRead, BufReader, Cursor};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::atlas::{GarmentRestMesh, Uv};
use crate::collider::ColliderMesh;
use crate::error::{DrapeError, Result};
use crate::surface::SurfaceModel;

pub const MISSING_UVS: &str = "garment OBJ lacks texture coordinates";

/// Triangle soup with per-vertex texture coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportedMesh {
    pub vertices: Vec<Point3<f64>>,
    pub uvs: Vec<Uv>,
    pub triangles: Vec<[usize; 3]>,
}

struct RawObj {
    positions: Vec<Point3<f64>>,
    uvs: Vec<Uv>,
    triangles: Vec<[usize; 3]>,
}

fn parse<R: BufRead>(reader: &mut R, want_uvs: bool) -> Result<RawObj> {
    let options = tobj::LoadOptions { single_index: want_uvs, triangulate: true, ignore_points: true, ignore_lines: true };
    let (models, _) = tobj::load_obj_buf(reader, &options, |_| Err(tobj::LoadError::OpenFileFailed))
        .map_err(|e| DrapeError::Parse(format!("OBJ: {e}")))?;
    let mut raw = RawObj { positions: Vec::new(), uvs: Vec::new(), triangles: Vec::new() };
    for model in models {
        let m = model.mesh;
        let base = raw.positions.len();
        let n = m.positions.len() / 3;
        if want_uvs {
            if m.texcoords.len() / 2 != n {
                return Err(DrapeError::Parse(MISSING_UVS.into()));
            }
            raw.uvs.extend(m.texcoords.chunks_exact(2).map(|t| Uv::new(t[0], t[1])));
        }
        raw.positions.extend(m.positions.chunks_exact(3).map(|p| Point3::new(p[0], p[1], p[2])));
        raw.triangles
            .extend(m.indices.chunks_exact(3).map(|f| [base + f[0] as usize, base + f[1] as usize, base + f[2] as usize]));
    }
    if raw.positions.is_empty() || raw.triangles.is_empty() {
        return Err(DrapeError::Parse("OBJ contains no triangles".into()));
    }
    Ok(raw)
}

fn has_texture_records(text: &str) -> bool {
    text.lines().any(|l| l.trim_start().starts_with("vt "))
}

/// Parse a garment with `vt` records; vertices are split along UV seams and
/// renumbered in order of first use.
pub fn parse_garment(name: &str, text: &str) -> Result<GarmentRestMesh> {
    if !has_texture_records(text) {
        return Err(DrapeError::Parse(MISSING_UVS.into()));
    }
    let raw = parse(&mut Cursor::new(text), true)?;
    GarmentRestMesh::new(name, raw.positions, raw.uvs, raw.triangles)
}

pub fn read_garment(path: &Path) -> Result<GarmentRestMesh> {
    let text = fs::read_to_string(path)?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_garment(&name, &text)
}

pub fn parse_collider(text: &str) -> Result<ColliderMesh> {
    let raw = parse(&mut Cursor::new(text), false)?;
    ColliderMesh::new(raw.positions, raw.triangles)
}

pub fn read_collider(path: &Path) -> Result<ColliderMesh> {
    let raw = parse(&mut BufReader::new(fs::File::open(path)?), false)?;
    ColliderMesh::new(raw.positions, raw.triangles)
}

/// Shortest decimal with 9 significant digits, in plain or exponent form.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { format!("{x}") };
    }
    let exp = x.abs().log10().floor() as i32;
    let s = if (-5..9).contains(&exp) {
        format!("{:.*}", (8 - exp).max(0) as usize, x)
    } else {
        format!("{:.8e}", x)
    };
    // a rounded value may gain a digit (9.99999999e5 -> 1000000.00); that is harmless
    trim_zeros(&s)
}

fn trim_zeros(s: &str) -> String {
    let (mantissa, exponent) = match s.find('e') {
        Some(k) => (&s[..k], &s[k..]),
        None => (s, ""),
    };
    let mantissa = if mantissa.contains('.') { mantissa.trim_end_matches('0').trim_end_matches('.') } else { mantissa };
    format!("{mantissa}{exponent}")
}

impl ExportedMesh {
    pub fn to_obj_string(&self) -> String {
        let mut out = String::with_capacity(64 * (self.vertices.len() + self.triangles.len()));
        for v in &self.vertices {
            out.push_str(&format!("v {} {} {}\n", format_sig9(v.x), format_sig9(v.y), format_sig9(v.z)));
        }
        for t in &self.uvs {
            out.push_str(&format!("vt {} {}\n", format_sig9(t.x), format_sig9(t.y)));
        }
        for f in &self.triangles {
            let [a, b, c] = f.map(|k| k + 1);
            out.push_str(&format!("f {a}/{a} {b}/{b} {c}/{c}\n"));
        }
        out
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_obj_string())?;
        Ok(())
    }
}

fn deformed(model: &SurfaceModel<f32>, uvs: &[Uv], rest: Vec<Point3<f64>>) -> Result<Vec<Point3<f64>>> {
    let tape = model.forward(uvs)?;
    Ok(rest
        .into_iter()
        .enumerate()
        .map(|(k, x)| {
            let d = tape.displacement(k);
            x + Vector3::new(d.x as f64, d.y as f64, d.z as f64)
        })
        .collect())
}

/// Deformed garment vertices with the garment's own connectivity.
pub fn export_vertices(model: &SurfaceModel<f32>, mesh: &GarmentRestMesh) -> Result<ExportedMesh> {
    let vertices = deformed(model, &mesh.uvs, mesh.vertices.clone())?;
    Ok(ExportedMesh { vertices, uvs: mesh.uvs.clone(), triangles: mesh.triangles.clone() })
}

/// The surface resampled on an `r x r` node grid over the UV square. Nodes
/// outside the parametrization are dropped along with their cells.
pub fn export_grid(model: &SurfaceModel<f32>, mesh: &GarmentRestMesh, r: usize) -> Result<ExportedMesh> {
    if r < 2 {
        return Err(DrapeError::Config(vec![format!("export grid resolution must be >= 2 (got {r})")]));
    }
    let step = 1.0 / (r - 1) as f64;
    let mut index = vec![None; r * r];
    let mut uvs = Vec::new();
    let mut rest = Vec::new();
    for i in 0..r {
        for j in 0..r {
            let p = Uv::new(j as f64 * step, i as f64 * step);
            if let Ok(x) = mesh.rest_position(&p) {
                index[i * r + j] = Some(uvs.len());
                uvs.push(p);
                rest.push(x);
            }
        }
    }
    if uvs.is_empty() {
        return Err(DrapeError::AllPointsInvalid);
    }
    let mut triangles = Vec::new();
    for i in 0..r - 1 {
        for j in 0..r - 1 {
            let at = |a: usize, b: usize| index[a * r + b];
            if let (Some(a), Some(b), Some(c), Some(d)) = (at(i, j), at(i, j + 1), at(i + 1, j + 1), at(i + 1, j)) {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
    }
    let vertices = deformed(model, &uvs, rest)?;
    Ok(ExportedMesh { vertices, uvs, triangles })
}
