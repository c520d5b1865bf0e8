//! Binary checkpoint files: a short text header followed by little-endian f32s.
//!
//! ```text
//! drape-checkpoint
//! version 1
//! encoding multigrid 101,51 3      (or `raw`, or `positional 4`)
//! mlp 6,64,64,64,3
//! activation relu
//! seed 7
//! payload 47369
//! end
//! <payload: 4 * count bytes>
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use super::config::{Activation, EncoderConfig, InputEncoding, MlpConfig, ModelConfig};
use super::model::SurfaceModel;
use crate::error::{DrapeError, Result};

pub const MAGIC: &str = "drape-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

fn join(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn header(model: &SurfaceModel<f32>) -> String {
    let cfg = model.config();
    let encoding = match &cfg.encoding {
        InputEncoding::MultiGrid(enc) => format!("multigrid {} {}", join(&enc.layer_resolutions), enc.feature_dim),
        InputEncoding::Raw => "raw".to_string(),
        InputEncoding::Positional { frequencies } => format!("positional {frequencies}"),
    };
    format!(
        "{MAGIC}\nversion {FORMAT_VERSION}\nencoding {encoding}\nmlp {}\nactivation {}\nseed {}\npayload {}\nend\n",
        join(&cfg.mlp.layer_dims),
        cfg.mlp.activation.name(),
        model.seed(),
        model.param_count()
    )
}

/// Serialize a model to bytes.
pub fn to_bytes(model: &SurfaceModel<f32>) -> Vec<u8> {
    let mut out = header(model).into_bytes();
    out.reserve(model.param_count() * 4);
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn save_checkpoint(model: &SurfaceModel<f32>, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&to_bytes(model))?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SurfaceModel<f32>> {
    from_bytes(&fs::read(path)?)
}

fn bad(msg: impl Into<String>) -> DrapeError {
    DrapeError::FormatVersionMismatch(msg.into())
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|_| bad(format!("bad integer list {s:?}"))))
        .collect()
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse().map_err(|_| bad(format!("bad integer {s:?}")))
}

/// Parse a checkpoint. Never returns a partially filled model.
pub fn from_bytes(bytes: &[u8]) -> Result<SurfaceModel<f32>> {
    let mut lines = Vec::new();
    let mut at = 0;
    loop {
        let Some(len) = bytes[at..].iter().position(|&b| b == b'\n') else {
            return Err(bad("header is truncated"));
        };
        let line = std::str::from_utf8(&bytes[at..at + len]).map_err(|_| bad("header is not text"))?;
        at += len + 1;
        if lines.is_empty() && line != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        if line == "end" {
            break;
        }
        lines.push(line.to_string());
        if lines.len() > 16 {
            return Err(bad("header is too long"));
        }
    }

    let mut version = None;
    let mut encoding = None;
    let mut mlp = None;
    let mut activation = Activation::Relu;
    let mut seed = 0u64;
    let mut payload = None;
    for line in &lines[1..] {
        let (key, rest) = line.split_once(' ').unwrap_or((line.as_str(), ""));
        match key {
            "version" => version = Some(rest.parse::<u32>().map_err(|_| bad("bad version"))?),
            "encoding" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                encoding = Some(match parts.as_slice() {
                    ["multigrid", res, f] => InputEncoding::MultiGrid(EncoderConfig {
                        layer_resolutions: parse_list(res)?,
                        feature_dim: parse_usize(f)?,
                    }),
                    ["raw"] => InputEncoding::Raw,
                    ["positional", k] => InputEncoding::Positional { frequencies: parse_usize(k)? },
                    _ => return Err(bad(format!("unknown encoding {rest:?}"))),
                });
            }
            "mlp" => mlp = Some(parse_list(rest)?),
            "activation" => {
                activation = Activation::parse(rest).ok_or_else(|| bad(format!("unknown activation {rest:?}")))?
            }
            "seed" => seed = rest.parse().map_err(|_| bad("bad seed"))?,
            "payload" => payload = Some(parse_usize(rest)?),
            _ => return Err(bad(format!("unknown header key {key:?}"))),
        }
    }
    match version {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(bad(format!("format version {v}, expected {FORMAT_VERSION}"))),
        None => return Err(bad("missing version")),
    }
    let (Some(encoding), Some(dims), Some(count)) = (encoding, mlp, payload) else {
        return Err(bad("header is missing encoding, mlp or payload"));
    };
    let config = ModelConfig { encoding, mlp: MlpConfig { layer_dims: dims, activation } };
    config.validate().map_err(|e| DrapeError::ShapeMismatch(e.to_string()))?;
    if count != config.param_count() {
        return Err(DrapeError::ShapeMismatch(format!(
            "header declares {count} values, shapes imply {}",
            config.param_count()
        )));
    }
    let body = &bytes[at..];
    if body.len() < count * 4 {
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "checkpoint payload is truncated").into());
    }
    if body.len() > count * 4 {
        return Err(DrapeError::ShapeMismatch(format!(
            "{} trailing bytes after payload",
            body.len() - count * 4
        )));
    }
    let params = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    SurfaceModel::from_params(&config, seed, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> SurfaceModel<f32> {
        let cfg = ModelConfig {
            encoding: InputEncoding::MultiGrid(EncoderConfig { layer_resolutions: vec![5, 3], feature_dim: 3 }),
            mlp: MlpConfig { layer_dims: vec![6, 8, 8, 3], activation: Activation::Tanh },
        };
        let mut m = SurfaceModel::<f32>::init(&cfg, 11).unwrap();
        for (k, p) in m.params_mut().iter_mut().enumerate() {
            *p += (k as f32 * 0.37).sin() * 1e-3;
        }
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        for m in [model(), SurfaceModel::init(&ModelConfig::positional(), 3).unwrap()] {
            save_checkpoint(&m, &path).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back.config(), m.config());
            assert_eq!(back.seed(), m.seed());
            let a: Vec<u32> = m.params().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = back.params().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_files_fail_cleanly() {
        let bytes = to_bytes(&model());
        for cut in [0, 5, 40, bytes.len() - 100, bytes.len() - 1] {
            match from_bytes(&bytes[..cut]) {
                Err(DrapeError::FormatVersionMismatch(_)) | Err(DrapeError::Io(_)) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let m = model();
        let text = String::from_utf8_lossy(&to_bytes(&m)).into_owned();
        let declared = format!("payload {}", m.param_count());
        let bytes = to_bytes(&m);
        let header_end = text.find("end\n").unwrap() + 4;
        let mut wrong = text[..header_end].replace(&declared, &format!("payload {}", m.param_count() + 1)).into_bytes();
        wrong.extend_from_slice(&bytes[header_end..]);
        assert!(matches!(from_bytes(&wrong), Err(DrapeError::ShapeMismatch(_))));

        let mut extra = to_bytes(&m);
        extra.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(from_bytes(&extra), Err(DrapeError::ShapeMismatch(_))));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let bytes = to_bytes(&model());
        let text = String::from_utf8_lossy(&bytes).replacen("version 1", "version 2", 1);
        let header_end = text.find("end\n").unwrap() + 4;
        let mut v2 = text[..header_end].as_bytes().to_vec();
        v2.extend_from_slice(&bytes[header_end..]);
        assert!(matches!(from_bytes(&v2), Err(DrapeError::FormatVersionMismatch(_))));
        assert!(matches!(from_bytes(b"hello\nend\n"), Err(DrapeError::FormatVersionMismatch(_))));
    }
}
