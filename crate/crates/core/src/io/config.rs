//! TOML run configuration.
//!
//! Every section and key is optional; missing values take their defaults and
//! unknown keys are rejected. A minimal file:
//!
//! ```toml
//! [garment.square]
//! resolution = 64
//! size = 1.0
//! origin = [-0.5, -0.5, 1.02]
//!
//! [collider.icosphere]
//! center = [0.0, 0.0, 0.5]
//! radius = 0.5
//! subdivisions = 4
//!
//! [train]
//! epochs = 3000
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::atlas::GarmentRestMesh;
use crate::collider::ColliderMesh;
use crate::error::{DrapeError, Result};
use crate::losses::{LossWeights, PhysicsConstants, StrainMode};
use crate::optim::OptimizerKind;
use crate::sampler::SamplerConfig;
use crate::scene;
use crate::structure::{EdgeSet, DEFAULT_SIDE};
use crate::surface::{Activation, EncoderConfig, InputEncoding, MlpConfig, ModelConfig};
use crate::trainer::bench::BenchConfig;
use crate::trainer::{ConvergenceConfig, SamplingMode, TrainConfig};

use super::obj::{read_collider, read_garment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SquareSpec {
    pub resolution: usize,
    pub size: f64,
    pub origin: [f64; 3],
}

impl Default for SquareSpec {
    fn default() -> Self {
        Self { resolution: 64, size: 1.0, origin: [-0.5, -0.5, 1.02] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum GarmentSpec {
    Obj(PathBuf),
    Square(SquareSpec),
}

impl Default for GarmentSpec {
    fn default() -> Self {
        GarmentSpec::Square(SquareSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcosphereSpec {
    pub center: [f64; 3],
    pub radius: f64,
    pub subdivisions: usize,
}

impl Default for IcosphereSpec {
    fn default() -> Self {
        Self { center: [0.0, 0.0, 0.5], radius: 0.5, subdivisions: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TorusSpec {
    pub center: [f64; 3],
    pub major_radius: f64,
    pub minor_radius: f64,
    pub major_segments: usize,
    pub minor_segments: usize,
}

impl Default for TorusSpec {
    fn default() -> Self {
        Self { center: [0.0, 0.0, 0.9], major_radius: 0.3, minor_radius: 0.1, major_segments: 96, minor_segments: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrismSpec {
    pub center: [f64; 3],
    pub side: f64,
    pub length: f64,
    pub divisions: usize,
}

impl Default for PrismSpec {
    fn default() -> Self {
        Self { center: [0.0, 0.0, 0.77], side: 0.4, length: 1.2, divisions: 48 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ColliderSpec {
    None,
    Obj(PathBuf),
    Icosphere(IcosphereSpec),
    Torus(TorusSpec),
    Prism(PrismSpec),
}

impl Default for ColliderSpec {
    fn default() -> Self {
        ColliderSpec::Icosphere(IcosphereSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingKind {
    #[default]
    Multigrid,
    Raw,
    Positional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoding: EncodingKind,
    pub grid_resolutions: Vec<usize>,
    pub feature_dim: usize,
    pub frequencies: usize,
    /// Hidden widths; when absent, the preset for the encoding is used.
    pub hidden: Option<Vec<usize>>,
    pub activation: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            encoding: EncodingKind::Multigrid,
            grid_resolutions: vec![101, 51],
            feature_dim: 3,
            frequencies: 4,
            hidden: None,
            activation: Activation::Relu.name().into(),
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self) -> std::result::Result<ModelConfig, String> {
        let activation =
            Activation::parse(&self.activation).ok_or_else(|| format!("model.activation: unknown value {:?}", self.activation))?;
        let (encoding, preset) = match self.encoding {
            EncodingKind::Multigrid => (
                InputEncoding::MultiGrid(EncoderConfig {
                    layer_resolutions: self.grid_resolutions.clone(),
                    feature_dim: self.feature_dim,
                }),
                ModelConfig::multigrid_default(),
            ),
            EncodingKind::Raw => (InputEncoding::Raw, ModelConfig::baseline_mlp()),
            EncodingKind::Positional => {
                (InputEncoding::Positional { frequencies: self.frequencies }, ModelConfig::positional())
            }
        };
        let hidden = match &self.hidden {
            Some(h) => h.clone(),
            None => preset.mlp.layer_dims[1..preset.mlp.layer_dims.len() - 1].to_vec(),
        };
        let mut dims = vec![encoding.output_dim()];
        dims.extend(hidden);
        dims.push(3);
        let config = ModelConfig { encoding, mlp: MlpConfig { layer_dims: dims, activation } };
        config.validate().map_err(|e| format!("model: {e}"))?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub sampling_mode: SamplingMode,
    pub seed: u64,
    pub structure_side: f64,
    pub strain_edges: EdgeSet,
    pub strain_mode: StrainMode,
    pub checkpoint_every: usize,
    pub stop_on_convergence: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            optimizer: t.optimizer,
            sampling_mode: t.sampling_mode,
            seed: t.seed,
            structure_side: DEFAULT_SIDE,
            strain_edges: t.strain_edges,
            strain_mode: t.strain_mode,
            checkpoint_every: t.checkpoint_every,
            stop_on_convergence: t.stop_on_convergence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSection {
    pub window: usize,
    pub tolerance: f64,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        let c = ConvergenceConfig::default();
        Self { window: c.window, tolerance: c.tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub export_resolution: usize,
    pub dense_resolution: usize,
    pub dense_seed: u64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), export_resolution: 128, dense_resolution: 128, dense_seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub garment: GarmentSpec,
    pub collider: ColliderSpec,
    pub train: TrainSection,
    pub model: ModelSection,
    pub weights: LossWeights,
    pub physics: PhysicsConstants,
    pub sampler: SamplerConfig,
    pub convergence: ConvergenceSection,
    pub output: OutputSection,
    pub bench: BenchConfig,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| DrapeError::Config(vec![e.message().to_string()]))
    }

    /// Read and validate a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut config = Self::from_toml_str(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut errors = Vec::new();
        match self.train_config() {
            Ok(t) => errors.extend(t.violations()),
            Err(e) => {
                errors.push(e);
                let mut t = TrainConfig::default();
                self.fill_train(&mut t);
                errors.extend(t.violations().into_iter().filter(|m| !m.starts_with("model")));
            }
        }
        match &self.garment {
            GarmentSpec::Obj(p) => {
                if !self.resolve(p).is_file() {
                    errors.push(format!("garment.obj: file {} does not exist", self.resolve(p).display()));
                }
            }
            GarmentSpec::Square(s) => {
                if s.resolution < 2 {
                    errors.push(format!("garment.square.resolution must be >= 2 (got {})", s.resolution));
                }
                if !(s.size.is_finite() && s.size > 0.0) {
                    errors.push(format!("garment.square.size must be > 0 (got {})", s.size));
                }
            }
        }
        match &self.collider {
            ColliderSpec::Obj(p) if !self.resolve(p).is_file() => {
                errors.push(format!("collider.obj: file {} does not exist", self.resolve(p).display()));
            }
            ColliderSpec::Icosphere(s) if !(s.radius > 0.0) => {
                errors.push(format!("collider.icosphere.radius must be > 0 (got {})", s.radius));
            }
            ColliderSpec::Torus(s) if !(s.major_radius > s.minor_radius && s.minor_radius > 0.0) => {
                errors.push("collider.torus needs major_radius > minor_radius > 0".into());
            }
            ColliderSpec::Prism(s) if !(s.side > 0.0 && s.length > 0.0 && s.divisions >= 1) => {
                errors.push("collider.prism needs side > 0, length > 0, divisions >= 1".into());
            }
            _ => {}
        }
        if self.output.export_resolution < 2 {
            errors.push(format!("output.export_resolution must be >= 2 (got {})", self.output.export_resolution));
        }
        if self.output.dense_resolution < 2 {
            errors.push(format!("output.dense_resolution must be >= 2 (got {})", self.output.dense_resolution));
        }
        self.bench.validate(&mut errors);
        errors
    }

    pub fn validate(&self) -> Result<()> {
        let errors = self.violations();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(DrapeError::Config(errors))
        }
    }

    fn fill_train(&self, t: &mut TrainConfig) {
        let s = &self.train;
        t.learning_rate = s.learning_rate;
        t.epochs = s.epochs;
        t.optimizer = s.optimizer;
        t.sampling_mode = s.sampling_mode;
        t.seed = s.seed;
        t.structure_side = s.structure_side;
        t.strain_edges = s.strain_edges;
        t.strain_mode = s.strain_mode;
        t.checkpoint_every = s.checkpoint_every;
        t.stop_on_convergence = s.stop_on_convergence;
        t.weights = self.weights;
        t.consts = self.physics;
        t.sampler = self.sampler.clone();
        t.convergence = ConvergenceConfig { window: self.convergence.window, tolerance: self.convergence.tolerance };
    }

    pub fn train_config(&self) -> std::result::Result<TrainConfig, String> {
        let mut t = TrainConfig { model: self.model.to_model_config()?, ..Default::default() };
        self.fill_train(&mut t);
        Ok(t)
    }

    pub fn build_garment(&self) -> Result<GarmentRestMesh> {
        match &self.garment {
            GarmentSpec::Obj(p) => read_garment(&self.resolve(p)),
            GarmentSpec::Square(s) => scene::flat_square(s.resolution, s.size, Point3::from(s.origin)),
        }
    }

    pub fn build_collider(&self) -> Result<Option<ColliderMesh>> {
        Ok(Some(match &self.collider {
            ColliderSpec::None => return Ok(None),
            ColliderSpec::Obj(p) => read_collider(&self.resolve(p))?,
            ColliderSpec::Icosphere(s) => scene::icosphere(Point3::from(s.center), s.radius, s.subdivisions)?,
            ColliderSpec::Torus(s) => scene::torus(
                Point3::from(s.center),
                s.major_radius,
                s.minor_radius,
                s.major_segments,
                s.minor_segments,
            )?,
            ColliderSpec::Prism(s) => scene::prism(Point3::from(s.center), s.side, s.length, s.divisions)?,
        }))
    }
}
