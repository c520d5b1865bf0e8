//! The two-player training loop.

pub mod baseline;
pub mod bench;
pub mod convergence;
pub mod dense;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atlas::Uv;
use crate::error::{DrapeError, Result};
use crate::losses::{LossBreakdown, LossSettings, LossWeights, PhysicsConstants, StrainMode};
use crate::objective::Problem;
use crate::optim::{Optimizer, OptimizerKind};
use crate::sampler::{
    estimate_cell_losses, lloyd_relax, min_spacing_report, sample_batch, update_pdf, DiscretePdf, SamplerConfig,
};
use crate::structure::{build_structure_2d, random_theta, EdgeSet, LocalStructure2D, DEFAULT_SIDE};
use crate::surface::{load_checkpoint, save_checkpoint, GradientBuffer, ModelConfig, SurfaceModel};

pub use convergence::{detect_convergence, ema, epochs_to_convergence, ConvergenceConfig};
pub use dense::{evaluate_dense, DenseReport};

/// Attempts per point before an invalid structure is dropped.
pub const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    Adaptive,
    Uniform,
    MeshConnectivity,
}

impl SamplingMode {
    pub fn name(self) -> &'static str {
        match self {
            SamplingMode::Adaptive => "adaptive",
            SamplingMode::Uniform => "uniform",
            SamplingMode::MeshConnectivity => "mesh_connectivity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub weights: LossWeights,
    pub consts: PhysicsConstants,
    pub sampler: SamplerConfig,
    pub model: ModelConfig,
    pub sampling_mode: SamplingMode,
    pub structure_side: f64,
    pub strain_edges: EdgeSet,
    pub strain_mode: StrainMode,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub convergence: ConvergenceConfig,
    /// Stop as soon as [`detect_convergence`] fires.
    pub stop_on_convergence: bool,
    /// Checkpoint period in epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            epochs: 1000,
            weights: LossWeights::default(),
            consts: PhysicsConstants::default(),
            sampler: SamplerConfig::default(),
            model: ModelConfig::multigrid_default(),
            sampling_mode: SamplingMode::Adaptive,
            structure_side: DEFAULT_SIDE,
            strain_edges: EdgeSet::All9,
            strain_mode: StrainMode::Ratio,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
            convergence: ConvergenceConfig::default(),
            stop_on_convergence: false,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            weights: self.weights,
            consts: self.consts,
            edge_set: self.strain_edges,
            strain_mode: self.strain_mode,
            side: self.structure_side,
        }
    }

    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            errors.push(format!("train.learning_rate must be > 0 (got {})", self.learning_rate));
        }
        if self.epochs == 0 {
            errors.push("train.epochs must be >= 1".into());
        }
        if !(self.structure_side.is_finite() && self.structure_side > 0.0) {
            errors.push(format!("train.structure_side must be > 0 (got {})", self.structure_side));
        }
        if self.convergence.window == 0 {
            errors.push("convergence.window must be >= 1".into());
        }
        self.weights.validate(&mut errors);
        self.consts.validate(&mut errors);
        self.sampler.validate(&mut errors);
        if let Err(e) = self.model.validate() {
            errors.push(format!("model: {e}"));
        }
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
}

/// One row of the loss log. Loss terms are sums over the epoch's points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub strain: f64,
    pub bend: f64,
    pub gravity: f64,
    pub collision: f64,
    pub total: f64,
    pub min_spacing: f64,
    pub epoch_ms: f64,
    pub points: usize,
    pub skipped: usize,
}

impl EpochRecord {
    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            strain: self.strain,
            bend: self.bend,
            gravity: self.gravity,
            collision: self.collision,
            weighted_total: self.total,
        }
    }
}

pub const CSV_HEADER: &str = "epoch,strain,bend,gravity,collision,total,min_spacing,epoch_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub model: SurfaceModel<f32>,
    pub pdf: DiscretePdf,
    pub optimizer: Optimizer,
    pub history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct StateSidecar {
    epoch: usize,
    pdf: DiscretePdf,
    optimizer: Optimizer,
    history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let model = SurfaceModel::init(&config.model, config.seed)?;
        let optimizer = Optimizer::new(config.optimizer, config.learning_rate, model.param_count());
        Ok(Self {
            epoch: 0,
            pdf: DiscretePdf::uniform(config.sampler.pdf_rows, config.sampler.pdf_cols),
            optimizer,
            model,
            history: Vec::new(),
        })
    }

    pub fn totals(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.total).collect()
    }

    /// Write `<stem>.ckpt` and the `<stem>.state.json` side-car.
    pub fn save(&self, stem: &Path) -> Result<()> {
        save_checkpoint(&self.model, &stem.with_extension("ckpt"))?;
        let sidecar = StateSidecar {
            epoch: self.epoch,
            pdf: self.pdf.clone(),
            optimizer: self.optimizer.clone(),
            history: self.history.clone(),
        };
        let text = serde_json::to_string(&sidecar).map_err(|e| DrapeError::Parse(e.to_string()))?;
        fs::write(stem.with_extension("state.json"), text)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let model = load_checkpoint(&stem.with_extension("ckpt"))?;
        let text = fs::read_to_string(stem.with_extension("state.json"))?;
        let s: StateSidecar = serde_json::from_str(&text).map_err(|e| DrapeError::Parse(e.to_string()))?;
        if s.history.len() != s.epoch {
            return Err(DrapeError::ShapeMismatch(format!(
                "state records {} epochs but {} history rows",
                s.epoch,
                s.history.len()
            )));
        }
        Ok(Self { epoch: s.epoch, model, pdf: s.pdf, optimizer: s.optimizer, history: s.history })
    }
}

/// Random stream for one epoch; depends only on the seed and epoch index so
/// a resumed run draws the same numbers.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Player 1: the epoch's sampling points, before structures are built.
fn player_one<R: Rng>(
    state: &mut TrainState,
    config: &TrainConfig,
    problem: &Problem<'_>,
    rng: &mut R,
) -> Result<(Vec<Uv>, usize)> {
    let s = &config.sampler;
    let (mu, lloyd) = match config.sampling_mode {
        SamplingMode::Adaptive => (s.mu, s.lloyd_iterations),
        _ => (0.0, 0),
    };
    let adaptive = (mu * s.n_points as f64).floor() as usize;
    if adaptive > 0 {
        let estimate = estimate_cell_losses(&state.model, problem, s.pdf_rows, s.pdf_cols, &s.loss_mask, rng)?;
        state.pdf = update_pdf(&state.pdf, &estimate, s.gamma)?;
    }
    let points = sample_batch(&state.pdf, s.n_points, mu, rng);
    Ok((if lloyd > 0 { lloyd_relax(&points, lloyd) } else { points }, adaptive))
}

/// Structures for every point, resampling invalid ones from the same source.
fn build_structures<R: Rng>(
    points: &[Uv],
    adaptive: usize,
    pdf: &DiscretePdf,
    config: &TrainConfig,
    problem: &Problem<'_>,
    rng: &mut R,
) -> (Vec<LocalStructure2D>, usize) {
    let mut out = Vec::with_capacity(points.len());
    let mut skipped = 0;
    for (k, &p) in points.iter().enumerate() {
        let mut s = build_structure_2d(p, config.structure_side, random_theta(rng));
        let mut tries = 0;
        while !s.is_valid(problem.mesh) && tries < MAX_RESAMPLES {
            let q = if k < adaptive { sample_batch(pdf, 1, 1.0, rng)[0] } else { Uv::new(rng.gen(), rng.gen()) };
            s = build_structure_2d(q, config.structure_side, random_theta(rng));
            tries += 1;
        }
        if s.is_valid(problem.mesh) {
            out.push(s);
        } else {
            skipped += 1;
        }
    }
    (out, skipped)
}

/// Run one epoch: sample, score, and take one optimizer step.
pub fn train_epoch(state: &mut TrainState, config: &TrainConfig, problem: &Problem<'_>) -> Result<EpochRecord> {
    let start = Instant::now();
    let epoch = state.epoch;
    let mut rng = epoch_rng(config.seed, epoch);

    let (points, adaptive) = player_one(state, config, problem, &mut rng)?;
    let min_spacing = min_spacing_report(&points, config.sampler.min_spacing).0;
    let (structures, skipped) = build_structures(&points, adaptive, &state.pdf, config, problem, &mut rng);
    if structures.is_empty() {
        return Err(DrapeError::AllPointsInvalid);
    }

    let mut grads = GradientBuffer::zeros_like(&state.model);
    let eval = problem.evaluate(&state.model, &structures, Some(&mut grads))?;
    let total = eval.total;
    if !total.weighted_total.is_finite() || !grads.is_finite() {
        return Err(DrapeError::NonFiniteLoss {
            epoch,
            detail: format!(
                "strain {} bend {} gravity {} collision {} total {} |grad|^2 {}",
                total.strain,
                total.bend,
                total.gravity,
                total.collision,
                total.weighted_total,
                grads.norm_squared()
            ),
        });
    }
    state.optimizer.step(state.model.params_mut(), grads.values())?;

    let record = EpochRecord {
        epoch,
        strain: total.strain,
        bend: total.bend,
        gravity: total.gravity,
        collision: total.collision,
        total: total.weighted_total,
        min_spacing,
        epoch_ms: start.elapsed().as_secs_f64() * 1e3,
        points: structures.len(),
        skipped,
    };
    state.history.push(record);
    state.epoch += 1;
    Ok(record)
}

/// Where [`train`] writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub dir: Option<PathBuf>,
}

impl TrainOutputs {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub state: TrainState,
    /// First epoch count at which the convergence test fired.
    pub converged_at: Option<usize>,
    pub checkpoints: Vec<PathBuf>,
}

fn csv_row(r: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{:.3}",
        r.epoch, r.strain, r.bend, r.gravity, r.collision, r.total, r.min_spacing, r.epoch_ms
    )
}

/// Train from scratch.
pub fn train(config: &TrainConfig, problem: &Problem<'_>, outputs: &TrainOutputs) -> Result<TrainResult> {
    config.validate()?;
    resume(TrainState::new(config)?, config, problem, outputs)
}

/// Continue training `state` until `config.epochs` epochs are complete.
pub fn resume(
    mut state: TrainState,
    config: &TrainConfig,
    problem: &Problem<'_>,
    outputs: &TrainOutputs,
) -> Result<TrainResult> {
    config.validate()?;
    let mut log = match &outputs.dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join("loss.csv");
            let mut f = fs::File::create(&path)?;
            writeln!(f, "{CSV_HEADER}")?;
            for r in &state.history {
                writeln!(f, "{}", csv_row(r))?;
            }
            Some(f)
        }
        None => None,
    };
    let mut checkpoints = Vec::new();
    let window = config.convergence.window;
    let mut converged_at = None;
    let mut totals = state.totals();
    while state.epoch < config.epochs {
        let record = train_epoch(&mut state, config, problem)?;
        totals.push(record.total);
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", csv_row(&record))?;
            f.flush()?;
        }
        if converged_at.is_none() && totals.len() >= 2 * window && detect_convergence(&totals, window, config.convergence.tolerance) {
            converged_at = Some(state.epoch);
        }
        if let Some(dir) = &outputs.dir {
            if config.checkpoint_every > 0 && state.epoch % config.checkpoint_every == 0 && state.epoch < config.epochs {
                let stem = dir.join(format!("epoch{:06}", state.epoch));
                state.save(&stem)?;
                checkpoints.push(stem.with_extension("ckpt"));
            }
        }
        if converged_at.is_some() && config.stop_on_convergence {
            break;
        }
    }
    if let Some(dir) = &outputs.dir {
        let stem = dir.join("final");
        state.save(&stem)?;
        checkpoints.push(stem.with_extension("ckpt"));
    }
    Ok(TrainResult { state, converged_at, checkpoints })
}
