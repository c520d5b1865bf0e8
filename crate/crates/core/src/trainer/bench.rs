//! Supervised fitting benchmark comparing input encodings.

use std::f64::consts::PI;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atlas::Uv;
use crate::error::{DrapeError, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::surface::{GradientBuffer, ModelConfig, SurfaceModel};

/// Largest allowed spread between variant budgets, relative to the smallest.
pub const BUDGET_TOLERANCE: f64 = 0.005;

/// A sine-wave height field over the UV square, as a displacement `(0, 0, h)`
/// from the flat rest sheet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineTarget {
    pub amplitude: f64,
    pub frequency: f64,
}

impl Default for SineTarget {
    fn default() -> Self {
        Self { amplitude: 0.1, frequency: 5.0 }
    }
}

impl SineTarget {
    pub fn height(&self, p: &Uv) -> f64 {
        let w = 2.0 * PI * self.frequency;
        self.amplitude * (w * p.x).sin() * (w * p.y).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub target: SineTarget,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Dense-grid mean squared error that counts as fitted.
    pub threshold: f64,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub eval_resolution: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            target: SineTarget::default(),
            batch_size: 1024,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            threshold: 1e-6,
            max_epochs: 3000,
            eval_every: 10,
            eval_resolution: 64,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.batch_size == 0 {
            errors.push("bench.batch_size must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            errors.push(format!("bench.learning_rate must be > 0 (got {})", self.learning_rate));
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            errors.push(format!("bench.threshold must be > 0 (got {})", self.threshold));
        }
        if self.eval_every == 0 {
            errors.push("bench.eval_every must be >= 1".into());
        }
        if self.eval_resolution < 2 {
            errors.push("bench.eval_resolution must be >= 2".into());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchVariant {
    pub name: String,
    pub model: ModelConfig,
}

impl BenchVariant {
    /// Multigrid, positional and plain-MLP models at matched budgets.
    pub fn standard() -> Vec<Self> {
        vec![
            Self { name: "multigrid".into(), model: ModelConfig::multigrid_default() },
            Self { name: "positional".into(), model: ModelConfig::positional() },
            Self { name: "baseline_mlp".into(), model: ModelConfig::baseline_mlp() },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub name: String,
    pub parameters: usize,
    /// Training epochs completed when the threshold was first met.
    pub epochs_to_threshold: Option<usize>,
    pub wall_clock_ms: f64,
    pub final_mse: f64,
}

impl BenchResult {
    /// Epoch count for ranking; a variant that never fits ranks after the cap.
    pub fn rank_epochs(&self, max_epochs: usize) -> usize {
        self.epochs_to_threshold.unwrap_or(max_epochs + 1)
    }
}

fn grid_points(res: usize) -> Vec<Uv> {
    let mut pts = Vec::with_capacity(res * res);
    for i in 0..res {
        for j in 0..res {
            pts.push(Uv::new((j as f64 + 0.5) / res as f64, (i as f64 + 0.5) / res as f64));
        }
    }
    pts
}

/// Mean over `points` of the squared distance between model and target displacement.
pub fn surface_mse(model: &SurfaceModel<f32>, target: &SineTarget, points: &[Uv]) -> Result<f64> {
    let tape = model.forward(points)?;
    let mut sum = 0.0;
    for (k, p) in points.iter().enumerate() {
        let d = tape.displacement(k);
        let dz = d.z as f64 - target.height(p);
        sum += (d.x as f64).powi(2) + (d.y as f64).powi(2) + dz * dz;
    }
    Ok(sum / points.len() as f64)
}

/// Train one variant until the dense-grid error drops below the threshold.
pub fn fit_variant(variant: &BenchVariant, config: &BenchConfig) -> Result<BenchResult> {
    let start = Instant::now();
    let mut model = SurfaceModel::<f32>::init(&variant.model, config.seed)?;
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, model.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let eval_points = grid_points(config.eval_resolution);
    let mut grads = GradientBuffer::zeros_like(&model);
    let mut upstream = Array2::<f32>::zeros((config.batch_size, 3));
    let mut mse = surface_mse(&model, &config.target, &eval_points)?;
    let mut reached = (mse < config.threshold).then_some(0);
    let mut epoch = 0;
    while reached.is_none() && epoch < config.max_epochs {
        let batch: Vec<Uv> = (0..config.batch_size).map(|_| Uv::new(rng.gen(), rng.gen())).collect();
        let tape = model.forward(&batch)?;
        let scale = 2.0 / config.batch_size as f64;
        for (k, p) in batch.iter().enumerate() {
            let d = tape.displacement(k);
            upstream[[k, 0]] = (scale * d.x as f64) as f32;
            upstream[[k, 1]] = (scale * d.y as f64) as f32;
            upstream[[k, 2]] = (scale * (d.z as f64 - config.target.height(p))) as f32;
        }
        grads.zero();
        model.backward(&tape, upstream.view(), &mut grads)?;
        if !grads.is_finite() {
            return Err(DrapeError::NonFiniteLoss { epoch, detail: format!("{} gradient", variant.name) });
        }
        optimizer.step(model.params_mut(), grads.values())?;
        epoch += 1;
        if epoch % config.eval_every == 0 || epoch == config.max_epochs {
            mse = surface_mse(&model, &config.target, &eval_points)?;
            if mse < config.threshold {
                reached = Some(epoch);
            }
        }
    }
    Ok(BenchResult {
        name: variant.name.clone(),
        parameters: model.param_count(),
        epochs_to_threshold: reached,
        wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
        final_mse: mse,
    })
}

/// Check that the variants share a budget to within [`BUDGET_TOLERANCE`].
pub fn check_budgets(variants: &[BenchVariant]) -> Result<()> {
    let counts: Vec<usize> = variants.iter().map(|v| v.model.param_count()).collect();
    let (Some(&lo), Some(&hi)) = (counts.iter().min(), counts.iter().max()) else {
        return Ok(());
    };
    if (hi - lo) as f64 > BUDGET_TOLERANCE * lo as f64 {
        let listing: Vec<String> = variants.iter().zip(&counts).map(|(v, c)| format!("{} {c}", v.name)).collect();
        return Err(DrapeError::BudgetMismatch(listing.join(", ")));
    }
    Ok(())
}

pub fn supervised_bench(variants: &[BenchVariant], config: &BenchConfig) -> Result<Vec<BenchResult>> {
    let mut errors = Vec::new();
    config.validate(&mut errors);
    if !errors.is_empty() {
        return Err(DrapeError::Config(errors));
    }
    check_budgets(variants)?;
    variants.iter().map(|v| fit_variant(v, config)).collect()
}
