//! Player 1: where to place the next batch of sampling points.

pub mod lloyd;
pub mod pdf;

use serde::{Deserialize, Serialize};

use crate::losses::LossMask;

pub use lloyd::{lloyd_relax, lloyd_step};
pub use pdf::{
    estimate_cell_losses, min_spacing_report, sample_batch, sample_cell, sample_point_in_cell, update_pdf, DiscretePdf,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Fraction of adaptive points.
    pub mu: f64,
    /// Weight of the previous density in the exponential blend.
    pub gamma: f64,
    pub pdf_rows: usize,
    pub pdf_cols: usize,
    pub n_points: usize,
    pub lloyd_iterations: usize,
    /// Diagnostic spacing threshold in uv units.
    pub min_spacing: f64,
    /// Terms that drive the density estimate.
    pub loss_mask: LossMask,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mu: 0.5,
            gamma: 0.5,
            pdf_rows: 64,
            pdf_cols: 64,
            n_points: 1024,
            lloyd_iterations: 3,
            min_spacing: 0.005,
            loss_mask: LossMask::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if !(0.0..=1.0).contains(&self.mu) {
            errors.push(format!("sampler.mu must lie in [0, 1] (got {})", self.mu));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            errors.push(format!("sampler.gamma must lie in [0, 1] (got {})", self.gamma));
        }
        if self.pdf_rows == 0 || self.pdf_cols == 0 {
            errors.push("sampler.pdf_rows and sampler.pdf_cols must be positive".into());
        }
        if self.n_points == 0 {
            errors.push("sampler.n_points must be positive".into());
        }
        if !(self.min_spacing.is_finite() && self.min_spacing >= 0.0) {
            errors.push(format!("sampler.min_spacing must be >= 0 (got {})", self.min_spacing));
        }
    }
}
