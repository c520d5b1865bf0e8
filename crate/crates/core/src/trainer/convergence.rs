//! Plateau detection on the per-epoch total loss.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceConfig {
    pub window: usize,
    pub tolerance: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { window: 200, tolerance: 1e-4 }
    }
}

/// True when the mean of the last `window` totals improves on the mean of the
/// window before it by less than `tol`, relative. Needs `2 * window` entries.
pub fn detect_convergence(history: &[f64], window: usize, tol: f64) -> bool {
    if window == 0 || history.len() < 2 * window {
        return false;
    }
    let n = history.len();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let previous = mean(&history[n - 2 * window..n - window]);
    let current = mean(&history[n - window..]);
    let scale = previous.abs();
    if scale == 0.0 {
        return current >= previous;
    }
    (previous - current) / scale < tol
}

/// Number of epochs after which [`detect_convergence`] first holds.
pub fn epochs_to_convergence(history: &[f64], window: usize, tol: f64) -> Option<usize> {
    (2 * window.max(1)..=history.len()).find(|&n| detect_convergence(&history[..n], window, tol))
}

/// Exponential moving average with span `span` (smoothing 2 / (span + 1)).
pub fn ema(values: &[f64], span: usize) -> Vec<f64> {
    let a = 2.0 / (span as f64 + 1.0);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &v in values {
        let next = match acc {
            None => v,
            Some(prev) => a * v + (1.0 - a) * prev,
        };
        acc = Some(next);
        out.push(next);
    }
    out
}
