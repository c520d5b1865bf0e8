//! First-order optimizers over a flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{DrapeError, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Optimizer with its full state, so a run can be resumed exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd { learning_rate: f64 },
    Adam { learning_rate: f64, step: u64, m: Vec<f64>, v: Vec<f64> },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, num_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { learning_rate },
            OptimizerKind::Adam => {
                Optimizer::Adam { learning_rate, step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
            }
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::Sgd { .. } => OptimizerKind::Sgd,
            Optimizer::Adam { .. } => OptimizerKind::Adam,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Optimizer::Sgd { learning_rate } | Optimizer::Adam { learning_rate, .. } => *learning_rate,
        }
    }

    /// Apply one update in place.
    pub fn step<T: Real>(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(DrapeError::ShapeMismatch(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        match self {
            Optimizer::Sgd { learning_rate } => {
                let lr = T::of(*learning_rate);
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { learning_rate, step, m, v } => {
                if m.len() != params.len() {
                    return Err(DrapeError::ShapeMismatch(format!(
                        "optimizer state holds {} entries, model has {}",
                        m.len(),
                        params.len()
                    )));
                }
                *step += 1;
                let t = *step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for k in 0..params.len() {
                    let g = grads[k].to_f64();
                    m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g;
                    v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g * g;
                    let update = *learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPSILON);
                    params[k] -= T::of(update);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_on_a_parabola() {
        // L = x^2, grad = 2x, so x' = x (1 - 2 lr)
        let lr = 0.0005;
        let mut opt = Optimizer::new(OptimizerKind::Sgd, lr, 1);
        let mut x = [3.0f64];
        let g = [2.0 * x[0]];
        opt.step(&mut x, &g).unwrap();
        assert!((x[0] - 3.0 * (1.0 - 2.0 * lr)).abs() < 1e-15);
    }

    #[test]
    fn sgd_step_follows_negative_gradient() {
        let lr = 0.01;
        let mut opt = Optimizer::new(OptimizerKind::Sgd, lr, 4);
        let before = [0.5f64, -1.0, 2.0, 0.0];
        let g = [0.3f64, -0.2, 1.5, -4.0];
        let mut after = before;
        opt.step(&mut after, &g).unwrap();
        let inner: f64 = after.iter().zip(&before).zip(&g).map(|((a, b), g)| (a - b) * g).sum();
        let norm2: f64 = g.iter().map(|x| x * x).sum();
        assert!((inner + lr * norm2).abs() <= 1e-6 * lr * norm2);
    }

    #[test]
    fn adam_first_step_is_learning_rate_sized() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, 2);
        let mut x = [1.0f32, 1.0];
        opt.step(&mut x, &[1000.0, -0.001]).unwrap();
        assert!((x[0] - 0.9).abs() < 1e-6 && (x[1] - 1.1).abs() < 1e-4);
    }

    #[test]
    fn adam_minimizes_a_quadratic_and_round_trips() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05, 1);
        let mut x = [2.0f64];
        for _ in 0..500 {
            let g = [2.0 * x[0]];
            opt.step(&mut x, &g).unwrap();
        }
        assert!(x[0].abs() < 0.05);
        let text = serde_json::to_string(&opt).unwrap();
        assert_eq!(serde_json::from_str::<Optimizer>(&text).unwrap(), opt);
        assert!(opt.step(&mut [0.0f64, 1.0], &[0.0, 0.0]).is_err());
    }
}
