//! Cell-grid density over uv space and inverse transform sampling.
//!
//! Row `i` covers `v in [i/M, (i+1)/M)`, column `j` covers `u in [j/N, (j+1)/N)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::atlas::Uv;
use crate::error::{DrapeError, Result};
use crate::losses::LossMask;
use crate::objective::Problem;
use crate::real::Real;
use crate::structure::{build_structure_2d, random_theta};
use crate::surface::SurfaceModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePdf {
    rows: usize,
    cols: usize,
    probs: Vec<f64>,
}

impl DiscretePdf {
    pub fn uniform(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        Self { rows, cols, probs: vec![1.0 / n as f64; n] }
    }

    /// Normalize nonnegative weights; falls back to uniform when they carry no mass.
    pub fn from_weights(rows: usize, cols: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(DrapeError::ShapeMismatch(format!(
                "{} weights for a {rows}x{cols} grid",
                weights.len()
            )));
        }
        let clean: Vec<f64> = weights.into_iter().map(|w| if w.is_finite() && w > 0.0 { w } else { 0.0 }).collect();
        let total: f64 = clean.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Ok(Self::uniform(rows, cols));
        }
        Ok(Self { rows, cols, probs: clean.into_iter().map(|w| w / total).collect() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.cols + j]
    }

    pub fn row_marginals(&self) -> Vec<f64> {
        self.probs.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Uv {
        Uv::new((j as f64 + 0.5) / self.cols as f64, (i as f64 + 0.5) / self.rows as f64)
    }
}

/// `gamma * pdf + (1 - gamma) * estimate`, renormalized.
pub fn update_pdf(pdf: &DiscretePdf, estimate: &DiscretePdf, gamma: f64) -> Result<DiscretePdf> {
    if (pdf.rows, pdf.cols) != (estimate.rows, estimate.cols) {
        return Err(DrapeError::ShapeMismatch(format!(
            "pdf is {}x{}, estimate is {}x{}",
            pdf.rows, pdf.cols, estimate.rows, estimate.cols
        )));
    }
    let blended = pdf.probs.iter().zip(&estimate.probs).map(|(p, q)| gamma * p + (1.0 - gamma) * q).collect();
    DiscretePdf::from_weights(pdf.rows, pdf.cols, blended)
}

/// Smallest index whose cumulative sum reaches `x`, never landing on a zero entry.
fn invert_cdf(weights: &[f64], x: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = x * total;
    let mut acc = 0.0;
    let mut last_positive = None;
    for (k, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last_positive = Some(k);
        if acc >= target {
            return k;
        }
    }
    // round-off left the last cumulative value just below the target
    last_positive.unwrap_or(0)
}

/// Row from the marginal CDF at `u`, column from that row's conditional CDF at `v`.
pub fn sample_cell(pdf: &DiscretePdf, u: f64, v: f64) -> (usize, usize) {
    let i = invert_cdf(&pdf.row_marginals(), u);
    let j = invert_cdf(&pdf.probs[i * pdf.cols..(i + 1) * pdf.cols], v);
    (i, j)
}

/// Uniform point inside cell `(i, j)` of an `rows x cols` grid.
pub fn sample_point_in_cell<R: Rng + ?Sized>(i: usize, j: usize, rows: usize, cols: usize, rng: &mut R) -> Uv {
    let u = (j as f64 + rng.gen::<f64>()) / cols as f64;
    let v = (i as f64 + rng.gen::<f64>()) / rows as f64;
    // guard against rounding up onto the next cell's lower edge
    Uv::new(u.min(next_below((j + 1) as f64 / cols as f64)), v.min(next_below((i + 1) as f64 / rows as f64)))
}

fn next_below(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

/// `floor(mu * n)` draws from `pdf` followed by uniform draws for the rest.
pub fn sample_batch<R: Rng + ?Sized>(pdf: &DiscretePdf, n: usize, mu: f64, rng: &mut R) -> Vec<Uv> {
    let adaptive = ((mu * n as f64).floor() as usize).min(n);
    let marginals = pdf.row_marginals();
    let mut out = Vec::with_capacity(n);
    for _ in 0..adaptive {
        let (u, v) = (rng.gen::<f64>(), rng.gen::<f64>());
        let i = invert_cdf(&marginals, u);
        let j = invert_cdf(&pdf.probs[i * pdf.cols..(i + 1) * pdf.cols], v);
        out.push(sample_point_in_cell(i, j, pdf.rows, pdf.cols, rng));
    }
    for _ in adaptive..n {
        out.push(Uv::new(rng.gen(), rng.gen()));
    }
    out
}

/// Masked weighted loss at every cell center (random rotation per cell),
/// clamped at zero and normalized. Cells without a valid structure get 0.
pub fn estimate_cell_losses<T: Real, R: Rng + ?Sized>(
    model: &SurfaceModel<T>,
    problem: &Problem<'_>,
    rows: usize,
    cols: usize,
    mask: &LossMask,
    rng: &mut R,
) -> Result<DiscretePdf> {
    let mut cells = Vec::new();
    let mut structures = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let center = Uv::new((j as f64 + 0.5) / cols as f64, (i as f64 + 0.5) / rows as f64);
            let s = build_structure_2d(center, problem.settings.side, random_theta(rng));
            if s.is_valid(problem.mesh) {
                cells.push(i * cols + j);
                structures.push(s);
            }
        }
    }
    let mut weights = vec![0.0; rows * cols];
    if !structures.is_empty() {
        let eval = problem.evaluate(model, &structures, None)?;
        for (&cell, b) in cells.iter().zip(&eval.per_structure) {
            weights[cell] = b.masked_total(&problem.settings.weights, mask).max(0.0);
        }
    }
    DiscretePdf::from_weights(rows, cols, weights)
}

/// Smallest pairwise distance and the number of pairs closer than `delta`.
pub fn min_spacing_report(points: &[Uv], delta: f64) -> (f64, usize) {
    let mut min = f64::INFINITY;
    let mut violations = 0;
    for (a, p) in points.iter().enumerate() {
        for q in &points[a + 1..] {
            let d = (p - q).norm();
            min = min.min(d);
            if d < delta {
                violations += 1;
            }
        }
    }
    (min, violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossSettings;
    use crate::scene::flat_square;
    use crate::surface::ModelConfig;
    use nalgebra::Point3;
    use proptest::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn update_examples() {
        let p = DiscretePdf::from_weights(1, 3, vec![0.2, 0.3, 0.5]).unwrap();
        let q = DiscretePdf::from_weights(1, 3, vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(update_pdf(&p, &q, 1.0).unwrap(), p);
        assert_eq!(update_pdf(&p, &q, 0.0).unwrap(), q);
        let half = update_pdf(&p, &q, 0.5).unwrap();
        assert!((half.prob(0, 0) - 0.3).abs() < 1e-15);
        assert!(update_pdf(&p, &DiscretePdf::uniform(3, 1), 0.5).is_err());
    }

    #[test]
    fn sample_cell_examples() {
        // (row 2, col 1) in 1-based indexing
        assert_eq!(sample_cell(&DiscretePdf::uniform(2, 2), 0.6, 0.3), (1, 0));
        let mut w = vec![0.0; 20];
        w[13] = 1.0;
        let point = DiscretePdf::from_weights(4, 5, w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert_eq!(sample_cell(&point, rng.gen::<f64>(), rng.gen::<f64>()), (2, 3));
        }
        assert_eq!(sample_cell(&point, 0.0, 0.0), (2, 3));
        assert_eq!(sample_cell(&point, 1.0, 1.0), (2, 3));
    }

    #[test]
    fn zero_rows_are_never_selected() {
        let pdf = DiscretePdf::from_weights(3, 2, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        for k in 0..=100 {
            let u = k as f64 / 100.0;
            assert_eq!(sample_cell(&pdf, u, u).0, 1);
        }
    }

    #[test]
    fn point_in_cell_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = sample_point_in_cell(0, 0, 1, 1, &mut rng);
            assert!((0.0..1.0).contains(&p.x) && (0.0..1.0).contains(&p.y));
            let q = sample_point_in_cell(3, 5, 8, 7, &mut rng);
            assert!(q.x >= 5.0 / 7.0 && q.x < 6.0 / 7.0 && q.y >= 3.0 / 8.0 && q.y < 4.0 / 8.0);
        }
    }

    #[test]
    fn point_in_cell_mean_is_cell_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let (i, j, rows, cols) = (2, 6, 4, 8);
        let mut mean = Uv::origin();
        for _ in 0..n {
            mean += sample_point_in_cell(i, j, rows, cols, &mut rng).coords / n as f64;
        }
        // std of U(0, w) is w / sqrt(12)
        let (su, sv) = (1.0 / cols as f64 / 12f64.sqrt(), 1.0 / rows as f64 / 12f64.sqrt());
        let se = (n as f64).sqrt();
        assert!((mean.x - 6.5 / 8.0).abs() < 3.0 * su / se);
        assert!((mean.y - 2.5 / 4.0).abs() < 3.0 * sv / se);
    }

    #[test]
    fn batch_split() {
        let mut w = vec![0.0; 16];
        w[0] = 1.0;
        let pdf = DiscretePdf::from_weights(4, 4, w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let in_first = |p: &Uv| p.x < 0.25 && p.y < 0.25;
        let all = sample_batch(&pdf, 10, 1.0, &mut rng);
        assert_eq!(all.len(), 10);
        assert!(all.iter().all(in_first));
        let half = sample_batch(&pdf, 10, 0.5, &mut rng);
        assert!(half[..5].iter().all(in_first));
        let none = sample_batch(&pdf, 200, 0.0, &mut rng);
        assert!(none.iter().filter(|p| in_first(p)).count() < 40);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(sample_batch(&pdf, 50, 0.5, &mut a), sample_batch(&pdf, 50, 0.5, &mut b));
    }

    #[test]
    fn spacing_examples() {
        assert_eq!(min_spacing_report(&[Uv::new(0.0, 0.0), Uv::new(0.3, 0.4)], 0.1), (0.5, 0));
        let (d, v) = min_spacing_report(&[Uv::new(0.2, 0.2), Uv::new(0.2, 0.2), Uv::new(0.9, 0.9)], 0.1);
        assert_eq!(d, 0.0);
        assert!(v >= 1);
    }

    #[test]
    fn rest_state_estimate_is_uniform() {
        let mesh = flat_square(3, 1.0, Point3::new(0.0, 0.0, 0.5)).unwrap();
        let model = SurfaceModel::<f64>::init(&ModelConfig::multigrid_default(), 0).unwrap();
        let problem = Problem::new(&mesh, None, LossSettings::default());
        let mask = LossMask { gravity: false, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let est = estimate_cell_losses(&model, &problem, 8, 8, &mask, &mut rng).unwrap();
        for &p in est.probs() {
            assert!((p - 1.0 / 64.0).abs() < 1e-12);
        }
        assert_eq!(DiscretePdf::from_weights(2, 2, vec![0.0; 4]).unwrap(), DiscretePdf::uniform(2, 2));
    }

    #[test]
    fn hot_cell_dominates_estimate() {
        // a steep bump in the displacement at one cell center makes its strain dominate
        use crate::surface::{EncoderConfig, InputEncoding, MlpConfig};
        let config = ModelConfig {
            encoding: InputEncoding::MultiGrid(EncoderConfig { layer_resolutions: vec![9], feature_dim: 3 }),
            mlp: MlpConfig::new(vec![3, 3]),
        };
        let mut model = SurfaceModel::<f64>::init(&config, 0).unwrap();
        model.params_mut().iter_mut().for_each(|p| *p = 0.0);
        for d in 0..3 {
            model.weights_mut(0)[[d, d]] = 1.0;
        }
        // grid node (4, 4) sits at uv (0.5, 0.5), the shared corner of four 8x8 cells
        model.grid_features_mut(0)[(4 * 9 + 4) * 3 + 2] = 0.3;
        let mesh = flat_square(3, 1.0, Point3::origin()).unwrap();
        let settings = LossSettings { side: 0.02, ..Default::default() };
        let problem = Problem::new(&mesh, None, settings);
        let mask = LossMask { gravity: false, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let est = estimate_cell_losses(&model, &problem, 8, 8, &mask, &mut rng).unwrap();
        let hot: f64 = [(3, 3), (3, 4), (4, 3), (4, 4)].iter().map(|&(i, j)| est.prob(i, j)).sum();
        assert!(hot > 0.9, "hot mass {hot}");
        // the estimate is the normalized direct structure loss
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut direct = vec![];
        for i in 0..8 {
            for j in 0..8 {
                let theta = random_theta(&mut rng);
                let b = crate::losses::structure_loss(&model, &mesh, None, est.cell_center(i, j), theta, &settings).unwrap();
                direct.push(b.masked_total(&settings.weights, &mask));
            }
        }
        let total: f64 = direct.iter().sum();
        for (k, d) in direct.iter().enumerate() {
            assert!((est.probs()[k] - d / total).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn update_preserves_normalization(
            a in proptest::collection::vec(0.0f64..1.0, 12),
            b in proptest::collection::vec(0.0f64..1.0, 12),
            gamma in 0.0f64..=1.0,
        ) {
            let p = DiscretePdf::from_weights(3, 4, a).unwrap();
            let q = DiscretePdf::from_weights(3, 4, b).unwrap();
            let r = update_pdf(&p, &q, gamma).unwrap();
            prop_assert!((r.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(r.probs().iter().all(|&x| x >= 0.0));
        }
    }
}
