use nalgebra::{Point3, Vector3};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Activation, InputEncoding, ModelConfig};
use super::encoding::{check_domain, positional_encode, GridLayer, GridTap};
use crate::atlas::{GarmentRestMesh, Uv};
use crate::error::{DrapeError, Result};
use crate::real::Real;

/// Half-width of the uniform distribution used for initial grid features.
pub const GRID_INIT_SCALE: f64 = 1e-4;

/// Offsets of every parameter block inside the flat parameter vector.
///
/// Order: grid layers (node-major, features innermost), then per MLP layer
/// its `d_in x d_out` row-major weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub grid_offsets: Vec<usize>,
    pub weight_offsets: Vec<usize>,
    pub bias_offsets: Vec<usize>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut at = 0;
        let mut grid_offsets = Vec::new();
        if let InputEncoding::MultiGrid(enc) = &config.encoding {
            for r in &enc.layer_resolutions {
                grid_offsets.push(at);
                at += r * r * enc.feature_dim;
            }
        }
        let mut weight_offsets = Vec::new();
        let mut bias_offsets = Vec::new();
        for w in config.mlp.layer_dims.windows(2) {
            weight_offsets.push(at);
            at += w[0] * w[1];
            bias_offsets.push(at);
            at += w[1];
        }
        Self { grid_offsets, weight_offsets, bias_offsets, total: at }
    }
}

/// All trainable parameters of the implicit surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceModel<T> {
    config: ModelConfig,
    layout: ParamLayout,
    params: Vec<T>,
    seed: u64,
}

/// Accumulated gradients, laid out exactly like [`SurfaceModel`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer<T> {
    values: Vec<T>,
}

impl<T: Real> GradientBuffer<T> {
    pub fn zeros_like(model: &SurfaceModel<T>) -> Self {
        Self { values: vec![T::zero(); model.layout.total] }
    }

    pub fn zero(&mut self) {
        self.values.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|g| g.to_f64().is_finite())
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|g| g.to_f64() * g.to_f64()).sum()
    }
}

/// Intermediate values of a batched forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape<T> {
    batch: usize,
    /// `batch * layers` grid taps (multigrid encoding only).
    taps: Vec<GridTap>,
    /// `activations[0]` is the encoded input, `activations[k]` the output of
    /// MLP layer `k - 1`; the last entry is the displacement.
    activations: Vec<Array2<T>>,
}

impl<T: Real> ForwardTape<T> {
    pub fn len(&self) -> usize {
        self.batch
    }

    pub fn is_empty(&self) -> bool {
        self.batch == 0
    }

    /// `batch x 3` displacements.
    pub fn output(&self) -> ArrayView2<'_, T> {
        self.activations.last().unwrap().view()
    }

    pub fn displacement(&self, row: usize) -> Vector3<T> {
        let out = self.activations.last().unwrap();
        Vector3::new(out[[row, 0]], out[[row, 1]], out[[row, 2]])
    }

    pub fn encoded(&self) -> ArrayView2<'_, T> {
        self.activations[0].view()
    }
}

impl<T: Real> SurfaceModel<T> {
    /// Near-zero grids, Glorot-uniform hidden weights, zero biases, and an
    /// all-zero output layer, so a fresh model predicts no displacement.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); layout.total];

        if let InputEncoding::MultiGrid(_) = &config.encoding {
            let end = layout.weight_offsets[0];
            for p in &mut params[..end] {
                *p = T::of(rng.gen_range(-GRID_INIT_SCALE..=GRID_INIT_SCALE));
            }
        }
        let dims = &config.mlp.layer_dims;
        let last = dims.len() - 2;
        for (k, w) in dims.windows(2).enumerate() {
            if k == last {
                break;
            }
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let at = layout.weight_offsets[k];
            for p in &mut params[at..at + w[0] * w[1]] {
                *p = T::of(rng.gen_range(-bound..=bound));
            }
        }
        Ok(Self { config: config.clone(), layout, params, seed })
    }

    /// Wrap an existing flat parameter vector.
    pub fn from_params(config: &ModelConfig, seed: u64, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        if params.len() != layout.total {
            return Err(DrapeError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self { config: config.clone(), layout, params, seed })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_grids(&self) -> usize {
        self.layout.grid_offsets.len()
    }

    pub fn grid(&self, layer: usize) -> GridLayer<'_, T> {
        let InputEncoding::MultiGrid(enc) = &self.config.encoding else {
            panic!("model has no feature grids");
        };
        let r = enc.layer_resolutions[layer];
        let at = self.layout.grid_offsets[layer];
        GridLayer {
            resolution: r,
            feature_dim: enc.feature_dim,
            features: &self.params[at..at + r * r * enc.feature_dim],
        }
    }

    fn dims(&self, k: usize) -> (usize, usize) {
        let d = &self.config.mlp.layer_dims;
        (d[k], d[k + 1])
    }

    pub fn weights(&self, k: usize) -> ArrayView2<'_, T> {
        let (din, dout) = self.dims(k);
        let at = self.layout.weight_offsets[k];
        ArrayView2::from_shape((din, dout), &self.params[at..at + din * dout]).unwrap()
    }

    pub fn weights_mut(&mut self, k: usize) -> ArrayViewMut2<'_, T> {
        let (din, dout) = self.dims(k);
        let at = self.layout.weight_offsets[k];
        ArrayViewMut2::from_shape((din, dout), &mut self.params[at..at + din * dout]).unwrap()
    }

    pub fn bias(&self, k: usize) -> ArrayView1<'_, T> {
        let (_, dout) = self.dims(k);
        let at = self.layout.bias_offsets[k];
        ArrayView1::from(&self.params[at..at + dout])
    }

    pub fn bias_mut(&mut self, k: usize) -> ArrayViewMut1<'_, T> {
        let (_, dout) = self.dims(k);
        let at = self.layout.bias_offsets[k];
        ArrayViewMut1::from(&mut self.params[at..at + dout])
    }

    pub fn grid_features_mut(&mut self, layer: usize) -> &mut [T] {
        let start = self.layout.grid_offsets[layer];
        let end = self
            .layout
            .grid_offsets
            .get(layer + 1)
            .copied()
            .unwrap_or(self.layout.weight_offsets[0]);
        &mut self.params[start..end]
    }

    /// Encoded MLP input for one point.
    pub fn encode(&self, p: &Uv) -> Result<Vec<T>> {
        let tape = self.forward(std::slice::from_ref(p))?;
        Ok(tape.activations[0].row(0).to_vec())
    }

    /// Displacement predicted at `p`.
    pub fn deform(&self, p: &Uv) -> Result<Vector3<T>> {
        Ok(self.forward(std::slice::from_ref(p))?.displacement(0))
    }

    /// Rest position plus predicted displacement.
    pub fn surface_position(&self, mesh: &GarmentRestMesh, p: &Uv) -> Result<Point3<T>> {
        let rest = mesh.rest_position(p)?;
        let d = self.deform(p)?;
        Ok(Point3::new(T::of(rest.x) + d.x, T::of(rest.y) + d.y, T::of(rest.z) + d.z))
    }

    fn encode_batch(&self, points: &[Uv]) -> Result<(Vec<GridTap>, Array2<T>)> {
        let width = self.config.encoding.output_dim();
        let mut input = Array2::<T>::zeros((points.len(), width));
        let mut taps = Vec::new();
        match &self.config.encoding {
            InputEncoding::MultiGrid(enc) => {
                taps.reserve(points.len() * enc.layer_resolutions.len());
                for (b, p) in points.iter().enumerate() {
                    let (u, v) = check_domain(p)?;
                    let mut row = input.row_mut(b);
                    let row = row.as_slice_mut().unwrap();
                    for (l, &r) in enc.layer_resolutions.iter().enumerate() {
                        let tap = GridTap::new(r, u, v);
                        let f = enc.feature_dim;
                        self.grid(l).interpolate_into(&tap, &mut row[l * f..(l + 1) * f]);
                        taps.push(tap);
                    }
                }
            }
            InputEncoding::Raw => {
                for (b, p) in points.iter().enumerate() {
                    let (u, v) = check_domain(p)?;
                    input[[b, 0]] = T::of(u);
                    input[[b, 1]] = T::of(v);
                }
            }
            InputEncoding::Positional { frequencies } => {
                for (b, p) in points.iter().enumerate() {
                    let (u, v) = check_domain(p)?;
                    for (k, x) in positional_encode(&Uv::new(u, v), *frequencies).into_iter().enumerate() {
                        input[[b, k]] = T::of(x);
                    }
                }
            }
        }
        Ok((taps, input))
    }

    /// Batched forward pass recording everything the backward pass needs.
    pub fn forward(&self, points: &[Uv]) -> Result<ForwardTape<T>> {
        let (taps, input) = self.encode_batch(points)?;
        let n = self.config.mlp.num_layers();
        let mut activations = Vec::with_capacity(n + 1);
        activations.push(input);
        for k in 0..n {
            let mut z = activations[k].dot(&self.weights(k));
            z += &self.bias(k);
            if k + 1 < n {
                match self.config.mlp.activation {
                    Activation::Relu => z.mapv_inplace(|x| if x > T::zero() { x } else { T::zero() }),
                    Activation::Tanh => z.mapv_inplace(|x| x.tanh()),
                }
            }
            activations.push(z);
        }
        Ok(ForwardTape { batch: points.len(), taps, activations })
    }

    /// Accumulate `d loss / d params` given `d loss / d displacement` per row.
    pub fn backward(
        &self,
        tape: &ForwardTape<T>,
        upstream: ArrayView2<'_, T>,
        grads: &mut GradientBuffer<T>,
    ) -> Result<()> {
        if grads.values.len() != self.layout.total {
            return Err(DrapeError::ShapeMismatch(format!(
                "gradient buffer holds {} values, model has {}",
                grads.values.len(),
                self.layout.total
            )));
        }
        if upstream.dim() != (tape.batch, 3) {
            return Err(DrapeError::ShapeMismatch(format!(
                "upstream is {:?}, expected ({}, 3)",
                upstream.dim(),
                tape.batch
            )));
        }
        let n = self.config.mlp.num_layers();
        let grid_input = matches!(self.config.encoding, InputEncoding::MultiGrid(_));
        let mut delta = upstream.to_owned();
        for k in (0..n).rev() {
            let (din, dout) = self.dims(k);
            let input = &tape.activations[k];
            {
                let at = self.layout.weight_offsets[k];
                let mut gw = ArrayViewMut2::from_shape((din, dout), &mut grads.values[at..at + din * dout]).unwrap();
                general_mat_mul(T::one(), &input.t(), &delta, T::one(), &mut gw);
                let at = self.layout.bias_offsets[k];
                let mut gb = ArrayViewMut1::from(&mut grads.values[at..at + dout]);
                gb += &delta.sum_axis(Axis(0));
            }
            if k == 0 && !grid_input {
                break;
            }
            let mut prev = delta.dot(&self.weights(k).t());
            if k > 0 {
                match self.config.mlp.activation {
                    Activation::Relu => prev.zip_mut_with(input, |d, &a| {
                        if a <= T::zero() {
                            *d = T::zero();
                        }
                    }),
                    Activation::Tanh => prev.zip_mut_with(input, |d, &a| *d *= T::one() - a * a),
                }
            }
            delta = prev;
        }
        if grid_input {
            let InputEncoding::MultiGrid(enc) = &self.config.encoding else { unreachable!() };
            let layers = enc.layer_resolutions.len();
            let f = enc.feature_dim;
            for b in 0..tape.batch {
                let row = delta.row(b);
                for l in 0..layers {
                    let tap = &tape.taps[b * layers + l];
                    let base = self.layout.grid_offsets[l];
                    for (&node, &w) in tap.nodes.iter().zip(&tap.weights) {
                        let w = T::of(w);
                        let at = base + node * f;
                        for c in 0..f {
                            grads.values[at + c] += w * row[l * f + c];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Convert to another scalar type (e.g. for 64-bit gradient checks).
    pub fn cast<U: Real>(&self) -> SurfaceModel<U> {
        SurfaceModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::of(p.to_f64())).collect(),
            seed: self.seed,
        }
    }
}
