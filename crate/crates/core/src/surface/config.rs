use crate::error::{DrapeError, Result};

/// Hidden-layer nonlinearity; the output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Multi-resolution feature grid shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub layer_resolutions: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { layer_resolutions: vec![101, 51], feature_dim: 3 }
    }
}

impl EncoderConfig {
    /// Halving pyramid `N_max, N_max/2, ...` with `layers` levels.
    pub fn from_max_resolution(max_resolution: usize, layers: usize, feature_dim: usize) -> Result<Self> {
        let limit = (max_resolution.max(1) as f64).log2().floor() as usize;
        if layers == 0 || layers > limit {
            return Err(DrapeError::InconsistentDims(format!(
                "{layers} layers exceed floor(log2({max_resolution})) = {limit}"
            )));
        }
        let layer_resolutions = (0..layers).map(|l| max_resolution >> l).collect();
        let cfg = Self { layer_resolutions, feature_dim };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn output_dim(&self) -> usize {
        self.layer_resolutions.len() * self.feature_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_resolutions.is_empty() || self.feature_dim == 0 {
            return Err(DrapeError::InconsistentDims(
                "grid encoder needs at least one layer and one feature".into(),
            ));
        }
        if self.layer_resolutions.iter().any(|&r| r < 2) {
            return Err(DrapeError::InconsistentDims("grid resolutions must be >= 2".into()));
        }
        if self.layer_resolutions.windows(2).any(|w| w[1] >= w[0]) {
            return Err(DrapeError::InconsistentDims(
                "grid resolutions must be strictly decreasing".into(),
            ));
        }
        Ok(())
    }
}

/// How a uv point is turned into the MLP input vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputEncoding {
    MultiGrid(EncoderConfig),
    /// Raw `(u, v)`.
    Raw,
    /// `(u, v)` followed by sin/cos features at `frequencies` octaves.
    Positional { frequencies: usize },
}

impl InputEncoding {
    pub fn output_dim(&self) -> usize {
        match self {
            InputEncoding::MultiGrid(enc) => enc.output_dim(),
            InputEncoding::Raw => 2,
            InputEncoding::Positional { frequencies } => 2 + 4 * frequencies,
        }
    }

    pub fn grid_param_count(&self) -> usize {
        match self {
            InputEncoding::MultiGrid(enc) => {
                enc.layer_resolutions.iter().map(|r| r * r * enc.feature_dim).sum()
            }
            _ => 0,
        }
    }
}

/// Fully connected decoder. `layer_dims` lists every width from input to the
/// 3-dimensional output, e.g. `[6, 64, 64, 64, 3]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpConfig {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(layer_dims: Vec<usize>) -> Self {
        Self { layer_dims, activation: Activation::Relu }
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len().saturating_sub(1)
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub encoding: InputEncoding,
    pub mlp: MlpConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::multigrid_default()
    }
}

impl ModelConfig {
    /// Two grids (101², 51², 3 features) and an MLP `[6, 64, 64, 64, 3]`.
    pub fn multigrid_default() -> Self {
        Self {
            encoding: InputEncoding::MultiGrid(EncoderConfig::default()),
            mlp: MlpConfig::new(vec![6, 64, 64, 64, 3]),
        }
    }

    /// Plain coordinate MLP at a matched parameter budget.
    pub fn baseline_mlp() -> Self {
        Self { encoding: InputEncoding::Raw, mlp: MlpConfig::new(vec![2, 152, 152, 152, 3]) }
    }

    /// Positional-encoding MLP at a matched parameter budget.
    pub fn positional() -> Self {
        Self {
            encoding: InputEncoding::Positional { frequencies: 4 },
            mlp: MlpConfig::new(vec![18, 148, 148, 148, 3]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.encoding.grid_param_count() + self.mlp.param_count()
    }

    pub fn validate(&self) -> Result<()> {
        if let InputEncoding::MultiGrid(enc) = &self.encoding {
            enc.validate()?;
        }
        let dims = &self.mlp.layer_dims;
        if dims.len() < 2 || dims.contains(&0) {
            return Err(DrapeError::InconsistentDims(format!("bad MLP dims {dims:?}")));
        }
        if dims[0] != self.encoding.output_dim() {
            return Err(DrapeError::InconsistentDims(format!(
                "MLP input width {} does not match encoding width {}",
                dims[0],
                self.encoding.output_dim()
            )));
        }
        if *dims.last().unwrap() != 3 {
            return Err(DrapeError::InconsistentDims("MLP must output 3 values".into()));
        }
        Ok(())
    }
}

/// Total trainable parameter count: grid nodes plus MLP weights and biases.
pub fn param_count(config: &ModelConfig) -> usize {
    config.param_count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_budgets() {
        assert_eq!(param_count(&ModelConfig::multigrid_default()), 47369);
        assert_eq!(param_count(&ModelConfig::baseline_mlp()), 47427);
        assert_eq!(param_count(&ModelConfig::positional()), 47363);
    }

    #[test]
    fn halving_pyramid_respects_log_limit() {
        let enc = EncoderConfig::from_max_resolution(128, 3, 2).unwrap();
        assert_eq!(enc.layer_resolutions, vec![128, 64, 32]);
        assert!(EncoderConfig::from_max_resolution(8, 4, 2).is_err());
    }

    #[test]
    fn inconsistent_dims_are_rejected() {
        let mut cfg = ModelConfig::multigrid_default();
        cfg.mlp.layer_dims[0] = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::multigrid_default();
        cfg.encoding = InputEncoding::MultiGrid(EncoderConfig {
            layer_resolutions: vec![51, 101],
            feature_dim: 3,
        });
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::positional().validate().is_ok());
    }
}
