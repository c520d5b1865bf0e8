//! The neural surface: feature grids, the displacement MLP and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod encoding;
pub mod model;

pub use config::{param_count, Activation, EncoderConfig, InputEncoding, MlpConfig, ModelConfig};
pub use encoding::{positional_encode, GridLayer, GridTap};
pub use model::{ForwardTape, GradientBuffer, ParamLayout, SurfaceModel};
pub use checkpoint::{load_checkpoint, save_checkpoint};
