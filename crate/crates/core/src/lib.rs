//! Neural cloth draping in a uv-parameterized implicit representation.

pub mod atlas;
pub mod collider;
pub mod error;
pub mod io;
pub mod losses;
pub mod objective;
pub mod optim;
pub mod real;
pub mod sampler;
pub mod scene;
pub mod structure;
pub mod surface;
pub mod trainer;

pub use atlas::{GarmentRestMesh, RestAtlas, Uv};
pub use collider::{ColliderMesh, SpatialIndex};
pub use error::{DrapeError, Result};
pub use real::Real;
pub use surface::{ModelConfig, SurfaceModel};
