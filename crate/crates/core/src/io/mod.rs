//! Files in and out: OBJ meshes and run configuration.

pub mod config;
pub mod obj;

pub use config::RunConfig;
pub use obj::{export_grid, export_vertices, read_collider, read_garment, ExportedMesh};
