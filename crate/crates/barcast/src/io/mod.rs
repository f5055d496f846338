//! File-format boundaries: target-image ingestion, config parsing,
//! checkpoints, loss logs, mesh export and run-directory assembly.

pub mod checkpoint;
pub mod config;
pub mod image;
pub mod mesh;
pub mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{load_config, ProjectConfig};
pub use image::{load_image, save_png, save_ppm, LoadedImage};
pub use mesh::{build_mesh, parse_obj, write_obj, MeshBundle};
pub use run::{write_outputs, RunWriter};
