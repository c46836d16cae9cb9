//! On-disk formats: binary primitives, dataset and checkpoint containers,
//! assembled scenes, run configuration, and the SVG renderer.

pub mod binary;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod scene;
pub mod svg;

pub use checkpoint::{
    check_fingerprint, fingerprint, load_checkpoint, save_checkpoint, Checkpoint,
};
pub use config::{load_config, parse_config, ModelConfig, RunConfig};
pub use dataset::{read_dataset, write_dataset, Dataset};
pub use scene::{read_scene, write_scene};
pub use svg::{render_svg, write_svg};
