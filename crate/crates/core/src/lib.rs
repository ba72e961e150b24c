pub mod codebook;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod heatmap;
pub mod linalg;
pub mod scene;
pub mod spread;
pub mod stap;
pub mod training;

pub use error::{Error, Result};
