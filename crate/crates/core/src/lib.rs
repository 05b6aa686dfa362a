//! Hand-hygiene gesture classification: frame extraction from clips,
//! frozen-backbone transfer learning, classification reports and smoothed
//! per-frame clip prediction.

pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod predictor;
pub mod preprocess;
pub mod run;
mod render;
pub mod trainer;
pub mod video;

pub use error::{Error, Result};
pub use labels::{ClassLabel, LabelRegistry};
