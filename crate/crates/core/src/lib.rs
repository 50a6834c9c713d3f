//! Adjacent-slice reconstruction for unsupervised anomaly detection in
//! volumetric scans.
//!
//! A generator learns, on healthy scans only, to predict the next three
//! slices of a volume from the previous three. Reconstruction error on
//! unseen scans is aggregated into per-scan anomaly scores, and scores are
//! evaluated with ROC analysis against clinical labels.

pub mod config;
pub mod data;
mod error;
pub mod evaluation;
pub mod losses;
pub mod nets;
pub mod pipeline;
pub mod scoring;
pub mod trainer;
pub mod windowing;

pub use error::{Error, Result};
