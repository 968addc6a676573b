//! Test-time adaptation for open-vocabulary detectors.
//!
//! Each image is processed in one episode: region features pass through a
//! zero-initialized bottleneck adapter, are scored against class embeddings
//! and an image-selected subset of prompt templates, and a single gradient
//! step minimizes an entropy objective weighted by the size of each
//! proposal's IoU cluster. Parameters are reset before the next image.
//!
//! The [`sim`] module generates synthetic scenes with a controllable domain
//! shift and [`eval`] scores detections with the COCO protocol.

pub mod adapt;
pub mod cli;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grad;
pub mod oracle;
pub mod scene;
pub mod scoring;
pub mod sim;

pub use error::{Error, Result};
