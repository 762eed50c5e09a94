//! Triplet-stream attention-fusion image classification.
//!
//! A global branch, a heat-map branch fed by the most activated region of the
//! global branch, and an infected-region branch fed by a semi-supervised
//! segmenter are trained in stages and merged by a fusion head.

mod error;

pub mod numcore;
pub mod dataio;
pub mod evalviz;
pub mod model;
pub mod semisup;
pub mod trainer;
pub mod vision;

pub use error::{Error, ErrorClass, Result};
