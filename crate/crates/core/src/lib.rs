//! Stereo evaluation and deployment analysis for UAV branch pruning.

pub mod cli;
pub mod costmodel;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod matcher;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::CameraRig;
pub use grid::{DepthMap, DisparityMap};
