//! Point cloud completion supervised only by multi-view silhouettes.
//!
//! The crate is organized bottom-up: [`autodiff`] provides the tensor tape and
//! optimizer, [`geometry`] and [`silhouette`] the camera and image primitives,
//! [`calibrator`] the geometric outlier snapping, [`losses`] and [`network`]
//! the trainable pipeline, [`metrics`] the evaluation measures, [`dataset`]
//! the synthetic data generator and file formats, and [`pipeline`] the
//! training / inference / evaluation drivers used by the command line tool.

pub mod autodiff;
mod error;
pub mod calibrator;
pub mod dataset;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod silhouette;

pub use error::{Error, Result};
