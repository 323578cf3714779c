//! Robust self-training for detectors under domain shift: soft-label fusion,
//! a small anchor-grid detector, a synthetic shifted world, a crop
//! classifier for relabeling, and the pipeline that ties them together.

pub mod aux;
pub mod cli;
pub mod detector;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod linalg;
pub mod oracle;
pub mod pipeline;
pub mod world;

pub use error::{Error, Result};
