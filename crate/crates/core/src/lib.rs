//! Sparse trained articulated body model.
//!
//! The crate implements a vertex-based body model whose pose correctives are
//! split per joint and gated by a learned, ReLU-thresholded vertex mask, along
//! with its training objective, a pose/shape fitter, PCA shape-space analysis
//! and a procedural data generator.

pub mod cli;
pub mod container;
pub mod error;
pub mod fit;
pub mod meshcore;
pub mod model;
pub mod quat;
pub mod synth;
pub mod train;

pub use error::{Result, StarError};
pub use model::BodyModel;
