//! Jointly trained multi-stage brain extraction and affine registration for
//! 3D volumes: a tape-based autodiff engine, the two shared-weight
//! networks, the unsupervised training objective, synthetic phantoms with
//! ground truth, and a CLI front end.

pub mod cli;
pub mod data;
pub mod error;
pub mod extraction;
pub mod geometry;
mod layers;
pub mod objective;
pub mod pipeline;
pub mod refcheck;
pub mod registration;
pub mod tensor;

pub use error::{Error, Result};
