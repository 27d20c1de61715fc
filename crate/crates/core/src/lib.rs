//! Learned rigid stabilization of facial performance-capture meshes.

pub mod baselines;
pub mod container;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod obj;
pub mod predictor;
pub mod synthesis;

pub use error::{Error, Result};
