//! Covariate-driven nonstationary Gaussian-process models.

pub mod config;
pub mod covkernel;
pub mod data;
pub mod design;
pub mod experiments;
pub mod fit;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod params;
pub mod pipeline;
pub mod predict;
pub mod scoring;
pub mod selection;
mod serde_float;
pub mod synth;
