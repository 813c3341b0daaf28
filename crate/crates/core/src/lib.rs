//! Core library: differentiation, geometry, diffusion, the guiding-point
//! network, synthetic data, training, metrics and editing.

pub mod grad;
pub mod geometry;
pub mod diffusion;
pub mod metrics;
pub mod theory;
pub mod synth;
pub mod gpnet;
pub mod train;
pub mod edit;
pub mod config;
pub mod api;
