//! Measurement-conditioned diffusion for under-sampled image reconstruction.
//!
//! The diffusion chain lives in measurement space (k-space) and injects noise
//! only at non-acquired positions, so every reconstruction the sampler
//! returns agrees with the acquired data by construction. The crate bundles
//! the numeric core, sampling masks, variance schedules, the diffusion math,
//! a small trainable noise-prediction network with its own reverse-mode
//! gradients, reconstruction metrics, synthetic data generation with file
//! formats, and the command-line front end.
//!
//! The numeric core is generic over the scalar type; `f64` aliases below are
//! what the CLI and the test suites use.

pub mod scalar;

pub mod numerics;

pub mod measurement;

pub mod schedule;

pub mod diffusion;

pub mod denoiser;

pub mod evalkit;

pub mod datagen;

pub mod cli;

pub use scalar::Scalar;

/// Default-precision aliases.
pub type ComplexGrid64 = numerics::ComplexGrid<f64>;
pub type RealGrid64 = numerics::RealGrid<f64>;
pub type PartialKSpace64 = measurement::PartialKSpace<f64>;
pub type Schedule64 = schedule::DiffusionSchedule<f64>;
pub type DiffusionState64 = diffusion::DiffusionState<f64>;
pub type DenoiserParams64 = denoiser::DenoiserParams<f64>;
pub type MetricRecord64 = evalkit::MetricRecord<f64>;

/// Single-precision aliases for callers that trade accuracy for footprint.
pub type ComplexGrid32 = numerics::ComplexGrid<f32>;
pub type RealGrid32 = numerics::RealGrid<f32>;
pub type Schedule32 = schedule::DiffusionSchedule<f32>;
