//! Flow-rate-conditioned neural fields for volumetric print geometry.
//!
//! The crate covers the full pipeline: synthetic volume generation, occupancy
//! to SDF conversion, registration, SIREN training with a gradient penalty on
//! the flow-rate input, manifold reconstruction, fidelity metrics and per-layer
//! flow-rate optimization.

pub mod cli;
pub mod error;
pub mod fidelity;
pub mod flowopt;
pub mod neuralfield;
pub mod plot;
pub mod recon;
pub mod regalign;
pub mod sampler;
pub mod sdfconv;
pub mod synthgen;
pub mod trainer;
pub mod voxvol;

pub use error::{Error, Result};
