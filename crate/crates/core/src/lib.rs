//! Coreset-induced conditional velocity flows: a Sinkhorn coreset surrogate,
//! its closed-form conditional velocity law, a learned residual correction,
//! and the nested sampler, with evaluation metrics and theory checks.

pub mod coreset;
pub mod correction;
pub mod datasets;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod mlp;
pub mod repro;
pub mod rng;
pub mod sampler;
pub mod theory;
pub mod velocity;

pub use error::{Error, Result};
