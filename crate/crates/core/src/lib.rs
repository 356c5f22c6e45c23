//! Inconsistency-aware sharpness minimization on small classifiers.
//!
//! The crate bundles a small MLP engine with exact reverse-mode gradients,
//! sharpness-aware optimizers (SAM, SAGM, GAM), the unknown-domain
//! inconsistency minimization step and its training loop, synthetic
//! multi-domain benchmarks, and the measurement tools used to check the
//! method's mechanism (inconsistency score, flat-region radius, sharpness grids).

mod error;
pub mod linalg;
pub mod rng;
mod tensor;

pub mod analysis;
pub mod domains;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod train;
pub mod udim;

pub use domains::DomainDataset;
pub use error::{Error, Result};
pub use nn::{LossKind, Mlp, ParamVector, Scope};
pub use tensor::Tensor;
