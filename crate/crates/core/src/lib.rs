//! Anchored machine unlearning for small dense networks.
//!
//! A trained parameter vector `θ₀` is pushed toward uniform predictions on
//! a forget set by gradient descent on `L_forget(θ) + (λ/2)‖θ − θ₀‖²`.
//! The [`theory`] module supplies exact reference solutions used to check
//! that procedure, and [`metrics`] scores the result.

// Validation is written as `!(x > 0.0)` so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod format;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod opt;
pub mod theory;

pub use checkpoint::Checkpoint;
pub use datagen::{Dataset, ForgetSpec, ForgetSplit, StyledArgs};
pub use error::{FamrError, Result};
pub use format::Provenance;
pub use losses::{LossWeights, StyleTarget};
pub use metrics::{KlDirection, MetricsReport};
pub use model::{Activation, GradVector, ModelSpec, ParamVector};
pub use nn::{LossKind, Sample, Target, TrainConfig};
pub use opt::{BatchSize, FamrConfig, OptTrace, TraceRow};
pub use theory::{BoundReport, HessianMatrix, HessianSource, OutputSpace};
