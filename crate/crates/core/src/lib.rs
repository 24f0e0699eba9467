//! Distributional consistency (DC) loss for inverse problems.
//!
//! The DC loss scores a predicted signal by how closely the logit of the
//! probability-integral-transformed measurements follows a standard logistic
//! law, measured with the 1D Wasserstein-1 distance. Alongside it the crate
//! ships the pointwise baselines (MSE, Poisson NLL), linear forward
//! operators, total-variation penalties, Adam/MLEM optimizers and an
//! experiment harness that writes CSV/JSON/PGM artifacts.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod forward_ops;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod noise_models;
pub mod optim;
pub mod regularizers;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
pub use forward_ops::{ForwardOp, Kernel1D, ProjectorGeometry};
pub use losses::{LossEval, ReferenceMode, ScoreVector};
pub use noise_models::{NoiseModel, TailPolicy};
pub use regularizers::Image2D;
pub use rng::RngStream;
