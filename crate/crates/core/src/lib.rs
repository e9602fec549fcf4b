//! Sparse adversarial perturbations for video classifiers.
//!
//! The crate attacks a video classifier by perturbing only a small set of
//! frames. A perturbed video combines an additive noise tensor with a
//! bilinear spatial warp, both restricted to the selected frames, and the
//! attack maximizes classification loss while an SSIM term keeps the result
//! close to the original. Frames are selected either by brute force or by
//! Bayesian optimization over a Gaussian-process surrogate of attack
//! progress.
//!
//! Module map:
//! - [`tensor`]: dense row-major f64 tensors.
//! - [`autodiff`]: reverse-mode automatic differentiation on a flat tape.
//! - [`ssim`]: sliding-window structural similarity and its exact gradient.
//! - [`warp`]: bilinear backward warping of frames by a flow field.
//! - [`adam`]: the Adam update rule.
//! - [`models`]: small seeded video classifiers used as attack targets.
//! - [`attack`]: perturbation composition and the alternating optimizer.
//! - [`selector`]: frame selection (GP surrogate, expected improvement,
//!   brute force).
//! - [`metrics`]: evaluation metrics and the cross-model transfer matrix.
//! - [`data`]: synthetic dataset generation and on-disk tensor containers.

// Validation code writes `!(x > 0.0)` on purpose: unlike `x <= 0.0`, the
// negated form also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod attack;
pub mod autodiff;
pub mod data;
mod error;
pub mod metrics;
pub mod models;
pub mod selector;
pub mod ssim;
pub mod tensor;
#[cfg(test)]
pub(crate) mod testing;
pub mod warp;

pub use error::{Error, Result};
