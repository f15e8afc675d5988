//! Cross-validated model selection for models estimated by the generalized
//! method of moments.
//!
//! The crate is organized around [`MomentModel`]: a candidate model is a
//! moment function plus a parameter box. [`estimate`] minimizes the GMM
//! quadratic form, [`selection`] runs `(k, r)`-fold cross-validation and the
//! in-sample rivals, and [`hypothesis`] tests whether two CV scores differ.
//! The `iv_lab` and `conduct` modules are Monte-Carlo laboratories, and
//! [`mpec`] extends cross-validation to constrained estimation.

pub mod conduct;
pub mod error;
pub mod gmm;
pub mod hypothesis;
pub mod iv_lab;
pub mod mpec;
pub mod rng;
pub mod selection;
pub mod synthetic;

pub use error::{Error, Result};
pub use gmm::{
    estimate, evaluate_objective, resolve_weighting, Dataset, FnMomentModel, GmmEstimate,
    LinearIvModel, MomentModel, OptimizerConfig, ParamBox, WeightingSpec,
};
