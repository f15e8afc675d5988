//! Moment models and one-step GMM estimation.

mod dataset;
mod estimate;
mod linear_iv;
mod model;
pub mod optimizer;
mod weighting;

pub use dataset::Dataset;
pub use estimate::{
    estimate, estimate_with, evaluate_objective, objective_with, quadratic_form, GmmEstimate,
    OptimizerTrace, StartTrace,
};
pub use linear_iv::{LinearIvModel, LINEAR_IV_BOUND};
pub use model::{mean_moment, moment_matrix, FnMomentModel, MomentModel, ParamBox};
pub use optimizer::OptimizerConfig;
pub use weighting::{invert_gram, resolve_weighting, Weighting, WeightingSpec, GRAM_RIDGE};

