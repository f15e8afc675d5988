//! `(k, r)`-fold cross-validation and the in-sample rival criteria.

mod criteria;
mod cv;
mod splits;

pub use criteria::{
    fit_all, gmm_aic, gmm_bic, in_sample_criteria, select_by_gmm_minimand, Criterion,
    CriterionResult,
};
pub use cv::{
    cross_validate, train_on_subset, validate_on_complement, CvConfig, CvReport, ModelCv,
    TrainedSplit,
};
pub use splits::{make_splits, SplitPlan};

/// Scores closer than this count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Index of the smallest finite score; ties go to the lowest index.
pub fn select_min(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            continue;
        }
        match best {
            Some(b) if s >= scores[b] - TIE_TOLERANCE => {}
            _ => best = Some(i),
        }
    }
    best
}
