use std::fmt;

use crate::error::{Error, Result};
use crate::gmm::{estimate, Dataset, GmmEstimate, MomentModel, OptimizerConfig, WeightingSpec};

use super::select_min;

/// A model-selection rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Criterion {
    Cv,
    Gmm,
    GmmAic,
    GmmBic,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Criterion::Cv, Criterion::Gmm, Criterion::GmmAic, Criterion::GmmBic];

    pub fn label(self) -> &'static str {
        match self {
            Criterion::Cv => "CV",
            Criterion::Gmm => "GMM",
            Criterion::GmmAic => "GMM-AIC",
            Criterion::GmmBic => "GMM-BIC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.label().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Scores of every model under one criterion, and the winner.
#[derive(Clone, Debug, PartialEq)]
pub struct CriterionResult {
    pub criterion: Criterion,
    /// `+∞` for models that failed to estimate.
    pub scores: Vec<f64>,
    pub selected: usize,
}

/// `T·Q − 2(c − p)`.
pub fn gmm_aic(q: f64, t: usize, c: usize, p: usize) -> f64 {
    t as f64 * q - 2.0 * (c as f64 - p as f64)
}

/// `T·Q − (c − p) ln T`.
pub fn gmm_bic(q: f64, t: usize, c: usize, p: usize) -> f64 {
    t as f64 * q - (c as f64 - p as f64) * (t as f64).ln()
}

/// Full-sample fits of every model; failures are kept as errors.
pub fn fit_all(
    models: &[&dyn MomentModel],
    data: &Dataset,
    spec: &WeightingSpec,
    opt: &OptimizerConfig,
) -> Vec<Result<GmmEstimate>> {
    models.iter().map(|m| estimate(*m, data, spec, opt)).collect()
}

/// GMM, GMM-AIC and GMM-BIC results from full-sample fits.
pub fn in_sample_criteria(
    models: &[&dyn MomentModel],
    fits: &[Result<GmmEstimate>],
    t: usize,
) -> Result<[CriterionResult; 3]> {
    let q: Vec<f64> = fits
        .iter()
        .map(|f| f.as_ref().map(|e| e.objective_value).unwrap_or(f64::INFINITY))
        .collect();
    let score = |criterion: Criterion| -> Result<CriterionResult> {
        let scores: Vec<f64> = models
            .iter()
            .zip(&q)
            .map(|(m, &q)| {
                let (c, p) = (m.instrument_count(), m.num_params());
                match criterion {
                    Criterion::GmmAic => gmm_aic(q, t, c, p),
                    Criterion::GmmBic => gmm_bic(q, t, c, p),
                    _ => q,
                }
            })
            .collect();
        let selected = select_min(&scores).ok_or(Error::AllModelsFailed)?;
        Ok(CriterionResult {
            criterion,
            scores,
            selected,
        })
    };
    Ok([score(Criterion::Gmm)?, score(Criterion::GmmAic)?, score(Criterion::GmmBic)?])
}

/// Picks the model with the smallest full-sample minimand `Q_T(θ̂)`.
pub fn select_by_gmm_minimand(
    models: &[&dyn MomentModel],
    data: &Dataset,
    spec: &WeightingSpec,
    opt: &OptimizerConfig,
) -> Result<CriterionResult> {
    let fits = fit_all(models, data, spec, opt);
    let [gmm, _, _] = in_sample_criteria(models, &fits, data.len())?;
    Ok(gmm)
}
