use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::splits::{make_splits, SplitPlan};
use super::select_min;
use crate::error::{Error, Result};
use crate::gmm::{
    estimate_with, mean_moment, quadratic_form, resolve_weighting, Dataset, MomentModel,
    OptimizerConfig, WeightingSpec,
};

/// Settings shared by every model in a cross-validation run.
#[derive(Clone, Debug)]
pub struct CvConfig {
    pub r: usize,
    pub k: usize,
    pub weighting: WeightingSpec,
    pub optimizer: OptimizerConfig,
    /// Shuffle observations before folding. Only meaningful for
    /// exchangeable data; folds follow the given order otherwise.
    pub shuffle_seed: Option<u64>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            r: 2,
            k: 1,
            weighting: WeightingSpec::Identity,
            optimizer: OptimizerConfig::default(),
            shuffle_seed: None,
        }
    }
}

/// A model fitted on one training subset.
#[derive(Clone, Debug)]
pub struct TrainedSplit {
    pub theta: DVector<f64>,
    /// In-sample objective on the training subset.
    pub train_score: f64,
    /// `W_S`, resolved on the training subset.
    pub weighting: DMatrix<f64>,
}

/// Per-model cross-validation outcome.
#[derive(Clone, Debug)]
pub struct ModelCv {
    pub name: String,
    /// Validation scores, one per training subset, in plan order.
    pub split_scores: Vec<f64>,
    pub splits: Vec<TrainedSplit>,
    /// Mean of `split_scores`; `+∞` when the model failed.
    pub mean_score: f64,
    /// Why the model was disqualified, if it was.
    pub failure: Option<String>,
}

impl ModelCv {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Clone, Debug)]
pub struct CvReport {
    pub plan: SplitPlan,
    pub models: Vec<ModelCv>,
    pub selected: usize,
}

impl CvReport {
    pub fn mean_scores(&self) -> Vec<f64> {
        self.models.iter().map(|m| m.mean_score).collect()
    }
}

/// Fits `model` on the training folds of split `s`.
pub fn train_on_subset<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
    plan: &SplitPlan,
    s: usize,
    spec: &WeightingSpec,
    opt: &OptimizerConfig,
) -> Result<TrainedSplit> {
    check_plan(data, plan, s)?;
    let train = data.select(&plan.train_indices(s))?;
    let w = resolve_weighting(spec, model, &train)?;
    let est = estimate_with(model, &train, w, opt)?;
    Ok(TrainedSplit {
        theta: est.theta_hat,
        train_score: est.objective_value,
        weighting: est.weighting_used,
    })
}

/// `ḡ_valid(θ_S)' W_S ḡ_valid(θ_S)` over the held-out folds of split `s`.
pub fn validate_on_complement<M: MomentModel + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    plan: &SplitPlan,
    s: usize,
    w: &DMatrix<f64>,
) -> Result<f64> {
    check_plan(data, plan, s)?;
    let q = model.num_moments();
    if w.shape() != (q, q) {
        return Err(Error::Dimension {
            context: "validation weighting",
            expected: q,
            got: w.nrows(),
        });
    }
    let valid = data.select(&plan.valid_indices(s))?;
    Ok(quadratic_form(&mean_moment(model, &valid, theta), w))
}

fn check_plan(data: &Dataset, plan: &SplitPlan, s: usize) -> Result<()> {
    if plan.t() != data.len() {
        return Err(Error::Dimension {
            context: "split plan vs dataset length",
            expected: data.len(),
            got: plan.t(),
        });
    }
    if s >= plan.num_splits() {
        return Err(Error::config(format!(
            "split {s} out of range ({} splits)",
            plan.num_splits()
        )));
    }
    Ok(())
}

/// `(k, r)`-fold cross-validation over a list of candidate models.
///
/// (model, split) pairs run in parallel on the current rayon pool; results are
/// gathered in plan order, so the report does not depend on scheduling.
pub fn cross_validate(
    models: &[&dyn MomentModel],
    data: &Dataset,
    cfg: &CvConfig,
) -> Result<CvReport> {
    if models.is_empty() {
        return Err(Error::config("cross-validation needs at least one model"));
    }
    let shuffled;
    let data = match cfg.shuffle_seed {
        Some(seed) => {
            shuffled = data.shuffled(seed);
            &shuffled
        }
        None => data,
    };
    let plan = make_splits(data.len(), cfg.r, cfg.k)?;
    let n_splits = plan.num_splits();

    let tasks: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|i| (0..n_splits).map(move |s| (i, s)))
        .collect();
    let outcomes: Vec<Result<(TrainedSplit, f64)>> = tasks
        .par_iter()
        .map(|&(i, s)| {
            let model = models[i];
            let trained = train_on_subset(model, data, &plan, s, &cfg.weighting, &cfg.optimizer)?;
            let score =
                validate_on_complement(model, trained.theta.as_slice(), data, &plan, s, &trained.weighting)?;
            Ok((trained, score))
        })
        .collect();

    let mut outcomes = outcomes.into_iter();
    let mut reports = Vec::with_capacity(models.len());
    for model in models {
        let mut report = ModelCv {
            name: model.name().to_string(),
            split_scores: Vec::with_capacity(n_splits),
            splits: Vec::with_capacity(n_splits),
            mean_score: f64::INFINITY,
            failure: None,
        };
        for s in 0..n_splits {
            match outcomes.next().expect("one outcome per task") {
                Ok((trained, score)) if score.is_finite() => {
                    report.split_scores.push(score);
                    report.splits.push(trained);
                }
                Ok(_) => {
                    report.failure.get_or_insert(format!("split {s}: non-finite validation score"));
                }
                Err(e) => {
                    report.failure.get_or_insert(format!("split {s}: {e}"));
                }
            }
        }
        if report.failure.is_none() {
            report.mean_score = report.split_scores.iter().sum::<f64>() / n_splits as f64;
        } else {
            log::warn!("model {} disqualified: {}", report.name, report.failure.as_deref().unwrap_or(""));
        }
        reports.push(report);
    }
    let scores: Vec<f64> = reports.iter().map(|m| m.mean_score).collect();
    let selected = select_min(&scores).ok_or(Error::AllModelsFailed)?;
    Ok(CvReport {
        plan,
        models: reports,
        selected,
    })
}
