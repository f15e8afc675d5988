//! Small synthetic designs for the asymptotic properties of CV selection.
//!
//! Data are i.i.d. `N(0, 1)` draws. A [`LocationScaleModel`] with variance
//! `v` imposes `E[x − θ] = 0` and `E[(x − θ)² − v] = 0`: it is correctly
//! specified for `v = 1` and globally misspecified otherwise, with population
//! minimand `(1 − v)²` under identity weighting.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gmm::{Dataset, MomentModel, OptimizerConfig, ParamBox, WeightingSpec};
use crate::hypothesis::{
    compute_rcv, estimate_variance_general, estimate_variance_independent, ks_test_standard_normal,
    Normalization, SplitMoments, VarianceMode,
};
use crate::rng::{derive_seed, stream_rng};
use crate::selection::{cross_validate, CvConfig};

#[derive(Clone, Debug)]
pub struct LocationScaleModel {
    name: String,
    variance: f64,
    bounds: ParamBox,
}

impl LocationScaleModel {
    pub fn new(variance: f64) -> Self {
        Self {
            name: format!("location-scale(v={variance})"),
            variance,
            bounds: ParamBox::symmetric(1, 10.0),
        }
    }
}

impl MomentModel for LocationScaleModel {
    fn name(&self) -> &str {
        &self.name
    }
    fn num_params(&self) -> usize {
        1
    }
    fn num_moments(&self) -> usize {
        2
    }
    fn param_box(&self) -> &ParamBox {
        &self.bounds
    }
    fn moment(&self, obs: &[f64], theta: &[f64], out: &mut [f64]) {
        let e = obs[0] - theta[0];
        out[0] = e;
        out[1] = e * e - self.variance;
    }
}

/// `t` standard normal draws for replication `rep`.
pub fn normal_sample(t: usize, seed: u64, rep: u64) -> Result<Dataset> {
    let mut rng = stream_rng(derive_seed(seed, "normal-sample"), rep);
    let values: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
    Dataset::from_scalars(&values)
}

fn cv_config(r: usize, k: usize, opt: &OptimizerConfig) -> CvConfig {
    CvConfig {
        r,
        k,
        weighting: WeightingSpec::Identity,
        optimizer: opt.clone(),
        shuffle_seed: None,
    }
}

/// Correct (`v = 1`) versus globally misspecified (`v = misspec_variance`).
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyDesign {
    pub t: usize,
    pub reps: usize,
    pub seed: u64,
    pub misspec_variance: f64,
    pub r: usize,
    pub k: usize,
}

impl Default for ConsistencyDesign {
    fn default() -> Self {
        Self {
            t: 100,
            reps: 500,
            seed: 0,
            misspec_variance: 1.3,
            r: 2,
            k: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyEstimate {
    pub accuracy: f64,
    pub stderr: f64,
    pub reps: usize,
    pub failures: usize,
}

/// Share of replications in which CV picks the correctly specified model.
pub fn run_consistency_study(design: &ConsistencyDesign, opt: &OptimizerConfig) -> Result<AccuracyEstimate> {
    if design.reps == 0 {
        return Err(Error::config("reps must be at least 1"));
    }
    let good = LocationScaleModel::new(1.0);
    let bad = LocationScaleModel::new(design.misspec_variance);
    let cfg = cv_config(design.r, design.k, opt);
    let picks: Vec<Option<bool>> = (0..design.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let data = normal_sample(design.t, design.seed, rep).ok()?;
            let report = cross_validate(&[&good, &bad], &data, &cfg).ok()?;
            (!report.models.iter().any(|m| m.failed())).then_some(report.selected == 0)
        })
        .collect();
    let ok: Vec<bool> = picks.iter().flatten().copied().collect();
    let n = ok.len();
    let accuracy = ok.iter().filter(|&&b| b).count() as f64 / n as f64;
    Ok(AccuracyEstimate {
        accuracy,
        stderr: (accuracy * (1.0 - accuracy) / n as f64).sqrt(),
        reps: n,
        failures: design.reps - n,
    })
}

/// Two distinct, equally misspecified models: population minimands
/// `(1 − v₁)²` and `(1 − v₂)²` coincide when `v₁ + v₂ = 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct NullDesign {
    pub t: usize,
    pub reps: usize,
    pub seed: u64,
    pub variances: [f64; 2],
    pub r: usize,
    pub k: usize,
    pub normalization: Normalization,
    pub mode: VarianceMode,
    /// Nominal two-sided level.
    pub level: f64,
}

impl Default for NullDesign {
    fn default() -> Self {
        Self {
            t: 2000,
            reps: 1000,
            seed: 0,
            variances: [1.3, 0.7],
            r: 2,
            k: 1,
            normalization: Normalization::Studentized,
            mode: VarianceMode::GeneralSplit,
            level: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NullStudy {
    /// Statistic per successful replication, in replication order.
    pub statistics: Vec<f64>,
    pub rejection_rate: f64,
    pub mean: f64,
    pub variance: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub failures: usize,
}

/// Monte-Carlo null distribution of the CV test statistic.
pub fn run_null_study(design: &NullDesign, opt: &OptimizerConfig) -> Result<NullStudy> {
    if design.reps < 2 {
        return Err(Error::config("reps must be at least 2"));
    }
    if !(design.level > 0.0 && design.level < 1.0) {
        return Err(Error::config(format!("level must lie in (0, 1), got {}", design.level)));
    }
    let m1 = LocationScaleModel::new(design.variances[0]);
    let m2 = LocationScaleModel::new(design.variances[1]);
    let cfg = cv_config(design.r, design.k, opt);
    let stats: Vec<Option<(f64, f64)>> = (0..design.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let data = normal_sample(design.t, design.seed, rep).ok()?;
            let report = cross_validate(&[&m1, &m2], &data, &cfg).ok()?;
            let draws = SplitMoments::from_report([&m1, &m2], &data, &report).ok()?;
            let var = match design.mode {
                VarianceMode::GeneralSplit => estimate_variance_general(&draws),
                VarianceMode::IndependentSplits => estimate_variance_independent(&draws),
            }
            .ok()?;
            let res = compute_rcv(&report, &var, design.normalization).ok()?;
            Some((res.r_cv, res.p_value_two_sided))
        })
        .collect();
    let ok: Vec<(f64, f64)> = stats.into_iter().flatten().collect();
    let n = ok.len() as f64;
    let statistics: Vec<f64> = ok.iter().map(|s| s.0).collect();
    let mean = statistics.iter().sum::<f64>() / n;
    let variance = statistics.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let rejection_rate = ok.iter().filter(|s| s.1 < design.level).count() as f64 / n;
    let (ks_statistic, ks_p_value) = ks_test_standard_normal(&statistics);
    Ok(NullStudy {
        failures: design.reps - statistics.len(),
        statistics,
        rejection_rate,
        mean,
        variance,
        ks_statistic,
        ks_p_value,
    })
}
