//! Monte-Carlo study of linear IV model selection under misspecification.
//!
//! Two candidate models explain `y` with disjoint regressor/instrument sets:
//!
//! ```text
//! y  = X₁β¹ + X₂β² + α Z₂1/c₂ + ε,   X₁ = Z₁δ¹ + ξ¹,   X₂ = Z₂δ² + ξ²
//! M1: E[Z₁'(y − X₁β)] = 0   (valid)
//! M2: E[Z₂'(y − X₂β)] = 0   (invalid once α ≠ 0)
//! ```
//!
//! Accuracy is the share of replications in which a criterion picks M1.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gmm::{Dataset, LinearIvModel, MomentModel, OptimizerConfig, WeightingSpec};
use crate::rng::{derive_seed, stream_rng};
use crate::selection::{cross_validate, fit_all, in_sample_criteria, Criterion, CvConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct IvDesign {
    pub t: usize,
    pub p1: usize,
    pub p2: usize,
    pub c1: usize,
    pub c2: usize,
    pub alpha: f64,
    /// Common value of the entries of β¹.
    pub beta1: f64,
    /// Common value of the entries of β².
    pub beta2: f64,
    /// Standard deviation of ξ¹, ξ² and ε.
    pub noise_sd: f64,
    pub r: usize,
    pub k: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for IvDesign {
    fn default() -> Self {
        Self {
            t: 100,
            p1: 3,
            p2: 9,
            c1: 10,
            c2: 10,
            alpha: 12.0,
            beta1: 5.0,
            beta2: 1.0,
            noise_sd: 1.0,
            r: 2,
            k: 1,
            reps: 500,
            seed: 0,
        }
    }
}

impl IvDesign {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.p1 == 0 || self.p2 == 0 {
            return fail("p1 and p2 must be positive".into());
        }
        if self.p1 > self.c1 || self.p2 > self.c2 {
            return fail(format!(
                "need p1 <= c1 and p2 <= c2, got p1={} c1={} p2={} c2={}",
                self.p1, self.c1, self.p2, self.c2
            ));
        }
        if !(self.alpha >= 0.0) {
            return fail(format!("alpha must be nonnegative, got {}", self.alpha));
        }
        if !(self.noise_sd >= 0.0) {
            return fail(format!("noise_sd must be nonnegative, got {}", self.noise_sd));
        }
        if self.reps == 0 {
            return fail("reps must be at least 1".into());
        }
        if self.r < 2 || self.k == 0 || self.k >= self.r || self.r > self.t {
            return fail(format!("invalid CV configuration r={} k={} for T={}", self.r, self.k, self.t));
        }
        Ok(())
    }
}

/// One simulated sample.
#[derive(Clone, Debug)]
pub struct IvDataset {
    pub y: DVector<f64>,
    pub x1: DMatrix<f64>,
    pub x2: DMatrix<f64>,
    pub z1: DMatrix<f64>,
    pub z2: DMatrix<f64>,
}

/// `c × p` loading matrix: 1 on the diagonal, 0.5 elsewhere in the first
/// `p` rows, zero below.
pub fn loading_matrix(c: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(c, p, |i, j| match (i < p, i == j) {
        (true, true) => 1.0,
        (true, false) => 0.5,
        _ => 0.0,
    })
}

fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize, sd: f64) -> DMatrix<f64> {
    // Row-major fill so the draw order does not depend on storage layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let z: f64 = rng.sample(StandardNormal);
            m[(i, j)] = sd * z;
        }
    }
    m
}

/// Simulates replication `rep` of `design`; deterministic in `(seed, rep)`.
pub fn generate_iv_data(design: &IvDesign, rep: u64) -> IvDataset {
    let mut rng = stream_rng(derive_seed(design.seed, "iv-data"), rep);
    let t = design.t;
    let z1 = normal_matrix(&mut rng, t, design.c1, 1.0);
    let z2 = normal_matrix(&mut rng, t, design.c2, 1.0);
    let xi1 = normal_matrix(&mut rng, t, design.p1, design.noise_sd);
    let xi2 = normal_matrix(&mut rng, t, design.p2, design.noise_sd);
    let eps = normal_matrix(&mut rng, t, 1, design.noise_sd).column(0).into_owned();

    let x1 = &z1 * loading_matrix(design.c1, design.p1) + xi1;
    let x2 = &z2 * loading_matrix(design.c2, design.p2) + xi2;
    let shift = z2.column_sum() * (design.alpha / design.c2 as f64);
    let y = &x1 * DVector::from_element(design.p1, design.beta1)
        + &x2 * DVector::from_element(design.p2, design.beta2)
        + shift
        + eps;
    IvDataset { y, x1, x2, z1, z2 }
}

impl IvDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Row layout `[y, X₁, X₂, Z₁, Z₂]`.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let blocks = [&self.x1, &self.x2, &self.z1, &self.z2];
        let dim = 1 + blocks.iter().map(|b| b.ncols()).sum::<usize>();
        let mut values = Vec::with_capacity(self.len() * dim);
        for t in 0..self.len() {
            values.push(self.y[t]);
            for b in blocks {
                values.extend(b.row(t).iter());
            }
        }
        Dataset::new(dim, values)
    }
}

/// A small random design for equivalence checks: `p ∈ 1..=3` regressors per
/// model with `0..=3` surplus instruments (so about a quarter of the models
/// are exactly identified), `α ∈ [0, 5)` and a single replication.
pub fn random_design(seed: u64, index: u64, t: usize) -> IvDesign {
    let mut rng = stream_rng(derive_seed(seed, "iv-random-design"), index);
    let p1 = rng.random_range(1..=3);
    let p2 = rng.random_range(1..=3);
    IvDesign {
        t,
        p1,
        p2,
        c1: p1 + rng.random_range(0..=3),
        c2: p2 + rng.random_range(0..=3),
        alpha: rng.random_range(0.0..5.0),
        beta1: rng.random_range(-2.0..2.0),
        beta2: rng.random_range(-2.0..2.0),
        reps: 1,
        seed: derive_seed(seed, "iv-random-data") ^ index,
        ..IvDesign::default()
    }
}

/// `(regressor, instrument)` column indices of both candidates in the
/// `[y, X₁, X₂, Z₁, Z₂]` layout; `y` is column 0.
pub fn candidate_columns(p1: usize, p2: usize, c1: usize, c2: usize) -> [(Vec<usize>, Vec<usize>); 2] {
    let x1 = 1..1 + p1;
    let x2 = x1.end..x1.end + p2;
    let z1 = x2.end..x2.end + c1;
    let z2 = z1.end..z1.end + c2;
    [(x1.collect(), z1.collect()), (x2.collect(), z2.collect())]
}

/// The two candidate models, named `model-1` and `model-2`.
pub fn build_candidates(p1: usize, p2: usize, c1: usize, c2: usize) -> (LinearIvModel, LinearIvModel) {
    let [(x1, z1), (x2, z2)] = candidate_columns(p1, p2, c1, c2);
    (
        LinearIvModel::with_columns("model-1", 0, x1, z1),
        LinearIvModel::with_columns("model-2", 0, x2, z2),
    )
}

/// Accuracy of one criterion in one design.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyRow {
    pub criterion: Criterion,
    pub t: usize,
    pub p1: usize,
    pub p2: usize,
    pub alpha: f64,
    /// Share of successful replications that picked model 1.
    pub accuracy: f64,
    /// Binomial standard error of `accuracy`.
    pub stderr: f64,
    /// Successful replications.
    pub reps: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AccuracyTable {
    pub rows: Vec<AccuracyRow>,
    /// `(rep, criterion, message)` for every failed replication.
    pub failures: Vec<(u64, Criterion, String)>,
}

/// Which model each criterion chose in one replication (`None` = failed).
pub type RepChoices = Vec<(Criterion, std::result::Result<usize, String>)>;

/// Runs every requested criterion on replication `rep`.
pub fn run_iv_replication(
    design: &IvDesign,
    rep: u64,
    criteria: &[Criterion],
    opt: &OptimizerConfig,
) -> Result<RepChoices> {
    let data = generate_iv_data(design, rep).to_dataset()?;
    let (m1, m2) = build_candidates(design.p1, design.p2, design.c1, design.c2);
    let models: [&dyn MomentModel; 2] = [&m1, &m2];
    let mut out = Vec::with_capacity(criteria.len());
    let in_sample = if criteria.iter().any(|c| *c != Criterion::Cv) {
        let fits = fit_all(&models, &data, &WeightingSpec::Identity, opt);
        Some(in_sample_criteria(&models, &fits, data.len()).map_err(|e| e.to_string()))
    } else {
        None
    };
    for &c in criteria {
        let choice = match c {
            Criterion::Cv => {
                let cfg = CvConfig {
                    r: design.r,
                    k: design.k,
                    weighting: WeightingSpec::Identity,
                    optimizer: opt.clone(),
                    shuffle_seed: None,
                };
                match cross_validate(&models, &data, &cfg) {
                    Ok(rep) if rep.models.iter().any(|m| m.failed()) => Err(rep
                        .models
                        .iter()
                        .find_map(|m| m.failure.clone())
                        .unwrap_or_default()),
                    Ok(rep) => Ok(rep.selected),
                    Err(e) => Err(e.to_string()),
                }
            }
            other => match in_sample.as_ref().expect("computed above") {
                Ok(results) => {
                    let r = results.iter().find(|r| r.criterion == other).expect("all three present");
                    if r.scores.iter().all(|s| s.is_finite()) {
                        Ok(r.selected)
                    } else {
                        Err("full-sample estimation failed".to_string())
                    }
                }
                Err(e) => Err(e.clone()),
            },
        };
        out.push((c, choice));
    }
    Ok(out)
}

/// Selection accuracy of each criterion over `design.reps` replications.
/// Replications run in parallel on the current rayon pool and are reduced
/// in replication order.
pub fn run_iv_study(design: &IvDesign, criteria: &[Criterion], opt: &OptimizerConfig) -> Result<AccuracyTable> {
    design.validate()?;
    if criteria.is_empty() {
        return Err(Error::config("no criteria requested"));
    }
    let results: Vec<Result<RepChoices>> = (0..design.reps as u64)
        .into_par_iter()
        .map(|rep| run_iv_replication(design, rep, criteria, opt))
        .collect();
    let mut table = AccuracyTable::default();
    let mut hits = vec![0usize; criteria.len()];
    let mut ok = vec![0usize; criteria.len()];
    for (rep, res) in results.into_iter().enumerate() {
        let choices = res?;
        for (i, (c, choice)) in choices.into_iter().enumerate() {
            match choice {
                Ok(sel) => {
                    ok[i] += 1;
                    hits[i] += usize::from(sel == 0);
                }
                Err(msg) => table.failures.push((rep as u64, c, msg)),
            }
        }
    }
    for (i, &c) in criteria.iter().enumerate() {
        let acc = if ok[i] > 0 { hits[i] as f64 / ok[i] as f64 } else { f64::NAN };
        table.rows.push(AccuracyRow {
            criterion: c,
            t: design.t,
            p1: design.p1,
            p2: design.p2,
            alpha: design.alpha,
            accuracy: acc,
            stderr: (acc * (1.0 - acc) / ok[i] as f64).sqrt(),
            reps: ok[i],
            failures: design.reps - ok[i],
        });
    }
    Ok(table)
}
