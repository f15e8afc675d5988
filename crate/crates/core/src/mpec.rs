//! Cross-validation for models estimated under equilibrium constraints.
//!
//! Unknowns split into model variables (`θ`, `σ`), shared by all
//! observations, and observation-specific variables `η_t`. Training solves
//!
//! ```text
//! min_{θ, σ, η} ḡ(θ, σ, η)' W ḡ(θ, σ, η)   s.t.  h(θ, σ, η) = 0
//! ```
//!
//! on the training folds. Validation freezes `(θ, σ)` and re-solves only for
//! the validation observations' `η`. The constrained problems are solved by
//! an augmented Lagrangian whose inner step is a Levenberg–Marquardt solve
//! of the stacked residual `[S ḡ; √(ρ/2) (h + λ/ρ)]`, `S = W^{1/2}`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gmm::optimizer::{fd_jacobian, levenberg_marquardt, LeastSquaresConfig};
use crate::gmm::{quadratic_form, resolve_weighting, Dataset, MomentModel, ParamBox, Weighting, WeightingSpec};
use crate::selection::{make_splits, select_min, CvConfig, CvReport, ModelCv, SplitPlan, TrainedSplit};

/// Feasibility tolerance on `‖h‖∞`.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Tolerance on the sup-norm of the Lagrangian gradient.
pub const KKT_TOL: f64 = 1e-6;

/// A moment model with equality constraints linking parameters to
/// observation-specific unknowns.
pub trait ConstrainedModel: Send + Sync {
    fn name(&self) -> &str;
    fn theta_dim(&self) -> usize;
    fn sigma_dim(&self) -> usize;
    fn eta_per_obs(&self) -> usize;
    fn num_moments(&self) -> usize;

    /// Box over the model variables `(θ, σ)`; `η` is unbounded.
    fn param_box(&self) -> &ParamBox;

    /// `f(v_t, θ, σ, η_t)`.
    fn moment(&self, obs: &[f64], theta: &[f64], sigma: &[f64], eta: &[f64], out: &mut [f64]);

    /// Constraint count for a dataset of `t` observations.
    fn num_constraints(&self, t: usize) -> usize;

    /// `h(θ, σ, η)` on `data`; `eta` holds `η_1, …, η_T` back to back.
    fn constraints(&self, data: &Dataset, theta: &[f64], sigma: &[f64], eta: &[f64], out: &mut [f64]);

    /// `∂h/∂(θ, σ, η)` when available in closed form.
    fn constraint_jacobian(
        &self,
        _data: &Dataset,
        _theta: &[f64],
        _sigma: &[f64],
        _eta: &[f64],
    ) -> Option<DMatrix<f64>> {
        None
    }

    /// Instrument rows for `(Z'Z)^{-1}` weighting, as in [`MomentModel`].
    fn instrument_rows(&self, _obs: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Clone, Debug)]
pub struct SolverTrace {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub final_penalty: f64,
    /// Sup-norm of the Lagrangian gradient at the solution.
    pub kkt_residual: f64,
}

#[derive(Clone, Debug)]
pub struct ConstrainedEstimate {
    pub theta: DVector<f64>,
    pub sigma: DVector<f64>,
    pub eta: DVector<f64>,
    pub objective_value: f64,
    /// `‖h‖∞` at the solution.
    pub feasibility_residual: f64,
    pub weighting_used: DMatrix<f64>,
    pub trace: SolverTrace,
}

/// Augmented-Lagrangian settings.
#[derive(Clone, Debug)]
pub struct MpecConfig {
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_outer: usize,
    pub inner: LeastSquaresConfig,
}

impl Default for MpecConfig {
    fn default() -> Self {
        Self {
            initial_penalty: 1.0,
            penalty_growth: 10.0,
            max_outer: 20,
            inner: LeastSquaresConfig {
                max_iter: 500,
                param_tol: 1e-13,
                objective_tol: 1e-15,
                fd_step: 1e-6,
            },
        }
    }
}

/// Exposes a constrained model's instruments to [`resolve_weighting`].
struct InstrumentView<'a>(&'a dyn ConstrainedModel);

impl MomentModel for InstrumentView<'_> {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn num_params(&self) -> usize {
        self.0.param_box().dim()
    }
    fn num_moments(&self) -> usize {
        self.0.num_moments()
    }
    fn param_box(&self) -> &ParamBox {
        self.0.param_box()
    }
    fn moment(&self, _obs: &[f64], _theta: &[f64], out: &mut [f64]) {
        out.fill(f64::NAN);
    }
    fn instrument_rows(&self, obs: &[f64]) -> Option<DMatrix<f64>> {
        self.0.instrument_rows(obs)
    }
}

/// Resolves `spec` for a constrained model.
pub fn resolve_mpec_weighting(
    spec: &WeightingSpec,
    model: &dyn ConstrainedModel,
    data: &Dataset,
) -> Result<Weighting> {
    resolve_weighting(spec, &InstrumentView(model), data)
}

/// Which block of unknowns the solver moves.
#[derive(Clone, Copy)]
enum Free {
    All,
    EtaOnly,
}

/// The constrained problem on one dataset.
struct Problem<'a> {
    model: &'a dyn ConstrainedModel,
    data: &'a Dataset,
    root: DMatrix<f64>,
    w: &'a DMatrix<f64>,
    free: Free,
    /// Frozen `(θ, σ)` for `Free::EtaOnly`.
    frozen: Vec<f64>,
}

impl Problem<'_> {
    fn ts_dim(&self) -> usize {
        self.model.theta_dim() + self.model.sigma_dim()
    }

    fn eta_dim(&self) -> usize {
        self.model.eta_per_obs() * self.data.len()
    }

    fn n_vars(&self) -> usize {
        match self.free {
            Free::All => self.ts_dim() + self.eta_dim(),
            Free::EtaOnly => self.eta_dim(),
        }
    }

    fn n_cons(&self) -> usize {
        self.model.num_constraints(self.data.len())
    }

    fn bounds(&self) -> ParamBox {
        let b = self.model.param_box();
        let mut lower = Vec::with_capacity(self.n_vars());
        let mut upper = Vec::with_capacity(self.n_vars());
        if let Free::All = self.free {
            lower.extend_from_slice(b.lower());
            upper.extend_from_slice(b.upper());
        }
        lower.resize(self.n_vars(), f64::NEG_INFINITY);
        upper.resize(self.n_vars(), f64::INFINITY);
        ParamBox::new(lower, upper).expect("box dimensions agree")
    }

    /// Splits a free-variable vector into `(θ‖σ, η)`.
    fn unpack<'x>(&'x self, x: &'x [f64]) -> (&'x [f64], &'x [f64]) {
        match self.free {
            Free::All => x.split_at(self.ts_dim()),
            Free::EtaOnly => (&self.frozen, x),
        }
    }

    fn mean_moment(&self, x: &[f64]) -> DVector<f64> {
        let (ts, eta) = self.unpack(x);
        let (theta, sigma) = ts.split_at(self.model.theta_dim());
        let e = self.model.eta_per_obs();
        let q = self.model.num_moments();
        let mut acc = DVector::zeros(q);
        let mut buf = vec![0.0; q];
        for (t, obs) in self.data.rows().enumerate() {
            self.model.moment(obs, theta, sigma, &eta[t * e..(t + 1) * e], &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b;
            }
        }
        acc / self.data.len() as f64
    }

    fn constraints(&self, x: &[f64]) -> DVector<f64> {
        let (ts, eta) = self.unpack(x);
        let (theta, sigma) = ts.split_at(self.model.theta_dim());
        let mut h = DVector::zeros(self.n_cons());
        self.model.constraints(self.data, theta, sigma, eta, h.as_mut_slice());
        h
    }

    /// `∂h/∂x` for the free variables, analytic when the model offers it.
    fn constraint_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let (ts, eta) = self.unpack(x);
        let (theta, sigma) = ts.split_at(self.model.theta_dim());
        if let Some(full) = self.model.constraint_jacobian(self.data, theta, sigma, eta) {
            return match self.free {
                Free::All => full,
                Free::EtaOnly => full.columns(self.ts_dim(), self.eta_dim()).into_owned(),
            };
        }
        let xv = DVector::from_column_slice(x);
        let h0 = self.constraints(x);
        fd_jacobian(
            &|z: &[f64], out: &mut [f64]| out.copy_from_slice(self.constraints(z).as_slice()),
            &xv,
            &h0,
            &self.bounds(),
            1e-6,
        )
    }

    fn moment_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let xv = DVector::from_column_slice(x);
        let g0 = &self.root * self.mean_moment(x);
        fd_jacobian(
            &|z: &[f64], out: &mut [f64]| out.copy_from_slice((&self.root * self.mean_moment(z)).as_slice()),
            &xv,
            &g0,
            &self.bounds(),
            1e-6,
        )
    }

    /// Minimizes `‖h‖²` from `x0`; the feasibility warm start.
    fn feasibility(&self, x0: DVector<f64>, cfg: &MpecConfig) -> DVector<f64> {
        if self.n_cons() == 0 {
            return x0;
        }
        let jac = |x: &[f64]| self.constraint_jacobian(x);
        levenberg_marquardt(
            |x: &[f64], out: &mut [f64]| out.copy_from_slice(self.constraints(x).as_slice()),
            self.n_cons(),
            &x0,
            &self.bounds(),
            &cfg.inner,
            Some(&jac),
        )
        .x
    }

    fn solve(&self, x0: DVector<f64>, cfg: &MpecConfig) -> Result<(DVector<f64>, f64, f64, SolverTrace)> {
        let q = self.model.num_moments();
        let nc = self.n_cons();
        let bounds = self.bounds();
        let mut x = self.feasibility(x0, cfg);
        let mut lambda = DVector::zeros(nc);
        let mut rho = cfg.initial_penalty;
        let mut inner_iterations = 0;
        let mut outer = 0;
        let mut prev_violation = f64::INFINITY;
        let mut h;
        loop {
            outer += 1;
            let scale = (rho / 2.0).sqrt();
            let shift = &lambda / rho;
            let residual = |z: &[f64], out: &mut [f64]| {
                let g = &self.root * self.mean_moment(z);
                out[..q].copy_from_slice(g.as_slice());
                if nc > 0 {
                    let hz = (self.constraints(z) + &shift) * scale;
                    out[q..].copy_from_slice(hz.as_slice());
                }
            };
            let jac = |z: &[f64]| {
                let mut j = DMatrix::zeros(q + nc, z.len());
                j.rows_mut(0, q).copy_from(&self.moment_jacobian(z));
                if nc > 0 {
                    j.rows_mut(q, nc).copy_from(&(self.constraint_jacobian(z) * scale));
                }
                j
            };
            let res = levenberg_marquardt(residual, q + nc, &x, &bounds, &cfg.inner, Some(&jac));
            inner_iterations += res.iterations;
            x = res.x;
            h = self.constraints(x.as_slice());
            let violation = h.amax();
            if nc == 0 || violation <= FEASIBILITY_TOL * 1e-2 || outer >= cfg.max_outer {
                break;
            }
            lambda += &h * rho;
            if violation > 0.25 * prev_violation {
                rho *= cfg.penalty_growth;
            }
            prev_violation = violation;
        }
        let violation = if nc == 0 { 0.0 } else { h.amax() };
        let objective = quadratic_form(&self.mean_moment(x.as_slice()), self.w);

        // Stationarity of g'Wg + λ'h at the returned point.
        let g = self.mean_moment(x.as_slice());
        let jg = {
            let xv = x.clone();
            let g0 = g.clone();
            fd_jacobian(
                &|z: &[f64], out: &mut [f64]| out.copy_from_slice(self.mean_moment(z).as_slice()),
                &xv,
                &g0,
                &bounds,
                1e-6,
            )
        };
        let mut grad = jg.tr_mul(&(self.w * &g)) * 2.0;
        if nc > 0 {
            grad += self.constraint_jacobian(x.as_slice()).tr_mul(&lambda);
        }
        // Components pinned at an active bound need not vanish.
        for i in 0..grad.len() {
            let at_bound = x[i] <= bounds.lower()[i] || x[i] >= bounds.upper()[i];
            if at_bound {
                grad[i] = 0.0;
            }
        }
        let trace = SolverTrace {
            outer_iterations: outer,
            inner_iterations,
            final_penalty: rho,
            kkt_residual: grad.amax(),
        };
        Ok((x, objective, violation, trace))
    }
}

/// Solves the constrained GMM problem on `data`.
pub fn estimate_mpec(
    model: &dyn ConstrainedModel,
    data: &Dataset,
    spec: &WeightingSpec,
    cfg: &MpecConfig,
) -> Result<ConstrainedEstimate> {
    let w = resolve_mpec_weighting(spec, model, data)?;
    estimate_mpec_with(model, data, &w.matrix, cfg)
}

fn estimate_mpec_with(
    model: &dyn ConstrainedModel,
    data: &Dataset,
    w: &DMatrix<f64>,
    cfg: &MpecConfig,
) -> Result<ConstrainedEstimate> {
    let ts = model.theta_dim() + model.sigma_dim();
    if model.param_box().dim() != ts {
        return Err(Error::Dimension {
            context: "constrained model box vs theta + sigma",
            expected: ts,
            got: model.param_box().dim(),
        });
    }
    let problem = Problem {
        model,
        data,
        root: Weighting { matrix: w.clone(), ridge_applied: false }.sqrt(),
        w,
        free: Free::All,
        frozen: Vec::new(),
    };
    let mut x0 = DVector::zeros(problem.n_vars());
    x0.rows_mut(0, ts).copy_from(&model.param_box().center());
    let (x, objective_value, violation, trace) = problem.solve(x0, cfg)?;
    if violation > FEASIBILITY_TOL {
        return Err(Error::Infeasible { max_violation: violation });
    }
    if !(trace.kkt_residual < KKT_TOL) || !objective_value.is_finite() {
        return Err(Error::NonConvergence {
            starts: 1,
            best_theta: x.rows(0, ts).into_owned(),
            best_value: objective_value,
            diagnostic: format!("KKT residual {:.3e} after {} outer iterations", trace.kkt_residual, trace.outer_iterations),
        });
    }
    let theta_dim = model.theta_dim();
    Ok(ConstrainedEstimate {
        theta: x.rows(0, theta_dim).into_owned(),
        sigma: x.rows(theta_dim, model.sigma_dim()).into_owned(),
        eta: x.rows(ts, x.len() - ts).into_owned(),
        objective_value,
        feasibility_residual: violation,
        weighting_used: w.clone(),
        trace,
    })
}

/// Outcome of re-solving `η` on validation data.
#[derive(Clone, Debug)]
pub struct MpecValidation {
    /// Minimized validation objective; `+∞` when the constraints cannot be
    /// met at the frozen model variables.
    pub score: f64,
    pub feasibility_residual: f64,
    pub eta: DVector<f64>,
    pub diagnostic: Option<String>,
}

/// Validation score with `(θ, σ)` frozen: minimizes the GMM objective on
/// `valid` over `η` alone, subject to the constraints.
pub fn validate_mpec(
    model: &dyn ConstrainedModel,
    theta: &[f64],
    sigma: &[f64],
    valid: &Dataset,
    w: &DMatrix<f64>,
    cfg: &MpecConfig,
) -> Result<MpecValidation> {
    if theta.len() != model.theta_dim() || sigma.len() != model.sigma_dim() {
        return Err(Error::Dimension {
            context: "frozen model variables",
            expected: model.theta_dim() + model.sigma_dim(),
            got: theta.len() + sigma.len(),
        });
    }
    let problem = Problem {
        model,
        data: valid,
        root: Weighting { matrix: w.clone(), ridge_applied: false }.sqrt(),
        w,
        free: Free::EtaOnly,
        frozen: theta.iter().chain(sigma).copied().collect(),
    };
    let (eta, score, violation, _) = problem.solve(DVector::zeros(problem.n_vars()), cfg)?;
    if violation > FEASIBILITY_TOL || !score.is_finite() {
        return Ok(MpecValidation {
            score: f64::INFINITY,
            feasibility_residual: violation,
            eta,
            diagnostic: Some(format!(
                "constraints infeasible at frozen model variables (max violation {violation:.3e})"
            )),
        });
    }
    Ok(MpecValidation {
        score,
        feasibility_residual: violation,
        eta,
        diagnostic: None,
    })
}

/// Fits on the training folds of split `s`; `W_S` comes from those folds.
pub fn train_mpec_on_subset(
    model: &dyn ConstrainedModel,
    data: &Dataset,
    plan: &SplitPlan,
    s: usize,
    spec: &WeightingSpec,
    cfg: &MpecConfig,
) -> Result<ConstrainedEstimate> {
    let train = data.select(&plan.train_indices(s))?;
    estimate_mpec(model, &train, spec, cfg)
}

/// `(k, r)`-fold cross-validation of constrained models. Control flow and
/// report layout match [`crate::selection::cross_validate`]; the trained
/// parameters in the report are `(θ, σ)` stacked.
pub fn cross_validate_mpec(
    models: &[&dyn ConstrainedModel],
    data: &Dataset,
    cv: &CvConfig,
    cfg: &MpecConfig,
) -> Result<CvReport> {
    if models.is_empty() {
        return Err(Error::config("cross-validation needs at least one model"));
    }
    let shuffled;
    let data = match cv.shuffle_seed {
        Some(seed) => {
            shuffled = data.shuffled(seed);
            &shuffled
        }
        None => data,
    };
    let plan = make_splits(data.len(), cv.r, cv.k)?;
    let n_splits = plan.num_splits();
    let tasks: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|i| (0..n_splits).map(move |s| (i, s)))
        .collect();
    // Each task solves its coupled constraint system on one thread.
    let outcomes: Vec<Result<(TrainedSplit, MpecValidation)>> = tasks
        .par_iter()
        .map(|&(i, s)| {
            let model = models[i];
            let est = train_mpec_on_subset(model, data, &plan, s, &cv.weighting, cfg)?;
            let valid = data.select(&plan.valid_indices(s))?;
            let v = validate_mpec(
                model,
                est.theta.as_slice(),
                est.sigma.as_slice(),
                &valid,
                &est.weighting_used,
                cfg,
            )?;
            let stacked = DVector::from_iterator(
                est.theta.len() + est.sigma.len(),
                est.theta.iter().chain(est.sigma.iter()).copied(),
            );
            Ok((
                TrainedSplit {
                    theta: stacked,
                    train_score: est.objective_value,
                    weighting: est.weighting_used,
                },
                v,
            ))
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
                Ok((trained, v)) => {
                    if let Some(d) = &v.diagnostic {
                        report.failure.get_or_insert(format!("split {s}: {d}"));
                    }
                    report.split_scores.push(v.score);
                    report.splits.push(trained);
                }
                Err(e) => {
                    report.failure.get_or_insert(format!("split {s}: {e}"));
                    report.split_scores.push(f64::INFINITY);
                }
            }
        }
        // Infinite split scores propagate into the mean and disqualify.
        report.mean_score = report.split_scores.iter().sum::<f64>() / n_splits as f64;
        if report.failure.is_some() {
            report.mean_score = f64::INFINITY;
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

/// Linear IV written with an explicit structural error per observation:
/// `f = η_t z_t`, `h_t = η_t − (y_t − x_t'θ)`. Eliminating `η` gives
/// [`crate::gmm::LinearIvModel`] on the same column layout.
#[derive(Clone, Debug)]
pub struct LinearIvMpec {
    name: String,
    y_col: usize,
    x_cols: Vec<usize>,
    z_cols: Vec<usize>,
    bounds: ParamBox,
    analytic_jacobian: bool,
}

impl LinearIvMpec {
    pub fn with_columns(name: impl Into<String>, y_col: usize, x_cols: Vec<usize>, z_cols: Vec<usize>) -> Self {
        let bounds = ParamBox::symmetric(x_cols.len(), crate::gmm::LINEAR_IV_BOUND);
        Self {
            name: name.into(),
            y_col,
            x_cols,
            z_cols,
            bounds,
            analytic_jacobian: true,
        }
    }

    /// Forces finite-difference constraint Jacobians.
    pub fn without_analytic_jacobian(mut self) -> Self {
        self.analytic_jacobian = false;
        self
    }
}

impl ConstrainedModel for LinearIvMpec {
    fn name(&self) -> &str {
        &self.name
    }
    fn theta_dim(&self) -> usize {
        self.x_cols.len()
    }
    fn sigma_dim(&self) -> usize {
        0
    }
    fn eta_per_obs(&self) -> usize {
        1
    }
    fn num_moments(&self) -> usize {
        self.z_cols.len()
    }
    fn param_box(&self) -> &ParamBox {
        &self.bounds
    }
    fn moment(&self, obs: &[f64], _theta: &[f64], _sigma: &[f64], eta: &[f64], out: &mut [f64]) {
        for (o, &c) in out.iter_mut().zip(&self.z_cols) {
            *o = eta[0] * obs[c];
        }
    }
    fn num_constraints(&self, t: usize) -> usize {
        t
    }
    fn constraints(&self, data: &Dataset, theta: &[f64], _sigma: &[f64], eta: &[f64], out: &mut [f64]) {
        for (t, obs) in data.rows().enumerate() {
            let fit: f64 = self.x_cols.iter().zip(theta).map(|(&c, b)| obs[c] * b).sum();
            out[t] = eta[t] - (obs[self.y_col] - fit);
        }
    }
    fn constraint_jacobian(&self, data: &Dataset, _theta: &[f64], _sigma: &[f64], _eta: &[f64]) -> Option<DMatrix<f64>> {
        if !self.analytic_jacobian {
            return None;
        }
        let (t, p) = (data.len(), self.x_cols.len());
        let mut j = DMatrix::zeros(t, p + t);
        for (i, obs) in data.rows().enumerate() {
            for (k, &c) in self.x_cols.iter().enumerate() {
                j[(i, k)] = obs[c];
            }
            j[(i, p + i)] = 1.0;
        }
        Some(j)
    }
    fn instrument_rows(&self, obs: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_iterator(1, self.z_cols.len(), self.z_cols.iter().map(|&c| obs[c])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{estimate, LinearIvModel, OptimizerConfig};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn iv_data(t: usize, seed: u64) -> Dataset {
        let mut rng = crate::rng::stream_rng(seed, 0);
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| {
                let z: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
                let u: f64 = rng.sample(StandardNormal);
                let x = [z[0] + 0.5 * z[1] + u, z[2] - 0.3 * z[0] + rng.sample::<f64, _>(StandardNormal)];
                let y = 1.0 + 2.0 * x[0] - x[1] + u + rng.sample::<f64, _>(StandardNormal);
                vec![y, x[0], x[1], z[0], z[1], z[2]]
            })
            .collect();
        Dataset::from_rows(&rows).unwrap()
    }

    #[test]
    fn matches_unconstrained_linear_iv() {
        let data = iv_data(40, 1);
        let m = LinearIvMpec::with_columns("iv", 0, vec![1, 2], vec![3, 4, 5]);
        let g = LinearIvModel::with_columns("iv", 0, vec![1, 2], vec![3, 4, 5]);
        let mp = estimate_mpec(&m, &data, &WeightingSpec::InverseInstrumentGram, &MpecConfig::default()).unwrap();
        let gm = estimate(&g, &data, &WeightingSpec::InverseInstrumentGram, &OptimizerConfig::polish_only()).unwrap();
        assert!((&mp.theta - &gm.theta_hat).amax() < 1e-6, "{} vs {}", mp.theta, gm.theta_hat);
        assert!(mp.feasibility_residual < FEASIBILITY_TOL);
        assert!((mp.objective_value - gm.objective_value).abs() < 1e-8);
    }

    #[test]
    fn finite_difference_path_agrees() {
        let data = iv_data(25, 2);
        let a = LinearIvMpec::with_columns("iv", 0, vec![1, 2], vec![3, 4, 5]);
        let b = a.clone().without_analytic_jacobian();
        let cfg = MpecConfig::default();
        let ea = estimate_mpec(&a, &data, &WeightingSpec::Identity, &cfg).unwrap();
        let eb = estimate_mpec(&b, &data, &WeightingSpec::Identity, &cfg).unwrap();
        assert!((ea.theta - eb.theta).amax() < 1e-6);
    }

    #[test]
    fn validation_penalizes_wrong_theta() {
        let data = iv_data(30, 3);
        let m = LinearIvMpec::with_columns("iv", 0, vec![1, 2], vec![3, 4, 5]);
        let w = DMatrix::identity(3, 3);
        let est = estimate_mpec(&m, &data, &WeightingSpec::Identity, &MpecConfig::default()).unwrap();
        let good = validate_mpec(&m, est.theta.as_slice(), &[], &data, &w, &MpecConfig::default()).unwrap();
        let mut off = est.theta.clone();
        off[0] += 1.0;
        let bad = validate_mpec(&m, off.as_slice(), &[], &data, &w, &MpecConfig::default()).unwrap();
        assert!(bad.score > good.score);
        assert!((good.score - est.objective_value).abs() < 1e-10);
    }
}
