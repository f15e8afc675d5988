use nalgebra::{DMatrix, DVector};

use super::dataset::Dataset;
use super::model::{mean_moment, MomentModel};
use super::optimizer::{
    levenberg_marquardt, multistart_points, nelder_mead, JacobianFn, LeastSquaresConfig, OptimizerConfig, ROUNDING,
};
use super::weighting::{resolve_weighting, Weighting, WeightingSpec};
use crate::error::{Error, Result};

/// Outcome of one multistart run.
#[derive(Clone, Debug)]
pub struct StartTrace {
    pub start: DVector<f64>,
    pub simplex_evaluations: usize,
    pub polish_iterations: usize,
    pub value: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, Default)]
pub struct OptimizerTrace {
    pub starts: Vec<StartTrace>,
    pub best_start: usize,
}

/// A one-step GMM estimate.
#[derive(Clone, Debug)]
pub struct GmmEstimate {
    pub theta_hat: DVector<f64>,
    /// `Q(θ̂) = ḡ' W ḡ`, nonnegative.
    pub objective_value: f64,
    pub weighting_used: DMatrix<f64>,
    /// The weighting needed a ridge (degenerate instruments).
    pub ridge_applied: bool,
    pub trace: OptimizerTrace,
}

/// `ḡ' W ḡ` with an already materialized weighting matrix.
pub fn quadratic_form(g: &DVector<f64>, w: &DMatrix<f64>) -> f64 {
    // A PSD form can come out at -1e-17 through rounding.
    g.dot(&(w * g)).max(0.0)
}

/// GMM objective `Q(θ) = ḡ(θ)' W ḡ(θ)` with `ḡ` the sample mean moment.
pub fn evaluate_objective<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
    spec: &WeightingSpec,
) -> Result<f64> {
    model.param_box().check(theta)?;
    let w = resolve_weighting(spec, model, data)?;
    objective_with(model, data, theta, &w.matrix)
}

/// Objective with a resolved weighting matrix (no box check).
pub fn objective_with<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
    w: &DMatrix<f64>,
) -> Result<f64> {
    if w.nrows() != model.num_moments() || w.ncols() != model.num_moments() {
        return Err(Error::Dimension {
            context: "weighting matrix vs moment count",
            expected: model.num_moments(),
            got: w.nrows(),
        });
    }
    let g = mean_moment(model, data, theta);
    Ok(quadratic_form(&g, w))
}

/// Minimizes the GMM objective over the model's parameter box.
pub fn estimate<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
    spec: &WeightingSpec,
    opt: &OptimizerConfig,
) -> Result<GmmEstimate> {
    let w = resolve_weighting(spec, model, data)?;
    estimate_with(model, data, w, opt)
}

/// [`estimate`] with a weighting matrix resolved by the caller.
pub fn estimate_with<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
    weighting: Weighting,
    opt: &OptimizerConfig,
) -> Result<GmmEstimate> {
    let q = model.num_moments();
    let p = model.num_params();
    if weighting.dim() != q {
        return Err(Error::Dimension {
            context: "weighting matrix vs moment count",
            expected: q,
            got: weighting.dim(),
        });
    }
    let bounds = model.param_box();
    if bounds.dim() != p {
        return Err(Error::Dimension {
            context: "parameter box",
            expected: p,
            got: bounds.dim(),
        });
    }
    if opt.starts == 0 {
        return Err(Error::config("optimizer needs at least one start"));
    }
    if opt.starts > 1 && !bounds.is_bounded() {
        return Err(Error::config("multistart requires a bounded parameter box"));
    }

    let root = weighting.sqrt();
    let residual = |theta: &[f64], out: &mut [f64]| {
        let g = mean_moment(model, data, theta);
        let r = &root * g;
        out.copy_from_slice(r.as_slice());
    };
    let objective = |theta: &[f64]| {
        let g = mean_moment(model, data, theta);
        quadratic_form(&g, &weighting.matrix)
    };
    let analytic = model.mean_jacobian(data, bounds.center().as_slice()).is_some();
    let jacobian = |theta: &[f64]| {
        let j = model.mean_jacobian(data, theta).expect("analytic Jacobian");
        &root * j
    };

    let initial = model
        .warm_start(data, &weighting.matrix)
        .or_else(|| model.initial_guess())
        .unwrap_or_else(|| bounds.center());
    if initial.len() != p {
        return Err(Error::Dimension {
            context: "initial guess",
            expected: p,
            got: initial.len(),
        });
    }
    let lm_cfg = LeastSquaresConfig {
        max_iter: opt.polish_max_iter,
        param_tol: opt.param_tol,
        objective_tol: opt.objective_tol,
        ..LeastSquaresConfig::default()
    };

    let mut trace = OptimizerTrace::default();
    let mut best: Option<(DVector<f64>, f64, bool)> = None;
    for start in multistart_points(bounds, initial, opt.starts, opt.seed) {
        let (mut x, mut value, mut converged, mut evals) = (start.clone(), objective(start.as_slice()), false, 1);
        if opt.simplex_max_evals > 0 {
            let s = nelder_mead(
                objective,
                &start,
                bounds,
                opt.simplex_max_evals,
                opt.param_tol,
                opt.objective_tol,
            );
            x = s.x;
            value = s.value;
            converged = s.converged;
            evals = s.evaluations;
        }
        let mut polish_iterations = 0;
        if opt.polish && p > 0 {
            let lm = levenberg_marquardt(residual, q, &x, bounds, &lm_cfg, analytic.then_some(&jacobian as JacobianFn));
            polish_iterations = lm.iterations;
            let polished = objective(lm.x.as_slice());
            if polished.is_finite() && polished <= value + ROUNDING * value {
                x = lm.x;
                value = polished;
            }
            converged = lm.converged;
        }
        trace.starts.push(StartTrace {
            start,
            simplex_evaluations: evals,
            polish_iterations,
            value,
            converged,
        });
        let better = match &best {
            None => value.is_finite(),
            Some((_, v, _)) => value < *v,
        };
        if better {
            trace.best_start = trace.starts.len() - 1;
            best = Some((x, value, converged));
        }
    }

    let any_converged = trace.starts.iter().any(|s| s.converged && s.value.is_finite());
    match best {
        Some((theta_hat, objective_value, _)) if any_converged => Ok(GmmEstimate {
            theta_hat,
            objective_value,
            weighting_used: weighting.matrix,
            ridge_applied: weighting.ridge_applied,
            trace,
        }),
        other => {
            let (best_theta, best_value) = other
                .map(|(x, v, _)| (x, v))
                .unwrap_or_else(|| (bounds.center(), f64::INFINITY));
            Err(Error::NonConvergence {
                starts: opt.starts,
                best_theta,
                best_value,
                diagnostic: format!(
                    "no start met tolerances (param {:e}, objective {:e}) for {}",
                    opt.param_tol,
                    opt.objective_tol,
                    model.name()
                ),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::model::{FnMomentModel, ParamBox};

    fn location() -> FnMomentModel {
        FnMomentModel::new("location", 1, ParamBox::symmetric(1, 100.0), |v, th, out| {
            out[0] = v[0] - th[0]
        })
    }

    #[test]
    fn objective_of_centered_residual() {
        let d = Dataset::from_scalars(&[1.0, 3.0]).unwrap();
        let m = location();
        assert_eq!(evaluate_objective(&m, &d, &[2.0], &WeightingSpec::Identity).unwrap(), 0.0);
        assert_eq!(evaluate_objective(&m, &d, &[0.0], &WeightingSpec::Identity).unwrap(), 4.0);
    }

    #[test]
    fn objective_rejects_bad_inputs() {
        let d = Dataset::from_scalars(&[1.0, 3.0]).unwrap();
        let m = location();
        let w = WeightingSpec::Fixed(DMatrix::identity(2, 2));
        assert!(matches!(evaluate_objective(&m, &d, &[0.0], &w), Err(Error::Dimension { .. })));
        assert!(matches!(
            evaluate_objective(&m, &d, &[500.0], &WeightingSpec::Identity),
            Err(Error::OutOfBox { .. })
        ));
    }

    #[test]
    fn location_estimate_is_sample_mean() {
        let d = Dataset::from_scalars(&[1.0, 2.5, 7.0, -3.0]).unwrap();
        let est = estimate(&location(), &d, &WeightingSpec::Identity, &OptimizerConfig::default()).unwrap();
        assert!((est.theta_hat[0] - 1.875).abs() < 1e-9);
        assert!(est.objective_value < 1e-16);
        assert_eq!(est.trace.starts.len(), 8);
    }

    #[test]
    fn multistart_escapes_local_minimum() {
        // (θ² - 4)² + θ: minima near ±2, the global one near -2.
        let m = FnMomentModel::new("double-well", 2, ParamBox::symmetric(1, 5.0), |_, th, out| {
            out[0] = th[0] * th[0] - 4.0;
            out[1] = 0.5 * (th[0] + 5.0).sqrt();
        })
        .with_initial_guess(DVector::from_vec(vec![2.5]));
        let d = Dataset::from_scalars(&[0.0]).unwrap();
        let single = OptimizerConfig { starts: 1, ..OptimizerConfig::default() };
        let local = estimate(&m, &d, &WeightingSpec::Identity, &single).unwrap();
        let multi = estimate(&m, &d, &WeightingSpec::Identity, &OptimizerConfig::default()).unwrap();
        assert!(local.theta_hat[0] > 0.0);
        assert!(multi.theta_hat[0] < 0.0);
        assert!(multi.objective_value < local.objective_value);
    }

    #[test]
    fn nonconvergence_reports_best_point() {
        let m = location();
        let d = Dataset::from_scalars(&[1.0, 2.0]).unwrap();
        let opt = OptimizerConfig {
            starts: 1,
            simplex_max_evals: 3,
            polish: false,
            ..OptimizerConfig::default()
        };
        match estimate(&m, &d, &WeightingSpec::Identity, &opt) {
            Err(Error::NonConvergence { best_value, .. }) => assert!(best_value.is_finite()),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
