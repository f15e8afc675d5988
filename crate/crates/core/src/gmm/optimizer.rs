//! Box-constrained local minimizers and multistart points.
//!
//! Two local methods are provided: a projected Nelder–Mead simplex for
//! derivative-free exploration and a projected Levenberg–Marquardt solver
//! for least-squares polish. GMM objectives are squared norms `‖S ḡ(θ)‖²`, so
//! the polish works on the residual vector `S ḡ(θ)` with a finite-difference
//! Jacobian.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::model::ParamBox;
use crate::rng::{derive_seed, stream_rng};

/// Settings for [`crate::gmm::estimate`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    /// Number of multistart points (the first is the model's initial guess).
    pub starts: usize,
    /// Simplex evaluation budget per start; zero skips the simplex stage.
    pub simplex_max_evals: usize,
    pub param_tol: f64,
    pub objective_tol: f64,
    /// Run the Levenberg–Marquardt polish after the simplex stage.
    pub polish: bool,
    pub polish_max_iter: usize,
    /// Seeds the randomized Halton shift of the multistart points.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            simplex_max_evals: 10_000,
            param_tol: 1e-8,
            objective_tol: 1e-12,
            polish: true,
            polish_max_iter: 200,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    /// Single start, no simplex, polish only. Suited to smooth objectives
    /// with a unique minimizer such as linear IV.
    pub fn polish_only() -> Self {
        Self {
            starts: 1,
            simplex_max_evals: 0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimplexResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Projected Nelder–Mead minimization of `f` inside `bounds`.
pub fn nelder_mead<F>(
    f: F,
    x0: &DVector<f64>,
    bounds: &ParamBox,
    max_evals: usize,
    param_tol: f64,
    objective_tol: f64,
) -> SimplexResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let eval = |x: &DVector<f64>, count: &mut usize| -> f64 {
        *count += 1;
        let v = f(x.as_slice());
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let project = |mut x: DVector<f64>| {
        bounds.project(x.as_mut_slice());
        x
    };

    let mut evals = 0;
    let mut start = x0.clone();
    bounds.project(start.as_mut_slice());
    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(&start, &mut evals);
    simplex.push((start.clone(), v0));
    for i in 0..n {
        let (lo, hi) = (bounds.lower()[i], bounds.upper()[i]);
        let width = hi - lo;
        let step = if width.is_finite() && width > 0.0 {
            0.05 * width
        } else {
            0.1 * start[i].abs().max(1.0)
        };
        let mut x = start.clone();
        x[i] = if start[i] + step <= hi { start[i] + step } else { start[i] - step };
        let x = project(x);
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let mut converged = false;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = simplex
            .iter()
            .skip(1)
            .map(|(x, _)| (x - &simplex[0].0).amax())
            .fold(0.0_f64, f64::max);
        let scale = 1.0 + simplex[0].0.amax();
        if (worst - best).abs() <= objective_tol * (1.0 + best.abs()) && spread <= param_tol * scale {
            converged = true;
            break;
        }

        let centroid = simplex[..n]
            .iter()
            .fold(DVector::zeros(n), |acc, (x, _)| acc + x)
            / n as f64;
        let reflect = project(&centroid + (&centroid - &simplex[n].0));
        let fr = eval(&reflect, &mut evals);
        if fr < simplex[0].1 {
            let expand = project(&centroid + (&reflect - &centroid) * 2.0);
            let fe = eval(&expand, &mut evals);
            simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
            continue;
        }
        let (contract, fc) = if fr < simplex[n].1 {
            let c = project(&centroid + (&reflect - &centroid) * 0.5);
            let v = eval(&c, &mut evals);
            (c, v)
        } else {
            let c = project(&centroid + (&simplex[n].0 - &centroid) * 0.5);
            let v = eval(&c, &mut evals);
            (c, v)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (contract, fc);
            continue;
        }
        let best_x = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            let x = project(&best_x + (&entry.0 - &best_x) * 0.5);
            let v = eval(&x, &mut evals);
            *entry = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    SimplexResult {
        x,
        value,
        evaluations: evals,
        converged,
    }
}

#[derive(Clone, Debug)]
pub struct LeastSquaresConfig {
    pub max_iter: usize,
    pub param_tol: f64,
    pub objective_tol: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
}

impl Default for LeastSquaresConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            param_tol: 1e-8,
            objective_tol: 1e-12,
            fd_step: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LeastSquaresResult {
    pub x: DVector<f64>,
    /// `‖r(x)‖²`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Relative cost change treated as a tie; lets the polish keep refining
/// where the objective is flat to machine precision.
pub(crate) const ROUNDING: f64 = 1e-14;

/// Analytic Jacobian callback: returns `∂r/∂x` (residuals × variables).
pub type JacobianFn<'a> = &'a dyn Fn(&[f64]) -> DMatrix<f64>;

/// Projected Levenberg–Marquardt minimization of `‖r(x)‖²` inside `bounds`.
///
/// `residual` writes `m` residuals. Without an analytic Jacobian, central
/// differences are used (one-sided next to an active bound).
pub fn levenberg_marquardt<R>(
    residual: R,
    m: usize,
    x0: &DVector<f64>,
    bounds: &ParamBox,
    cfg: &LeastSquaresConfig,
    jacobian: Option<JacobianFn<'_>>,
) -> LeastSquaresResult
where
    R: Fn(&[f64], &mut [f64]),
{
    let n = x0.len();
    let mut x = x0.clone();
    bounds.project(x.as_mut_slice());
    let mut r = DVector::zeros(m);
    residual(x.as_slice(), r.as_mut_slice());
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return LeastSquaresResult {
            x,
            cost: f64::INFINITY,
            iterations: 0,
            converged: false,
        };
    }
    if cost == 0.0 || n == 0 {
        return LeastSquaresResult {
            x,
            cost,
            iterations: 0,
            converged: true,
        };
    }

    let mut mu: Option<f64> = None;
    let mut trial_r = DVector::zeros(m);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let jac = match jacobian {
            Some(jf) => jf(x.as_slice()),
            None => fd_jacobian(&residual, &x, &r, bounds, cfg.fd_step),
        };
        let a = jac.tr_mul(&jac);
        let g = jac.tr_mul(&r);
        let max_diag = a.diagonal().amax();
        if max_diag == 0.0 || !max_diag.is_finite() {
            converged = max_diag == 0.0;
            break;
        }
        let mut lambda = mu.unwrap_or(1e-3);
        let mut accepted = None;
        while lambda < 1e20 {
            let mut damped = a.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * a[(i, i)].max(1e-12 * max_diag);
            }
            if let Some(ch) = damped.cholesky() {
                let step = ch.solve(&(-&g));
                let mut trial = &x + &step;
                bounds.project(trial.as_mut_slice());
                residual(trial.as_slice(), trial_r.as_mut_slice());
                let trial_cost = trial_r.norm_squared();
                if trial_cost.is_finite() && trial_cost <= cost + ROUNDING * cost {
                    accepted = Some((trial, trial_cost));
                    break;
                }
            }
            lambda *= 10.0;
        }
        let Some((trial, trial_cost)) = accepted else {
            // No descent direction left at machine precision.
            converged = true;
            break;
        };
        let moved = (&trial - &x).amax();
        let decrease = cost - trial_cost;
        x = trial;
        std::mem::swap(&mut r, &mut trial_r);
        cost = trial_cost;
        mu = Some((lambda * 0.1).max(1e-12));
        if cost == 0.0
            || moved <= cfg.param_tol * (1.0 + x.amax())
            || (decrease <= cfg.objective_tol * (1.0 + cost) && lambda <= 1.0)
        {
            converged = true;
            break;
        }
    }
    LeastSquaresResult {
        x,
        cost,
        iterations,
        converged,
    }
}

pub(crate) fn fd_jacobian<R>(
    residual: &R,
    x: &DVector<f64>,
    r0: &DVector<f64>,
    bounds: &ParamBox,
    rel_step: f64,
) -> DMatrix<f64>
where
    R: Fn(&[f64], &mut [f64]),
{
    let n = x.len();
    let m = r0.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    let mut rp = DVector::zeros(m);
    let mut rm = DVector::zeros(m);
    for j in 0..n {
        let h = rel_step * x[j].abs().max(1.0);
        let (lo, hi) = (bounds.lower()[j], bounds.upper()[j]);
        let up_ok = x[j] + h <= hi;
        let down_ok = x[j] - h >= lo;
        let col = if up_ok && down_ok {
            xp[j] = x[j] + h;
            residual(xp.as_slice(), rp.as_mut_slice());
            xp[j] = x[j] - h;
            residual(xp.as_slice(), rm.as_mut_slice());
            (&rp - &rm) / (2.0 * h)
        } else if up_ok {
            xp[j] = x[j] + h;
            residual(xp.as_slice(), rp.as_mut_slice());
            (&rp - r0) / h
        } else {
            xp[j] = x[j] - h;
            residual(xp.as_slice(), rm.as_mut_slice());
            (r0 - &rm) / h
        };
        xp[j] = x[j];
        jac.set_column(j, &col);
    }
    jac
}

/// Multistart points: `initial` first, then a randomly shifted Halton
/// sequence mapped into `bounds`.
pub fn multistart_points(
    bounds: &ParamBox,
    initial: DVector<f64>,
    count: usize,
    seed: u64,
) -> Vec<DVector<f64>> {
    let dim = bounds.dim();
    let mut out = Vec::with_capacity(count);
    let mut first = initial;
    bounds.project(first.as_mut_slice());
    out.push(first);
    if count <= 1 {
        return out;
    }
    let mut rng = stream_rng(derive_seed(seed, "multistart"), 0);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let primes = first_primes(dim);
    for i in 1..count {
        let u: Vec<f64> = (0..dim)
            .map(|d| (radical_inverse(i as u64, primes[d]) + shift[d]).fract())
            .collect();
        out.push(bounds.from_unit(&u));
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut acc = 0.0;
    while i > 0 {
        acc += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    acc
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn simplex_finds_rosenbrock_minimum() {
        let b = ParamBox::symmetric(2, 5.0);
        let res = nelder_mead(rosenbrock, &DVector::from_vec(vec![-1.2, 1.0]), &b, 10_000, 1e-10, 1e-14);
        assert!(res.converged);
        assert!((res.x[0] - 1.0).abs() < 1e-6 && (res.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn simplex_respects_bounds() {
        let b = ParamBox::new(vec![2.0, -5.0], vec![5.0, 5.0]).unwrap();
        let res = nelder_mead(|x| x[0] * x[0] + x[1] * x[1], &DVector::from_vec(vec![4.0, 3.0]), &b, 5_000, 1e-10, 1e-14);
        assert!((res.x[0] - 2.0).abs() < 1e-6);
        assert!(res.x[1].abs() < 1e-5);
    }

    #[test]
    fn lm_solves_rosenbrock_residuals() {
        let res = levenberg_marquardt(
            |x, r| {
                r[0] = 1.0 - x[0];
                r[1] = 10.0 * (x[1] - x[0] * x[0]);
            },
            2,
            &DVector::from_vec(vec![-1.2, 1.0]),
            &ParamBox::unbounded(2),
            &LeastSquaresConfig::default(),
            None,
        );
        assert!(res.converged);
        assert!((res.x[0] - 1.0).abs() < 1e-8 && (res.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn lm_linear_least_squares_is_exact() {
        // r = A x - b with a full-rank 4x2 A.
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.5, 2.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.3]);
        let exact = (a.tr_mul(&a)).cholesky().unwrap().solve(&a.tr_mul(&b));
        let res = levenberg_marquardt(
            |x, r| {
                let v = &a * DVector::from_column_slice(x) - &b;
                r.copy_from_slice(v.as_slice());
            },
            4,
            &DVector::from_vec(vec![40.0, -70.0]),
            &ParamBox::unbounded(2),
            &LeastSquaresConfig::default(),
            None,
        );
        assert!((res.x - exact).amax() < 1e-10);
    }

    #[test]
    fn halton_points_are_deterministic_and_inside() {
        let b = ParamBox::new(vec![-1.0, 0.0, 5.0], vec![1.0, 2.0, 6.0]).unwrap();
        let p = multistart_points(&b, b.center(), 16, 3);
        assert_eq!(p.len(), 16);
        assert!(p.iter().all(|x| b.contains(x.as_slice())));
        assert_eq!(p, multistart_points(&b, b.center(), 16, 3));
        assert_ne!(p[1], multistart_points(&b, b.center(), 16, 4)[1]);
        assert!((radical_inverse(3, 2) - 0.75).abs() < 1e-15);
        assert_eq!(first_primes(5), vec![2, 3, 5, 7, 11]);
    }
}
