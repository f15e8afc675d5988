//! Asymptotic test of equal cross-validated fit for two models.
//!
//! Under a constant (identity) weight the CV score of model `i` on split `S`
//! is `μ̂_S' μ̂_S` with `μ̂_S` the validation mean moment at `θ_S`. The score
//! difference linearizes to `Σ_S R_S' ξ̄_S` with
//! `R_S = [2 μ̂¹_S; −2 μ̂²_S]` and `ξ_t` the stacked centered moments, so its
//! variance is a quadratic form in the cross-split covariance of `ξ`.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gmm::{moment_matrix, Dataset, MomentModel};
use crate::selection::CvReport;

/// Relative eigenvalue tolerance for the PSD repair of the covariance.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Validation moments of two models on one split, evaluated at that split's
/// trained parameters. Rows are observations.
#[derive(Clone, Debug)]
pub struct SplitDraws {
    /// Observation indices of the validation set.
    pub indices: Vec<usize>,
    pub moments: [DMatrix<f64>; 2],
}

/// Validation moments for every split of a two-model CV run.
#[derive(Clone, Debug)]
pub struct SplitMoments {
    splits: Vec<SplitDraws>,
}

impl SplitMoments {
    pub fn new(splits: Vec<SplitDraws>) -> Result<Self> {
        let first = splits
            .first()
            .ok_or_else(|| Error::config("no splits supplied"))?;
        let (q1, q2) = (first.moments[0].ncols(), first.moments[1].ncols());
        for s in &splits {
            let n = s.indices.len();
            for (m, q) in s.moments.iter().zip([q1, q2]) {
                if m.nrows() != n || m.ncols() != q {
                    return Err(Error::Dimension {
                        context: "split moment draws",
                        expected: n,
                        got: m.nrows(),
                    });
                }
            }
        }
        Ok(Self { splits })
    }

    /// Evaluates both models' moments on each validation set at the trained
    /// parameters stored in `report` (models 0 and 1).
    pub fn from_report(
        models: [&dyn MomentModel; 2],
        data: &Dataset,
        report: &CvReport,
    ) -> Result<Self> {
        check_pair(report)?;
        let plan = &report.plan;
        let splits = (0..plan.num_splits())
            .map(|s| {
                let indices = plan.valid_indices(s);
                let valid = data.select(&indices)?;
                let draw = |i: usize| {
                    moment_matrix(models[i], &valid, report.models[i].splits[s].theta.as_slice())
                };
                Ok(SplitDraws {
                    moments: [draw(0), draw(1)],
                    indices,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(splits)
    }

    pub fn splits(&self) -> &[SplitDraws] {
        &self.splits
    }

    fn stacked_dim(&self) -> usize {
        self.splits[0].moments[0].ncols() + self.splits[0].moments[1].ncols()
    }

    /// `R_S` and the centered stacked moments `ξ_t` (rows) of split `s`.
    fn gradient_and_centered(&self, s: usize) -> (DVector<f64>, DMatrix<f64>) {
        let d = &self.splits[s];
        let n = d.indices.len();
        let mut r = Vec::with_capacity(self.stacked_dim());
        let mut xi = DMatrix::zeros(n, self.stacked_dim());
        let mut offset = 0;
        for (i, m) in d.moments.iter().enumerate() {
            let sign = if i == 0 { 2.0 } else { -2.0 };
            for j in 0..m.ncols() {
                let col = m.column(j);
                let mean = col.mean();
                r.push(sign * mean);
                for t in 0..n {
                    xi[(t, offset + j)] = col[t] - mean;
                }
            }
            offset += m.ncols();
        }
        (DVector::from_vec(r), xi)
    }

    fn scale(&self) -> f64 {
        self.splits
            .iter()
            .flat_map(|d| d.moments.iter())
            .map(|m| m.amax())
            .fold(0.0, f64::max)
    }
}

fn check_pair(report: &CvReport) -> Result<()> {
    if report.models.len() != 2 {
        return Err(Error::config(format!(
            "the CV test compares exactly 2 models, got {}",
            report.models.len()
        )));
    }
    for m in &report.models {
        if let Some(f) = &m.failure {
            return Err(Error::config(format!("model {} failed: {f}", m.name)));
        }
        for s in &m.splits {
            if s.weighting != DMatrix::identity(s.weighting.nrows(), s.weighting.ncols()) {
                return Err(Error::config(
                    "the CV test requires identity weighting on every split",
                ));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarianceMode {
    /// Full cross-split covariance.
    GeneralSplit,
    /// Splits treated as independent; cross-split blocks omitted.
    IndependentSplits,
}

#[derive(Clone, Debug)]
pub struct VarianceEstimate {
    pub mode: VarianceMode,
    pub sigma_sq: f64,
    /// Covariance blocks: per split for the independent mode, the full
    /// stacked matrix for the general mode.
    pub components: Vec<DMatrix<f64>>,
    /// Negative eigenvalues were clipped.
    pub psd_repaired: bool,
    /// `sigma_sq` is zero up to rounding.
    pub degenerate: bool,
}

fn degenerate(sigma_sq: f64, grad_sq: f64, scale: f64) -> bool {
    sigma_sq <= 0.0 || sigma_sq <= 1e-13 * grad_sq * scale * scale
}

/// `σ̂² = Σ_S R_S' V̂(S) R_S` with `V̂(S)` the covariance of `ξ_t` over the
/// validation set of `S`.
pub fn estimate_variance_independent(moments: &SplitMoments) -> Result<VarianceEstimate> {
    let mut sigma_sq = 0.0;
    let mut grad_sq = 0.0;
    let mut components = Vec::with_capacity(moments.splits.len());
    for s in 0..moments.splits.len() {
        let n = moments.splits[s].indices.len();
        if n < 2 {
            return Err(Error::config(format!(
                "split {s} has {n} validation observation(s); need at least 2"
            )));
        }
        let (r, xi) = moments.gradient_and_centered(s);
        let cov = xi.tr_mul(&xi) / n as f64;
        sigma_sq += r.dot(&(&cov * &r));
        grad_sq += r.norm_squared();
        components.push(cov);
    }
    Ok(VarianceEstimate {
        mode: VarianceMode::IndependentSplits,
        degenerate: degenerate(sigma_sq, grad_sq, moments.scale()),
        sigma_sq: sigma_sq.max(0.0),
        components,
        psd_repaired: false,
    })
}

/// `σ̂² = R̂_*' V̂_* R̂_*` with blocks
/// `C^{(S,S')} = (1/n) Σ_{t ∈ V_S ∩ V_S'} ξ_t^{(S)} ξ_t^{(S')'}` and `n` the
/// mean validation size.
pub fn estimate_variance_general(moments: &SplitMoments) -> Result<VarianceEstimate> {
    let n_splits = moments.splits.len();
    let d = moments.stacked_dim();
    let parts: Vec<(DVector<f64>, DMatrix<f64>)> =
        (0..n_splits).map(|s| moments.gradient_and_centered(s)).collect();
    let n = moments.splits.iter().map(|s| s.indices.len()).sum::<usize>() as f64 / n_splits as f64;
    if n < 2.0 {
        return Err(Error::config("validation sets need at least 2 observations"));
    }

    let mut v = DMatrix::zeros(n_splits * d, n_splits * d);
    for a in 0..n_splits {
        for b in a..n_splits {
            let block = cross_block(&moments.splits[a], &parts[a].1, &moments.splits[b], &parts[b].1) / n;
            v.view_mut((a * d, b * d), (d, d)).copy_from(&block);
            if a != b {
                v.view_mut((b * d, a * d), (d, d)).copy_from(&block.transpose());
            }
        }
    }
    let (v, psd_repaired) = clip_psd(v);
    if psd_repaired {
        log::warn!("cross-split covariance was not PSD; negative eigenvalues clipped");
    }
    let r_star = DVector::from_iterator(
        n_splits * d,
        parts.iter().flat_map(|(r, _)| r.iter().copied()),
    );
    let sigma_sq = r_star.dot(&(&v * &r_star));
    Ok(VarianceEstimate {
        mode: VarianceMode::GeneralSplit,
        degenerate: degenerate(sigma_sq, r_star.norm_squared(), moments.scale()),
        sigma_sq: sigma_sq.max(0.0),
        components: vec![v],
        psd_repaired,
    })
}

/// `Σ_{t ∈ V_a ∩ V_b} ξ_t^{(a)} ξ_t^{(b)'}`, matching rows by observation index.
fn cross_block(
    a: &SplitDraws,
    xa: &DMatrix<f64>,
    b: &SplitDraws,
    xb: &DMatrix<f64>,
) -> DMatrix<f64> {
    let d = xa.ncols();
    let mut out = DMatrix::zeros(d, d);
    let (mut i, mut j) = (0, 0);
    // Validation indices are increasing, so a merge finds the intersection.
    while i < a.indices.len() && j < b.indices.len() {
        match a.indices[i].cmp(&b.indices[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out += xa.row(i).transpose() * xb.row(j);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Symmetrizes and clips eigenvalues below `PSD_TOLERANCE · max|λ|` to zero.
/// The flag is set only when a clipped eigenvalue was materially negative.
fn clip_psd(m: DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let tol = PSD_TOLERANCE * max;
    if eig.eigenvalues.iter().all(|&l| l >= -tol) {
        return (sym, false);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let repaired =
        &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (repaired, true)
}

/// How the score difference is scaled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Normalization {
    /// `√n (Q¹ − Q²) / σ̂²`, the literal form of the statistic.
    Variance,
    /// `√n · C(r,k) · (Q¹ − Q²) / σ̂`; unit variance under the null.
    #[default]
    Studentized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Model 1 has the smaller averaged CV score.
    FirstBetter,
    /// Model 2 has the smaller averaged CV score.
    SecondBetter,
    Tie,
}

#[derive(Clone, Debug)]
pub struct TestResult {
    pub r_cv: f64,
    pub sigma_hat_sq: f64,
    /// Validation-set size used in the `√n` scaling.
    pub n_valid: f64,
    pub normalization: Normalization,
    pub p_value_two_sided: f64,
    /// `Φ(−|r_cv|)`, the p-value against the alternative in `direction`.
    pub p_value_one_sided: f64,
    pub direction: Direction,
}

/// R_CV statistic for the two models in `report`.
pub fn compute_rcv(
    report: &CvReport,
    variance: &VarianceEstimate,
    normalization: Normalization,
) -> Result<TestResult> {
    check_pair(report)?;
    let diff = report.models[0].mean_score - report.models[1].mean_score;
    let n = report.plan.mean_valid_size();
    if diff == 0.0 && !variance.sigma_sq.is_nan() {
        // An exact tie carries no evidence either way, whatever the variance.
        return Ok(TestResult {
            r_cv: 0.0,
            sigma_hat_sq: variance.sigma_sq,
            n_valid: n,
            normalization,
            p_value_two_sided: 1.0,
            p_value_one_sided: 0.5,
            direction: Direction::Tie,
        });
    }
    if variance.degenerate || variance.sigma_sq <= 0.0 || !variance.sigma_sq.is_finite() {
        return Err(Error::DegenerateVariance(format!(
            "sigma^2 = {:e}; the moments have no sampling variation",
            variance.sigma_sq
        )));
    }
    let c = report.plan.num_splits() as f64;
    let r_cv = match normalization {
        Normalization::Variance => n.sqrt() * diff / variance.sigma_sq,
        Normalization::Studentized => n.sqrt() * c * diff / variance.sigma_sq.sqrt(),
    };
    let std_normal = Normal::standard();
    let tail = std_normal.cdf(-r_cv.abs());
    let direction = if diff < 0.0 {
        Direction::FirstBetter
    } else if diff > 0.0 {
        Direction::SecondBetter
    } else {
        Direction::Tie
    };
    Ok(TestResult {
        r_cv,
        sigma_hat_sq: variance.sigma_sq,
        n_valid: n,
        normalization,
        p_value_two_sided: (2.0 * tail).min(1.0),
        p_value_one_sided: tail,
        direction,
    })
}

/// One-sample Kolmogorov–Smirnov test against `N(0, 1)`.
///
/// Returns `(D, p)` with the asymptotic Kolmogorov distribution, using the
/// finite-sample correction `(√n + 0.12 + 0.11/√n) D`.
pub fn ks_test_standard_normal(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let std_normal = Normal::standard();
    let nf = n as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = std_normal.cdf(x);
            (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
        })
        .fold(0.0, f64::max);
    let lambda = (nf.sqrt() + 0.12 + 0.11 / nf.sqrt()) * d;
    (d, kolmogorov_survival(lambda))
}

/// `P(K > λ) = 2 Σ_{j≥1} (−1)^{j−1} exp(−2 j² λ²)`.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(indices: Vec<usize>, a: &[f64], b: &[f64]) -> SplitDraws {
        SplitDraws {
            indices,
            moments: [
                DMatrix::from_column_slice(a.len(), 1, a),
                DMatrix::from_column_slice(b.len(), 1, b),
            ],
        }
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Standard critical values of the limiting distribution.
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-3);
        let grid: Vec<f64> = (1..1000).map(|i| {
            let u = i as f64 / 1000.0;
            statrs::distribution::Normal::standard().inverse_cdf(u)
        }).collect();
        let (d, p) = ks_test_standard_normal(&grid);
        assert!(d < 2e-3 && p > 0.99);
        let shifted: Vec<f64> = grid.iter().map(|x| x + 0.5).collect();
        assert!(ks_test_standard_normal(&shifted).1 < 1e-6);
    }

    #[test]
    fn constant_moments_are_degenerate() {
        let m = SplitMoments::new(vec![
            draws(vec![2, 3], &[1.0, 1.0], &[2.0, 2.0]),
            draws(vec![0, 1], &[1.0, 1.0], &[2.0, 2.0]),
        ])
        .unwrap();
        assert!(estimate_variance_independent(&m).unwrap().degenerate);
        assert!(estimate_variance_general(&m).unwrap().degenerate);
    }

    #[test]
    fn disjoint_splits_agree() {
        let m = SplitMoments::new(vec![
            draws(vec![2, 3, 4], &[1.0, 2.0, 4.0], &[0.5, -1.0, 0.0]),
            draws(vec![0, 1, 5], &[3.0, 0.0, 1.0], &[2.0, 2.5, 1.0]),
        ])
        .unwrap();
        let a = estimate_variance_independent(&m).unwrap().sigma_sq;
        let b = estimate_variance_general(&m).unwrap().sigma_sq;
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
    }

    #[test]
    fn duplicated_splits_scale_quadratically() {
        let one = draws(vec![0, 1, 2, 3], &[1.0, 2.0, 4.0, 0.0], &[0.5, -1.0, 0.0, 2.0]);
        let single = estimate_variance_general(&SplitMoments::new(vec![one.clone()]).unwrap())
            .unwrap()
            .sigma_sq;
        let dup = estimate_variance_general(&SplitMoments::new(vec![one.clone(), one.clone(), one]).unwrap())
            .unwrap()
            .sigma_sq;
        assert!((dup - 9.0 * single).abs() < 1e-10 * dup);
    }

    #[test]
    fn reordering_within_a_split_is_invariant() {
        let a = SplitMoments::new(vec![draws(vec![0, 1, 2], &[1.0, 2.0, 4.0], &[0.5, -1.0, 0.0])]).unwrap();
        let b = SplitMoments::new(vec![draws(vec![0, 1, 2], &[4.0, 1.0, 2.0], &[0.0, 0.5, -1.0])]).unwrap();
        let va = estimate_variance_independent(&a).unwrap().sigma_sq;
        let vb = estimate_variance_independent(&b).unwrap().sigma_sq;
        assert!((va - vb).abs() < 1e-14);
    }

    #[test]
    fn tiny_split_is_rejected() {
        let m = SplitMoments::new(vec![draws(vec![0], &[1.0], &[2.0])]).unwrap();
        assert!(estimate_variance_independent(&m).is_err());
    }

    #[test]
    fn psd_clipping_flags_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (fixed, flag) = clip_psd(m);
        assert!(flag);
        assert!(fixed.symmetric_eigen().eigenvalues.min() > -1e-12);
        let (_, flag) = clip_psd(DMatrix::identity(2, 2));
        assert!(!flag);
    }
}
