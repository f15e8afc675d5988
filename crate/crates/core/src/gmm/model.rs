use nalgebra::{DMatrix, DVector};

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// Per-parameter lower/upper bounds. Infinite bounds are allowed but
/// multistart needs a bounded box.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                context: "parameter box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::config(format!(
                "parameter {i}: lower bound {} exceeds upper bound {}",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    /// `[-bound, bound]` in every coordinate.
    pub fn symmetric(dim: usize, bound: f64) -> Self {
        Self {
            lower: vec![-bound; dim],
            upper: vec![bound; dim],
        }
    }

    pub fn unbounded(dim: usize) -> Self {
        Self::symmetric(dim, f64::INFINITY)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|b| b.is_finite())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                context: "parameter vector",
                expected: self.dim(),
                got: x.len(),
            });
        }
        for (i, &v) in x.iter().enumerate() {
            if !(self.lower[i] <= v && v <= self.upper[i]) {
                return Err(Error::OutOfBox {
                    index: i,
                    value: v,
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        Ok(())
    }

    pub fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    /// Midpoint of each finite interval; a finite endpoint (or zero) otherwise.
    pub fn center(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(&lo, &hi)| match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => 0.5 * (lo + hi),
                    (true, false) => lo.max(0.0),
                    (false, true) => hi.min(0.0),
                    (false, false) => 0.0,
                }),
        )
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(&ui, (&lo, &hi))| lo + ui * (hi - lo)),
        )
    }
}

/// A candidate model described by moment conditions `E[f(v, θ)] = 0`.
///
/// `moment` must be total on the parameter box for every observation.
pub trait MomentModel: Send + Sync {
    fn name(&self) -> &str;

    /// Parameter count `p`.
    fn num_params(&self) -> usize;

    /// Moment count `q`.
    fn num_moments(&self) -> usize;

    /// `|c|`, the count entering GMM-AIC/BIC penalties.
    fn instrument_count(&self) -> usize {
        self.num_moments()
    }

    /// Metadata only: set when `q < p` on purpose.
    fn under_identified(&self) -> bool {
        false
    }

    fn param_box(&self) -> &ParamBox;

    /// First multistart point; the box center when `None`.
    fn initial_guess(&self) -> Option<DVector<f64>> {
        None
    }

    /// Data-driven first start, tried before [`MomentModel::initial_guess`].
    /// Models with partly linear structure can concentrate parameters out
    /// here; the optimizer still polishes the result.
    fn warm_start(&self, _data: &Dataset, _weighting: &DMatrix<f64>) -> Option<DVector<f64>> {
        None
    }

    /// Analytic `∂ḡ/∂θ'` (`q × p`) on `data`, when available. The polish
    /// step falls back to finite differences otherwise.
    fn mean_jacobian(&self, _data: &Dataset, _theta: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Writes `f(obs, theta)` into `out` (length `q`).
    fn moment(&self, obs: &[f64], theta: &[f64], out: &mut [f64]);

    /// Instrument rows carried by one observation, when the moments have the
    /// form `residual ⊗ instruments`. Needed for `(Z'Z)^{-1}` weighting.
    fn instrument_rows(&self, _obs: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Number of residual equations sharing the instrument set, so that
    /// `q = residual_blocks * instruments`.
    fn residual_blocks(&self) -> usize {
        1
    }
}

/// `(1/T) Σ_t f(v_t, θ)`.
pub fn mean_moment<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
) -> DVector<f64> {
    let q = model.num_moments();
    let mut acc = vec![0.0; q];
    let mut buf = vec![0.0; q];
    for obs in data.rows() {
        model.moment(obs, theta, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += *b;
        }
    }
    let n = data.len() as f64;
    DVector::from_iterator(q, acc.into_iter().map(|a| a / n))
}

/// Moment vectors of every observation, one row per observation.
pub fn moment_matrix<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
) -> DMatrix<f64> {
    let q = model.num_moments();
    let mut out = DMatrix::zeros(data.len(), q);
    let mut buf = vec![0.0; q];
    for (t, obs) in data.rows().enumerate() {
        model.moment(obs, theta, &mut buf);
        for (j, v) in buf.iter().enumerate() {
            out[(t, j)] = *v;
        }
    }
    out
}

type MomentFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// A moment model built from a closure. Handy for small custom models.
pub struct FnMomentModel {
    name: String,
    num_moments: usize,
    instrument_count: usize,
    bounds: ParamBox,
    initial: Option<DVector<f64>>,
    f: Box<MomentFn>,
}

impl FnMomentModel {
    pub fn new(
        name: impl Into<String>,
        num_moments: usize,
        bounds: ParamBox,
        f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            num_moments,
            instrument_count: num_moments,
            bounds,
            initial: None,
            f: Box::new(f),
        }
    }

    pub fn with_instrument_count(mut self, c: usize) -> Self {
        self.instrument_count = c;
        self
    }

    pub fn with_initial_guess(mut self, theta: DVector<f64>) -> Self {
        self.initial = Some(theta);
        self
    }
}

impl MomentModel for FnMomentModel {
    fn name(&self) -> &str {
        &self.name
    }
    fn num_params(&self) -> usize {
        self.bounds.dim()
    }
    fn num_moments(&self) -> usize {
        self.num_moments
    }
    fn instrument_count(&self) -> usize {
        self.instrument_count
    }
    fn param_box(&self) -> &ParamBox {
        &self.bounds
    }
    fn initial_guess(&self) -> Option<DVector<f64>> {
        self.initial.clone()
    }
    fn moment(&self, obs: &[f64], theta: &[f64], out: &mut [f64]) {
        (self.f)(obs, theta, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_projection_and_center() {
        let b = ParamBox::new(vec![-1.0, 0.0], vec![1.0, f64::INFINITY]).unwrap();
        let mut x = [5.0, -3.0];
        b.project(&mut x);
        assert_eq!(x, [1.0, 0.0]);
        assert_eq!(b.center().as_slice(), &[0.0, 0.0]);
        assert!(!b.is_bounded());
        assert!(ParamBox::new(vec![1.0], vec![0.0]).is_err());
        assert!(matches!(b.check(&[2.0, 1.0]), Err(Error::OutOfBox { index: 0, .. })));
    }

    #[test]
    fn mean_moment_of_location_model() {
        let m = FnMomentModel::new("loc", 1, ParamBox::symmetric(1, 10.0), |v, th, out| {
            out[0] = v[0] - th[0]
        });
        let d = Dataset::from_scalars(&[1.0, 3.0]).unwrap();
        assert_eq!(mean_moment(&m, &d, &[0.0])[0], 2.0);
        assert_eq!(moment_matrix(&m, &d, &[1.0]).column(0).as_slice(), &[0.0, 2.0]);
    }
}
