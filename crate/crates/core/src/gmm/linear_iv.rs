use nalgebra::{DMatrix, DVector};

use super::dataset::Dataset;
use super::model::{MomentModel, ParamBox};
use crate::error::{Error, Result};

/// Linear instrumental-variables moments `f = (y − x'θ) z`.
///
/// Observations are laid out as `[y, x_1..x_p, z_1..z_c]`; the regressor and
/// instrument columns can also be picked out of a wider observation with
/// [`LinearIvModel::with_columns`].
#[derive(Clone, Debug)]
pub struct LinearIvModel {
    name: String,
    y_col: usize,
    x_cols: Vec<usize>,
    z_cols: Vec<usize>,
    bounds: ParamBox,
}

/// Default half-width of the parameter box.
pub const LINEAR_IV_BOUND: f64 = 1e3;

impl LinearIvModel {
    /// Contiguous layout `[y, x (p), z (c)]`.
    pub fn new(p: usize, c: usize) -> Self {
        Self::with_columns("linear-iv", 0, (1..=p).collect(), (p + 1..=p + c).collect())
    }

    pub fn with_columns(
        name: impl Into<String>,
        y_col: usize,
        x_cols: Vec<usize>,
        z_cols: Vec<usize>,
    ) -> Self {
        let bounds = ParamBox::symmetric(x_cols.len(), LINEAR_IV_BOUND);
        Self {
            name: name.into(),
            y_col,
            x_cols,
            z_cols,
            bounds,
        }
    }

    pub fn with_bounds(mut self, bounds: ParamBox) -> Self {
        self.bounds = bounds;
        self
    }

    /// Packs `(y, X, Z)` into the contiguous layout expected by [`LinearIvModel::new`].
    pub fn pack(y: &DVector<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<Dataset> {
        let t = y.len();
        if x.nrows() != t || z.nrows() != t {
            return Err(Error::Dimension {
                context: "linear IV rows",
                expected: t,
                got: if x.nrows() != t { x.nrows() } else { z.nrows() },
            });
        }
        let dim = 1 + x.ncols() + z.ncols();
        let mut values = Vec::with_capacity(t * dim);
        for i in 0..t {
            values.push(y[i]);
            values.extend(x.row(i).iter());
            values.extend(z.row(i).iter());
        }
        Dataset::new(dim, values)
    }

    fn residual(&self, obs: &[f64], theta: &[f64]) -> f64 {
        self.x_cols
            .iter()
            .zip(theta)
            .fold(obs[self.y_col], |acc, (&c, b)| acc - obs[c] * b)
    }

    /// Cross products `(Z'X, Z'y)`.
    fn cross_products(&self, data: &Dataset) -> (DMatrix<f64>, DVector<f64>) {
        let (p, c) = (self.x_cols.len(), self.z_cols.len());
        let mut zx = DMatrix::zeros(c, p);
        let mut zy = DVector::zeros(c);
        for obs in data.rows() {
            for (i, &zc) in self.z_cols.iter().enumerate() {
                let z = obs[zc];
                zy[i] += z * obs[self.y_col];
                for (j, &xc) in self.x_cols.iter().enumerate() {
                    zx[(i, j)] += z * obs[xc];
                }
            }
        }
        (zx, zy)
    }

    /// Closed-form minimizer `(X'Z W Z'X)^{-1} X'Z W Z'y` for a given weight.
    pub fn closed_form(&self, data: &Dataset, w: &DMatrix<f64>) -> Result<DVector<f64>> {
        let (zx, zy) = self.cross_products(data);
        let a = zx.transpose() * w * &zx;
        let b = zx.transpose() * w * zy;
        a.cholesky()
            .map(|ch| ch.solve(&b))
            .ok_or(Error::Singular("X'Z W Z'X"))
    }
}

impl MomentModel for LinearIvModel {
    fn name(&self) -> &str {
        &self.name
    }
    fn num_params(&self) -> usize {
        self.x_cols.len()
    }
    fn num_moments(&self) -> usize {
        self.z_cols.len()
    }
    fn param_box(&self) -> &ParamBox {
        &self.bounds
    }
    fn warm_start(&self, data: &Dataset, weighting: &DMatrix<f64>) -> Option<DVector<f64>> {
        self.closed_form(data, weighting).ok()
    }
    fn mean_jacobian(&self, data: &Dataset, _theta: &[f64]) -> Option<DMatrix<f64>> {
        let (zx, _) = self.cross_products(data);
        Some(zx / -(data.len() as f64))
    }
    fn moment(&self, obs: &[f64], theta: &[f64], out: &mut [f64]) {
        let e = self.residual(obs, theta);
        for (o, &zc) in out.iter_mut().zip(&self.z_cols) {
            *o = e * obs[zc];
        }
    }
    fn instrument_rows(&self, obs: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_iterator(
            1,
            self.z_cols.len(),
            self.z_cols.iter().map(|&c| obs[c]),
        ))
    }
}
