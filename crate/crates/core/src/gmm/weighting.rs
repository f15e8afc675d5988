use nalgebra::{DMatrix, SymmetricEigen};

use super::dataset::Dataset;
use super::model::MomentModel;
use crate::error::{Error, Result};

/// Relative ridge added to a singular instrument Gram matrix.
pub const GRAM_RIDGE: f64 = 1e-10;

/// How the GMM weighting matrix is chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightingSpec {
    Identity,
    /// `I_b ⊗ (Z'Z / N)^{-1}` with `N` the number of instrument rows and `b`
    /// the model's residual blocks. The `1/N` normalization keeps scores on
    /// the same scale for training and validation subsets.
    InverseInstrumentGram,
    Fixed(DMatrix<f64>),
}

/// A materialized weighting matrix.
#[derive(Clone, Debug)]
pub struct Weighting {
    pub matrix: DMatrix<f64>,
    /// Set when the instrument Gram matrix needed a ridge to be inverted.
    pub ridge_applied: bool,
}

impl Weighting {
    pub fn identity(q: usize) -> Self {
        Self {
            matrix: DMatrix::identity(q, q),
            ridge_applied: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Symmetric square root `S` with `S'S = W`, negative eigenvalues clipped.
    pub fn sqrt(&self) -> DMatrix<f64> {
        let eig = SymmetricEigen::new(self.matrix.clone());
        let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
    }
}

/// Materializes `spec` for `model` on `data`.
pub fn resolve_weighting<M: MomentModel + ?Sized>(
    spec: &WeightingSpec,
    model: &M,
    data: &Dataset,
) -> Result<Weighting> {
    let q = model.num_moments();
    match spec {
        WeightingSpec::Identity => Ok(Weighting::identity(q)),
        WeightingSpec::Fixed(w) => {
            if w.nrows() != q || w.ncols() != q {
                return Err(Error::Dimension {
                    context: "fixed weighting matrix",
                    expected: q,
                    got: w.nrows().max(w.ncols()),
                });
            }
            if !is_symmetric_psd(w) {
                return Err(Error::config("fixed weighting matrix must be symmetric PSD"));
            }
            Ok(Weighting {
                matrix: w.clone(),
                ridge_applied: false,
            })
        }
        WeightingSpec::InverseInstrumentGram => {
            let (gram, rows) = instrument_gram(model, data)?;
            let blocks = model.residual_blocks();
            let c = gram.nrows();
            if blocks * c != q {
                return Err(Error::Dimension {
                    context: "instrument weighting (blocks x instruments)",
                    expected: q,
                    got: blocks * c,
                });
            }
            let (inv, ridge_applied) = invert_gram(gram / rows as f64)?;
            if ridge_applied {
                log::warn!("instrument Gram matrix singular for {}; ridge applied", model.name());
            }
            let mut matrix = DMatrix::zeros(q, q);
            for b in 0..blocks {
                matrix.view_mut((b * c, b * c), (c, c)).copy_from(&inv);
            }
            Ok(Weighting {
                matrix,
                ridge_applied,
            })
        }
    }
}

fn instrument_gram<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
) -> Result<(DMatrix<f64>, usize)> {
    let mut gram: Option<DMatrix<f64>> = None;
    let mut rows = 0;
    for obs in data.rows() {
        let z = model.instrument_rows(obs).ok_or_else(|| {
            Error::config(format!(
                "model {} exposes no instruments; (Z'Z)^-1 weighting unavailable",
                model.name()
            ))
        })?;
        rows += z.nrows();
        let zz = z.tr_mul(&z);
        match gram.as_mut() {
            Some(g) => {
                if g.shape() != zz.shape() {
                    return Err(Error::Dimension {
                        context: "instrument rows",
                        expected: g.ncols(),
                        got: zz.ncols(),
                    });
                }
                *g += zz;
            }
            None => gram = Some(zz),
        }
    }
    Ok((gram.expect("dataset is nonempty"), rows))
}

/// Inverts a Gram matrix, falling back to a trace-scaled ridge when singular.
pub fn invert_gram(gram: DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let c = gram.nrows();
    let gram = symmetrize(&gram);
    let eig = SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if max > 0.0 && min > max * 1e-13 {
        if let Some(ch) = gram.clone().cholesky() {
            return Ok((symmetrize(&ch.inverse()), false));
        }
    }
    let ridge = GRAM_RIDGE * (gram.trace() / c as f64).max(f64::MIN_POSITIVE);
    let ridged = gram + DMatrix::identity(c, c) * ridge;
    let ch = ridged.cholesky().ok_or(Error::Singular("instrument Gram matrix"))?;
    Ok((symmetrize(&ch.inverse()), true))
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn is_symmetric_psd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return false;
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    eig.eigenvalues.iter().all(|&l| l >= -1e-10 * scale)
}
