use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// An ordered sample of `T` observations, each a real vector of dimension `d`.
///
/// Order matters: cross-validation folds are contiguous index ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    values: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major values.
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("observation dimension must be at least 1"));
        }
        if values.is_empty() {
            return Err(Error::config("dataset must contain at least one observation"));
        }
        if values.len() % dim != 0 {
            return Err(Error::Dimension {
                context: "dataset values",
                expected: dim * (values.len() / dim + 1),
                got: values.len(),
            });
        }
        Ok(Self { dim, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(dim * rows.len());
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Dimension {
                    context: "dataset row",
                    expected: dim,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(dim, values)
    }

    /// Scalar observations.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(1, values.to_vec())
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    /// Copies the observations at `indices` (in the given order).
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &t in indices {
            if t >= self.len() {
                return Err(Error::config(format!(
                    "row index {t} out of range for {} observations",
                    self.len()
                )));
            }
            values.extend_from_slice(self.row(t));
        }
        Self::new(self.dim, values)
    }

    /// Returns a copy with rows permuted by a seeded shuffle. Only meaningful
    /// for exchangeable data; fold assignment otherwise follows given order.
    pub fn shuffled(&self, seed: u64) -> Dataset {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut stream_rng(seed, 0));
        self.select(&order).expect("permutation indices are in range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_and_empty_input() {
        assert!(Dataset::new(0, vec![1.0]).is_err());
        assert!(Dataset::new(2, vec![]).is_err());
        assert!(Dataset::new(2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(Dataset::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn select_and_shuffle_preserve_rows() {
        let d = Dataset::from_rows(&[[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]]).unwrap();
        assert_eq!(d.len(), 3);
        let s = d.select(&[2, 0]).unwrap();
        assert_eq!(s.row(0), &[3.0, 30.0]);
        assert_eq!(s.row(1), &[1.0, 10.0]);

        let sh = d.shuffled(11);
        let mut firsts: Vec<f64> = sh.rows().map(|r| r[0]).collect();
        firsts.sort_by(f64::total_cmp);
        assert_eq!(firsts, vec![1.0, 2.0, 3.0]);
        assert_eq!(sh, d.shuffled(11));
    }
}
