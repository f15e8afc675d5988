use std::ops::Range;

use crate::error::{Error, Result};

/// Contiguous folds and the training subsets of a `(k, r)`-fold scheme.
///
/// Fold `j` (zero-based) covers `⌊T j / r⌋ .. ⌊T (j+1) / r⌋`. Training subsets
/// are every choice of `r − k` folds, in lexicographic order; the held-out
/// folds of each subset form its validation set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    t: usize,
    r: usize,
    k: usize,
    folds: Vec<Range<usize>>,
    subsets: Vec<Vec<usize>>,
}

/// Builds the split plan for `T` observations, `r` folds, `k` held out.
pub fn make_splits(t: usize, r: usize, k: usize) -> Result<SplitPlan> {
    if r < 2 {
        return Err(Error::config(format!("r must be at least 2, got {r}")));
    }
    if r > t {
        return Err(Error::config(format!("r = {r} exceeds T = {t}")));
    }
    if k == 0 || k >= r {
        return Err(Error::config(format!("k must satisfy 1 <= k < r, got k = {k}, r = {r}")));
    }
    let folds = (0..r).map(|j| t * j / r..t * (j + 1) / r).collect();
    Ok(SplitPlan {
        t,
        r,
        k,
        folds,
        subsets: combinations(r, r - k),
    })
}

/// All `m`-element subsets of `0..n` in lexicographic order.
pub(crate) fn combinations(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..m).collect();
    if m > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        // Rightmost position that can still advance.
        let Some(i) = (0..m).rev().find(|&i| cur[i] < n - m + i) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..m {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

impl SplitPlan {
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn folds(&self) -> &[Range<usize>] {
        &self.folds
    }

    /// Training subsets as lists of zero-based fold indices.
    pub fn training_subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    /// `C(r, k)`.
    pub fn num_splits(&self) -> usize {
        self.subsets.len()
    }

    /// Held-out fold indices of split `s`.
    pub fn held_out(&self, s: usize) -> Vec<usize> {
        (0..self.r).filter(|j| !self.subsets[s].contains(j)).collect()
    }

    /// Observation indices in the training set of split `s`.
    pub fn train_indices(&self, s: usize) -> Vec<usize> {
        self.subsets[s]
            .iter()
            .flat_map(|&j| self.folds[j].clone())
            .collect()
    }

    /// Observation indices in the validation set of split `s`.
    pub fn valid_indices(&self, s: usize) -> Vec<usize> {
        self.held_out(s)
            .into_iter()
            .flat_map(|j| self.folds[j].clone())
            .collect()
    }

    /// Mean validation-set size across splits; equal to the common size when
    /// `T` divides evenly.
    pub fn mean_valid_size(&self) -> f64 {
        let total: usize = (0..self.num_splits()).map(|s| self.valid_indices(s).len()).sum();
        total as f64 / self.num_splits() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_division() {
        let p = make_splits(6, 3, 1).unwrap();
        assert_eq!(p.folds(), &[0..2, 2..4, 4..6]);
    }

    #[test]
    fn floor_formula_puts_remainder_last() {
        let p = make_splits(7, 3, 1).unwrap();
        assert_eq!(p.folds(), &[0..2, 2..4, 4..7]);
        let p = make_splits(5, 2, 1).unwrap();
        assert_eq!(p.folds(), &[0..2, 2..5]);
        assert_eq!(p.training_subsets(), &[vec![0], vec![1]]);
        assert_eq!(p.valid_indices(0), vec![2, 3, 4]);
    }

    #[test]
    fn subsets_are_lexicographic() {
        let p = make_splits(10, 4, 2).unwrap();
        assert_eq!(
            p.training_subsets(),
            &[vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        assert_eq!(p.held_out(1), vec![1, 3]);
        assert_eq!(combinations(5, 3).len(), 10);
    }

    #[test]
    fn rejects_bad_configuration() {
        assert!(make_splits(3, 4, 1).is_err());
        assert!(make_splits(10, 3, 3).is_err());
        assert!(make_splits(10, 3, 0).is_err());
        assert!(make_splits(10, 1, 0).is_err());
    }
}
