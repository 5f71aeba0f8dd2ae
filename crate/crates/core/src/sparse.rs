//! Row-major sparse storage and sparse LU helpers.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

/// List-of-rows sparse matrix; each row holds `(column, value)` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRows {
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        SparseRows { ncols, rows: vec![Vec::new(); nrows] }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|e| e.1).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i].iter().filter(|e| e.0 == j).map(|e| e.1).sum()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(j, v)| v * x[j]).sum()
    }
}

/// Accumulates a sparse row through a dense scratch buffer, keeping first-touch order.
pub(crate) struct RowBuilder {
    dense: Vec<f64>,
    mark: Vec<bool>,
    touched: Vec<usize>,
}

impl RowBuilder {
    pub fn new(n: usize) -> Self {
        RowBuilder { dense: vec![0.0; n], mark: vec![false; n], touched: Vec::new() }
    }

    #[inline]
    pub fn add(&mut self, j: usize, v: f64) {
        if !self.mark[j] {
            self.mark[j] = true;
            self.touched.push(j);
        }
        self.dense[j] += v;
    }

    pub fn take(&mut self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self.touched.iter().map(|&j| (j, self.dense[j])).collect();
        for &j in &self.touched {
            self.dense[j] = 0.0;
            self.mark[j] = false;
        }
        self.touched.clear();
        out.sort_by_key(|e| e.0);
        out.retain(|e| e.1 != 0.0);
        out
    }
}

/// Solves `A x = b` for a square sparse `A` given as triplets.
pub fn solve_triplets(n: usize, triplets: &[(usize, usize, f64)], b: &[f64]) -> Result<Vec<f64>> {
    let t: Vec<Triplet<usize, usize, f64>> = triplets.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &t).map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
    let lu = a.sp_lu().map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
    let rhs = faer::col::Col::<f64>::from_fn(n, |i| b[i]);
    let x = lu.solve(&rhs);
    let out: Vec<f64> = (0..n).map(|i| x[i]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolve("non-finite solution (singular system)".into()));
    }
    Ok(out)
}

/// Stationary distribution `pi P = pi`, `sum pi = 1` of a stochastic matrix with one recurrent class.
pub fn stationary_distribution(p: &SparseRows) -> Result<Vec<f64>> {
    let n = p.nrows();
    // (I - P)^T pi = 0 with the last equation replaced by normalisation
    let mut trip = Vec::with_capacity(p.nnz() + 2 * n);
    for i in 0..n {
        if i != n - 1 {
            trip.push((i, i, 1.0));
        }
        for &(j, v) in p.row(i) {
            if j != n - 1 {
                trip.push((j, i, -v));
            }
        }
        trip.push((n - 1, i, 1.0));
    }
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    let mut pi = solve_triplets(n, &trip, &b)?;
    for v in &mut pi {
        if *v < 0.0 && *v > -1e-12 {
            *v = 0.0;
        }
    }
    Ok(pi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_builder_merges_duplicates() {
        let mut b = RowBuilder::new(5);
        b.add(3, 0.25);
        b.add(1, 0.5);
        b.add(3, 0.25);
        assert_eq!(b.take(), vec![(1, 0.5), (3, 0.5)]);
        assert!(b.take().is_empty());
    }

    #[test]
    fn solves_small_system() {
        // [[2, 1], [1, 3]] x = [3, 5] -> x = [0.8, 1.4]
        let x = solve_triplets(2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)], &[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn two_state_stationary() {
        let mut p = SparseRows::new(2, 2);
        p.rows[0] = vec![(0, 0.9), (1, 0.1)];
        p.rows[1] = vec![(0, 0.3), (1, 0.7)];
        let pi = stationary_distribution(&p).unwrap();
        assert!((pi[0] - 0.75).abs() < 1e-12 && (pi[1] - 0.25).abs() < 1e-12);
    }
}
