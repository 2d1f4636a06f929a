use crate::autodiff::{AutodiffError, Tensor};

use super::GraphError;

/// Square sparse matrix in compressed sparse row form.
///
/// Built from coordinate triplets; duplicate coordinates and non-finite
/// values are rejected, and entries within a row are sorted by column.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(
        n: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self, GraphError> {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(GraphError::IndexOutOfRange {
                    what: "sparse entry",
                    index: r.max(c),
                    n,
                });
            }
            if prev == Some((r, c)) {
                return Err(GraphError::Invalid(format!(
                    "duplicate sparse entry ({r}, {c})"
                )));
            }
            if !v.is_finite() {
                return Err(GraphError::Invalid(format!(
                    "non-finite sparse entry ({r}, {c})"
                )));
            }
            prev = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored entries of row `i` as `(col, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    /// Stored value at `(row, col)`, zero when absent.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let span = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.col_idx[span.clone()].binary_search(&col) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.entries()
            .all(|(i, j, v)| (self.get(j, i) - v).abs() <= tol)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.n, self.n);
        for (i, j, v) in self.entries() {
            t.set(i, j, v);
        }
        t
    }

    /// `self * dense`.
    pub fn mul_dense(&self, dense: &Tensor) -> Result<Tensor, AutodiffError> {
        if dense.rows() != self.n {
            return Err(AutodiffError::ShapeMismatch {
                op: "spmm",
                left: (self.n, self.n),
                right: dense.shape(),
            });
        }
        let mut out = Tensor::zeros(self.n, dense.cols());
        for i in 0..self.n {
            let out_row = out.row_mut(i);
            for (j, v) in self.row(i) {
                for (o, &x) in out_row.iter_mut().zip(dense.row(j)) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * dense`.
    pub fn transpose_mul_dense(&self, dense: &Tensor) -> Result<Tensor, AutodiffError> {
        if dense.rows() != self.n {
            return Err(AutodiffError::ShapeMismatch {
                op: "spmm_t",
                left: (self.n, self.n),
                right: dense.shape(),
            });
        }
        let mut out = Tensor::zeros(self.n, dense.cols());
        for i in 0..self.n {
            let src = dense.row(i).to_vec();
            for (j, v) in self.row(i) {
                for (o, &x) in out.row_mut(j).iter_mut().zip(&src) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `self * x` for a plain vector.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }
}
