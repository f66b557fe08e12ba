//! Compressed sparse row matrices and the deterministic kernels built on
//! them.
//!
//! Every reduction in this file runs in a fixed order (ascending column
//! index within a row, ascending row index across rows), so repeated runs
//! of the same build on the same input produce bitwise-identical results
//! regardless of how many worker threads the caller uses.

use crate::error::{Error, Result};
use std::io::Write;

/// Sparse matrix in compressed sparse row format.
///
/// Invariants: `row_ptr` is non-decreasing with `n_rows + 1` entries;
/// column indices are sorted and unique within each row. Matrices assembled
/// by this crate as symmetric are symmetric entrywise by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from (row, col, value) triplets, summing duplicates.
    ///
    /// Duplicate entries are accumulated in their original insertion order
    /// (the sort is stable), which keeps assembly deterministic.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> CsrMatrix {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&t| (triplets[t].0, triplets[t].1));
        let mut row_counts = vec![0usize; n_rows + 1];
        let mut col_idx: Vec<usize> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for &t in &order {
            let (r, c, v) = triplets[t];
            assert!(r < n_rows && c < n_cols, "triplet index out of range");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_counts[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            row_counts[r + 1] += row_counts[r];
        }
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr: row_counts,
            col_idx,
            values,
        }
    }

    /// Identity matrix of size n.
    pub fn identity(n: usize) -> CsrMatrix {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// The (sorted) column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    /// Matrix-vector product written into `out`.
    ///
    /// Each row is reduced in ascending column order, sequentially, so the
    /// result is exactly reproducible.
    pub fn spmv_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols, "spmv dimension mismatch");
        assert_eq!(out.len(), self.n_rows, "spmv dimension mismatch");
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            out[r] = acc;
        }
    }

    /// Matrix-vector product returning a fresh vector.
    pub fn spmv(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows];
        self.spmv_into(x, &mut out);
        out
    }

    /// Transpose (counting sort by column; deterministic).
    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut cursor = counts;
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                let p = cursor[*c];
                col_idx[p] = r;
                values[p] = *v;
                cursor[*c] += 1;
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sparse product `self * other`.
    ///
    /// Rows are produced in order, each accumulated with a dense scratch
    /// row in a deterministic traversal, then emitted with sorted columns.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.n_cols, other.n_rows, "matmul dimension mismatch");
        let m = other.n_cols;
        let mut acc = vec![0.0f64; m];
        let mut mark = vec![false; m];
        let mut touched: Vec<usize> = Vec::new();
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        row_ptr.push(0usize);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (j, a) in cols.iter().zip(vals) {
                let (bc, bv) = other.row(*j);
                for (c, b) in bc.iter().zip(bv) {
                    if !mark[*c] {
                        mark[*c] = true;
                        touched.push(*c);
                    }
                    acc[*c] += a * b;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                col_idx.push(c);
                values.push(acc[c]);
                acc[c] = 0.0;
                mark[c] = false;
            }
            touched.clear();
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: m,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Linear combination `self + beta * other` with a union sparsity
    /// pattern (exact merge, no tolerance-based dropping).
    pub fn add_scaled(&self, beta: f64, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.n_rows, other.n_rows);
        assert_eq!(self.n_cols, other.n_cols);
        let mut row_ptr = Vec::with_capacity(self.n_rows + 1);
        row_ptr.push(0usize);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.n_rows {
            let (ca, va) = self.row(r);
            let (cb, vb) = other.row(r);
            let (mut i, mut j) = (0usize, 0usize);
            while i < ca.len() || j < cb.len() {
                if j >= cb.len() || (i < ca.len() && ca[i] < cb[j]) {
                    col_idx.push(ca[i]);
                    values.push(va[i]);
                    i += 1;
                } else if i >= ca.len() || cb[j] < ca[i] {
                    col_idx.push(cb[j]);
                    values.push(beta * vb[j]);
                    j += 1;
                } else {
                    col_idx.push(ca[i]);
                    values.push(va[i] + beta * vb[j]);
                    i += 1;
                    j += 1;
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Principal submatrix on a sorted, duplicate-free index set.
    pub fn extract_principal(&self, idx: &[usize]) -> CsrMatrix {
        debug_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        let mut row_ptr = Vec::with_capacity(idx.len() + 1);
        row_ptr.push(0usize);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &r in idx {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                if let Ok(local) = idx.binary_search(c) {
                    col_idx.push(local);
                    values.push(*v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n_rows: idx.len(),
            n_cols: idx.len(),
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Main diagonal as a dense vector (zeros where no entry is stored).
    pub fn diagonal(&self) -> Vec<f64> {
        let n = self.n_rows.min(self.n_cols);
        let mut d = vec![0.0; n];
        for (r, dr) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            if let Ok(p) = cols.binary_search(&r) {
                *dr = vals[p];
            }
        }
        d
    }

    /// Largest absolute entrywise deviation from symmetry.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst = 0.0f64;
        for r in 0..self.n_rows {
            let (ca, va) = self.row(r);
            let (cb, vb) = t.row(r);
            let (mut i, mut j) = (0usize, 0usize);
            while i < ca.len() || j < cb.len() {
                if j >= cb.len() || (i < ca.len() && ca[i] < cb[j]) {
                    worst = worst.max(va[i].abs());
                    i += 1;
                } else if i >= ca.len() || cb[j] < ca[i] {
                    worst = worst.max(vb[j].abs());
                    j += 1;
                } else {
                    worst = worst.max((va[i] - vb[j]).abs());
                    i += 1;
                    j += 1;
                }
            }
        }
        worst
    }

    /// Frobenius norm of the stored entries.
    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Writes the matrix in Matrix Market coordinate format (1-based,
    /// general symmetry class, full round-trip precision).
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {:.17e}", r + 1, c + 1, v)?;
            }
        }
        Ok(())
    }
}

/// Exact CSR matrix-vector product with a deterministic (ascending column)
/// summation order.
pub fn spmv(a: &CsrMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != a.n_cols {
        return Err(Error::Dimension {
            expected: a.n_cols,
            got: x.len(),
        });
    }
    Ok(a.spmv(x))
}
