//! Dense matrices and the small dense eigensolvers used for coarse
//! problems and Rayleigh-Ritz steps.
//!
//! The symmetric eigensolver is a cyclic Jacobi iteration. It is slower
//! than a Householder tridiagonalization for large matrices, but it is
//! simple, unconditionally stable, and fully deterministic, which matters
//! because eigenvector signs and tie orderings feed golden-file tests.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub values: Vec<f64>,
}

impl DenseMatrix {
    /// Zero matrix of the given shape.
    pub fn zeros(n_rows: usize, n_cols: usize) -> DenseMatrix {
        DenseMatrix {
            n_rows,
            n_cols,
            values: vec![0.0; n_rows * n_cols],
        }
    }

    /// Identity matrix of size n.
    pub fn identity(n: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    /// Densifies a sparse matrix.
    pub fn from_csr(a: &super::csr::CsrMatrix) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(a.n_rows, a.n_cols);
        for r in 0..a.n_rows {
            let (cols, vals) = a.row(r);
            for (c, v) in cols.iter().zip(vals) {
                m.values[r * a.n_cols + c] = *v;
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n_cols + j] = v;
    }

    /// Copy of column j.
    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    /// Overwrites column j.
    pub fn set_col(&mut self, j: usize, x: &[f64]) {
        assert_eq!(x.len(), self.n_rows);
        for (i, v) in x.iter().enumerate() {
            self.set(i, j, *v);
        }
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols, "matvec dimension mismatch");
        let mut out = vec![0.0; self.n_rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.values[i * self.n_cols..(i + 1) * self.n_cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        out
    }

    /// Dense product `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n_cols, other.n_rows, "matmul dimension mismatch");
        let mut out = DenseMatrix::zeros(self.n_rows, other.n_cols);
        for i in 0..self.n_rows {
            for k in 0..self.n_cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.n_cols {
                    out.values[i * other.n_cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    /// Transposed copy.
    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_cols, self.n_rows);
        for i in 0..self.n_rows {
            for j in 0..self.n_cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// Sum of diagonal entries.
    pub fn trace(&self) -> f64 {
        let n = self.n_rows.min(self.n_cols);
        (0..n).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute entrywise deviation from symmetry.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.n_rows, self.n_cols);
        let mut worst = 0.0f64;
        for i in 0..self.n_rows {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Cholesky factorization `A = L * L^T` of a symmetric positive definite
/// matrix. Returns the lower factor; fails with `NotSpd` on a non-positive
/// pivot.
pub fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    if a.n_rows != a.n_cols {
        return Err(Error::Dimension {
            expected: a.n_rows,
            got: a.n_cols,
        });
    }
    let n = a.n_rows;
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::NotSpd(format!(
                        "Cholesky pivot {i} is {sum:.3e}; matrix is not positive definite"
                    )));
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Solves `L y = b` with a lower-triangular factor.
pub fn solve_lower(l: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = l.n_rows;
    assert_eq!(b.len(), n);
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l.get(i, k) * y[k];
        }
        y[i] /= l.get(i, i);
    }
    y
}

/// Solves `L^T x = b` with a lower-triangular factor.
pub fn solve_lower_transpose(l: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = l.n_rows;
    assert_eq!(b.len(), n);
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        for k in i + 1..n {
            x[i] -= l.get(k, i) * x[k];
        }
        x[i] /= l.get(i, i);
    }
    x
}

/// Solves `A x = b` given the Cholesky factor `L` of `A`.
pub fn solve_with_cholesky(l: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    solve_lower_transpose(l, &solve_lower(l, b))
}

/// Flips each eigenvector column so its largest-magnitude entry is
/// positive. Keeps results reproducible across runs and platforms.
fn fix_column_signs(v: &mut DenseMatrix) {
    for j in 0..v.n_cols {
        let mut best = 0usize;
        let mut best_abs = 0.0f64;
        for i in 0..v.n_rows {
            let a = v.get(i, j).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if v.get(best, j) < 0.0 {
            for i in 0..v.n_rows {
                let x = v.get(i, j);
                v.set(i, j, -x);
            }
        }
    }
}

/// Full symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvector
/// columns (orthonormal). Sweeps run until the off-diagonal Frobenius norm
/// drops below `1e-14` times the input Frobenius norm. Inputs whose
/// asymmetry exceeds `1e-12` times the Frobenius norm are rejected with
/// `ContractViolation`; smaller asymmetry is symmetrized away.
pub fn dense_sym_eig(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    if a.n_rows != a.n_cols {
        return Err(Error::Dimension {
            expected: a.n_rows,
            got: a.n_cols,
        });
    }
    let n = a.n_rows;
    let norm = a.frobenius();
    if a.asymmetry() > 1e-12 * norm.max(1.0) {
        return Err(Error::ContractViolation(format!(
            "symmetric eigensolver given a matrix with asymmetry {:.3e} (norm {:.3e})",
            a.asymmetry(),
            norm
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), DenseMatrix::zeros(0, 0)));
    }
    let mut m = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = 0.5 * (a.get(i, j) + a.get(j, i));
        }
    }
    let mut v = DenseMatrix::identity(n);
    let tol = 1e-14 * norm;
    // Rotations on entries already below this threshold cannot push the
    // off-diagonal norm back above `tol`, so they are skipped.
    let skip = if n > 0 { tol / n as f64 } else { 0.0 };
    let mut converged = norm == 0.0;
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m[i * n + j] * m[i * n + j];
                }
            }
        }
        if off.sqrt() <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= skip {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..n {
                    if i == p || i == q {
                        continue;
                    }
                    let aip = m[i * n + p];
                    let aiq = m[i * n + q];
                    let np = c * aip - s * aiq;
                    let nq = s * aip + c * aiq;
                    m[i * n + p] = np;
                    m[p * n + i] = np;
                    m[i * n + q] = nq;
                    m[q * n + i] = nq;
                }
                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }
    if !converged {
        return Err(Error::ContractViolation(
            "Jacobi eigensolver failed to converge in 100 sweeps".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].partial_cmp(&m[j * n + j]).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut eigvecs = DenseMatrix::zeros(n, n);
    for (jnew, &jold) in order.iter().enumerate() {
        for i in 0..n {
            eigvecs.set(i, jnew, v.get(i, jold));
        }
    }
    fix_column_signs(&mut eigvecs);
    Ok((eigvals, eigvecs))
}

/// Generalized symmetric eigendecomposition `A v = lambda B v` with `B`
/// symmetric positive definite.
///
/// Reduces to a standard problem through the Cholesky factor of `B`:
/// with `B = L L^T`, the matrix `C = L^{-1} A L^{-T}` is symmetric and has
/// the same eigenvalues; eigenvectors map back as `v = L^{-T} y`. Returned
/// eigenvectors are B-orthonormal.
pub fn dense_generalized_eig(
    a: &DenseMatrix,
    b: &DenseMatrix,
) -> Result<(Vec<f64>, DenseMatrix)> {
    if a.n_rows != a.n_cols || b.n_rows != b.n_cols {
        return Err(Error::Dimension {
            expected: a.n_rows,
            got: a.n_cols.max(b.n_cols),
        });
    }
    if a.n_rows != b.n_rows {
        return Err(Error::Dimension {
            expected: a.n_rows,
            got: b.n_rows,
        });
    }
    let n = a.n_rows;
    let l = cholesky(b)?;
    // Y = L^{-1} A, column by column.
    let mut y = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let col = solve_lower(&l, &a.col(j));
        y.set_col(j, &col);
    }
    // C = Y L^{-T}; compute C^T = L^{-1} Y^T and transpose back.
    let yt = y.transpose();
    let mut ct = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let col = solve_lower(&l, &yt.col(j));
        ct.set_col(j, &col);
    }
    let mut c = ct.transpose();
    // Symmetrize away the factorization round-off before the Jacobi sweep.
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (c.get(i, j) + c.get(j, i));
            c.set(i, j, avg);
            c.set(j, i, avg);
        }
    }
    let (eigvals, z) = dense_sym_eig(&c)?;
    let mut eigvecs = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let col = solve_lower_transpose(&l, &z.col(j));
        eigvecs.set_col(j, &col);
    }
    fix_column_signs(&mut eigvecs);
    Ok((eigvals, eigvecs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                a.set(i, j, v);
                a.set(j, i, v);
            }
        }
        a
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let g = random_symmetric(n, rng);
        let mut a = g.matmul(&g.transpose());
        for i in 0..n {
            a.set(i, i, a.get(i, i) + n as f64);
        }
        a
    }

    #[test]
    fn diagonal_matrix_eigenvalues_pass_through() {
        let mut a = DenseMatrix::zeros(3, 3);
        a.set(0, 0, 3.0);
        a.set(1, 1, 1.0);
        a.set(2, 2, 2.0);
        let (w, v) = dense_sym_eig(&a).unwrap();
        assert_eq!(w, vec![1.0, 2.0, 3.0]);
        // eigenvector of eigenvalue 1.0 is e_1, of 2.0 is e_2, of 3.0 is e_0
        assert_eq!(v.col(0), vec![0.0, 1.0, 0.0]);
        assert_eq!(v.col(1), vec![0.0, 0.0, 1.0]);
        assert_eq!(v.col(2), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn two_by_two_has_known_pair() {
        let mut a = DenseMatrix::zeros(2, 2);
        a.set(0, 0, 2.0);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 1, 2.0);
        let (w, v) = dense_sym_eig(&a).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] - 3.0).abs() < 1e-14);
        let r = 0.5f64.sqrt();
        assert!((v.get(0, 0) - r).abs() < 1e-14 && (v.get(1, 0) + r).abs() < 1e-14);
        assert!((v.get(0, 1) - r).abs() < 1e-14 && (v.get(1, 1) - r).abs() < 1e-14);
    }

    #[test]
    fn tridiagonal_laplacian_matches_closed_form() {
        let n = 10usize;
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            a.set(i, i, 2.0);
            if i + 1 < n {
                a.set(i, i + 1, -1.0);
                a.set(i + 1, i, -1.0);
            }
        }
        let (w, _) = dense_sym_eig(&a).unwrap();
        for (k, wk) in w.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / 11.0).cos();
            assert!(
                (wk - exact).abs() < 1e-13,
                "eigenvalue {k}: {wk} vs {exact}"
            );
        }
    }

    #[test]
    fn random_symmetric_decomposition_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for rep in 0..20 {
            let n = 5 + (rep % 4) * 8;
            let a = random_symmetric(n, &mut rng);
            let (w, v) = dense_sym_eig(&a).unwrap();
            assert!(w.windows(2).all(|p| p[0] <= p[1]), "not ascending");
            // A V = V diag(w)
            let mut worst = 0.0f64;
            for j in 0..n {
                let av = a.matvec(&v.col(j));
                for i in 0..n {
                    worst = worst.max((av[i] - w[j] * v.get(i, j)).abs());
                }
            }
            assert!(worst <= 1e-13 * a.frobenius().max(1.0), "residual {worst}");
            // V^T V = I
            let vtv = v.transpose().matmul(&v);
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((vtv.get(i, j) - want).abs() <= 1e-13);
                }
            }
        }
    }

    #[test]
    fn generalized_pencil_satisfies_residual_and_b_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..10 {
            let n = 14;
            let a = random_symmetric(n, &mut rng);
            let b = random_spd(n, &mut rng);
            let (w, v) = dense_generalized_eig(&a, &b).unwrap();
            let scale = a.frobenius().max(b.frobenius());
            for j in 0..n {
                let av = a.matvec(&v.col(j));
                let bv = b.matvec(&v.col(j));
                for i in 0..n {
                    assert!(
                        (av[i] - w[j] * bv[i]).abs() <= 1e-11 * scale,
                        "pencil residual at ({i},{j})"
                    );
                }
            }
            let vtbv = v.transpose().matmul(&b.matmul(&v));
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((vtbv.get(i, j) - want).abs() <= 1e-11);
                }
            }
        }
    }

    #[test]
    fn cholesky_matches_hand_factorization() {
        let mut a = DenseMatrix::zeros(3, 3);
        let rows = [[4.0, 2.0, 2.0], [2.0, 5.0, 3.0], [2.0, 3.0, 6.0]];
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                a.set(i, j, *v);
            }
        }
        let l = cholesky(&a).unwrap();
        let want = [[2.0, 0.0, 0.0], [1.0, 2.0, 0.0], [1.0, 1.0, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((l.get(i, j) - want[i][j]).abs() < 1e-14);
            }
        }
        let x = solve_with_cholesky(&l, &[8.0, 10.0, 11.0]);
        let ax = a.matvec(&x);
        for (got, want2) in ax.iter().zip([8.0, 10.0, 11.0]) {
            assert!((got - want2).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = DenseMatrix::zeros(2, 2);
        a.set(0, 0, 1.0);
        a.set(0, 1, 2.0);
        a.set(1, 0, 2.0);
        a.set(1, 1, 1.0);
        match cholesky(&a) {
            Err(Error::NotSpd(_)) => {}
            other => panic!("expected NotSpd, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_input_is_a_contract_violation() {
        let mut a = DenseMatrix::zeros(2, 2);
        a.set(0, 0, 1.0);
        a.set(0, 1, 0.5);
        a.set(1, 0, 0.2);
        a.set(1, 1, 1.0);
        match dense_sym_eig(&a) {
            Err(Error::ContractViolation(_)) => {}
            other => panic!("expected ContractViolation, got {other:?}"),
        }
    }
}
