//! Trace identity self-check.
//!
//! For symmetric `A` and symmetric positive definite `B`, the inverse can
//! be expanded around the diagonal of `B`: writing `D_B` for the diagonal
//! part and `Dbar_B = D_B - B` for the negated off-diagonal part,
//!
//! ```text
//! B^{-1} = D_B^{-1} + D_B^{-1} Dbar_B D_B^{-1}
//!        + D_B^{-1} Dbar_B B^{-1} Dbar_B D_B^{-1}
//! ```
//!
//! holds exactly. Taking traces against `A` and regrouping yields a
//! four-term split of `Tr(B^{-1}A)` in which an arbitrary diagonal
//! correction cancels identically. `trace_identity_residual` evaluates
//! both sides independently and returns their absolute difference, which
//! should be at round-off level for any well-conditioned input; it is used
//! as an end-to-end self-test of the dense factorization and product
//! kernels.

use super::dense::{cholesky, solve_with_cholesky, DenseMatrix};
use crate::error::{Error, Result};

/// Trace of a product of two square matrices without forming it.
fn trace_product(x: &DenseMatrix, y: &DenseMatrix) -> f64 {
    debug_assert_eq!(x.n_cols, y.n_rows);
    debug_assert_eq!(x.n_rows, y.n_cols);
    let mut t = 0.0;
    for i in 0..x.n_rows {
        for j in 0..x.n_cols {
            t += x.get(i, j) * y.get(j, i);
        }
    }
    t
}

/// Evaluates `Tr(B^{-1}A)` twice, once directly through a Cholesky solve
/// and once through the diagonal-split expansion
///
/// ```text
/// Tr(B^{-1}A) = Tr(D_B^{-1} D_A) - Tr(A1) + Tr(A2) + Tr(A3)
/// A1 = D_B^{-1} (I - B) D_B^{-1} (D_A - A + D)
/// A2 = D_B^{-1} (I - D_B) D_B^{-1} D
/// A3 = D_B^{-1} Dbar_B B^{-1} Dbar_B D_B^{-1} A
/// ```
///
/// where `D = diag(d)` is an arbitrary diagonal whose contribution cancels
/// between `A1` and `A2`. Returns the absolute difference of the two
/// evaluations.
pub fn trace_identity_residual(
    a: &DenseMatrix,
    b: &DenseMatrix,
    d: &[f64],
) -> Result<f64> {
    let n = a.n_rows;
    if a.n_cols != n || b.n_rows != n || b.n_cols != n {
        return Err(Error::Dimension {
            expected: n,
            got: b.n_rows.max(a.n_cols),
        });
    }
    if d.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: d.len(),
        });
    }
    let l = cholesky(b)?;

    // Direct evaluation: the j-th diagonal entry of B^{-1}A is the j-th
    // component of the solve B x = (column j of A).
    let mut direct = 0.0;
    for j in 0..n {
        let x = solve_with_cholesky(&l, &a.col(j));
        direct += x[j];
    }

    let db: Vec<f64> = (0..n).map(|i| b.get(i, i)).collect();
    for (i, v) in db.iter().enumerate() {
        if *v == 0.0 {
            return Err(Error::NotSpd(format!("zero diagonal entry {i} in B")));
        }
    }

    // Term 1: Tr(D_B^{-1} D_A).
    let term1: f64 = (0..n).map(|i| a.get(i, i) / db[i]).sum();

    // Term 2: Tr(A1) with A1 = D_B^{-1}(I - B)D_B^{-1}(D_A - A + D).
    let mut x1 = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let btilde = if i == j { 1.0 - b.get(i, j) } else { -b.get(i, j) };
            x1.set(i, j, btilde / (db[i] * db[j]));
        }
    }
    let mut y1 = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let atilde = if i == j { d[i] } else { -a.get(i, j) };
            y1.set(i, j, atilde);
        }
    }
    let tr_a1 = trace_product(&x1, &y1);

    // Term 3: Tr(A2) = sum_i (1 - B_ii)/B_ii^2 * d_i.
    let tr_a2: f64 = (0..n).map(|i| (1.0 - db[i]) / (db[i] * db[i]) * d[i]).sum();

    // Term 4: Tr(A3) with A3 = P B^{-1} Q, P = D_B^{-1} Dbar_B and
    // Q = Dbar_B D_B^{-1} A.
    let mut p = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p.set(i, j, -b.get(i, j) / db[i]);
            }
        }
    }
    let mut scaled_a = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            scaled_a.set(i, j, a.get(i, j) / db[i]);
        }
    }
    let mut q = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                if k != i {
                    acc += -b.get(i, k) * scaled_a.get(k, j);
                }
            }
            q.set(i, j, acc);
        }
    }
    let mut binv_q = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let col = solve_with_cholesky(&l, &q.col(j));
        binv_q.set_col(j, &col);
    }
    let tr_a3 = trace_product(&p, &binv_q);

    let split = term1 - tr_a1 + tr_a2 + tr_a3;
    Ok((direct - split).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = scale * rng.gen_range(-1.0..1.0);
                a.set(i, j, v);
                a.set(j, i, v);
            }
        }
        a
    }

    #[test]
    fn near_identity_perturbations_satisfy_the_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..20 {
            let n = 30;
            let a = random_symmetric(n, 1.0, &mut rng);
            let mut b = random_symmetric(n, 0.1, &mut rng);
            for i in 0..n {
                b.set(i, i, 1.0 + b.get(i, i));
            }
            let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let res = trace_identity_residual(&a, &b, &d).unwrap();
            assert!(res <= 1e-12, "trace identity residual {res}");
        }
    }

    #[test]
    fn residual_does_not_depend_on_the_free_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 25;
        let a = random_symmetric(n, 1.0, &mut rng);
        let mut b = random_symmetric(n, 0.08, &mut rng);
        for i in 0..n {
            b.set(i, i, 1.0 + b.get(i, i));
        }
        let zero = vec![0.0; n];
        let wild: Vec<f64> = (0..n).map(|i| 100.0 * (i as f64 - 10.0)).collect();
        let r0 = trace_identity_residual(&a, &b, &zero).unwrap();
        let r1 = trace_identity_residual(&a, &b, &wild).unwrap();
        assert!(r0 <= 1e-12 && r1 <= 1e-10, "residuals {r0} and {r1}");
    }

    #[test]
    fn diagonal_b_collapses_to_the_leading_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 12;
        let a = random_symmetric(n, 1.0, &mut rng);
        let mut b = DenseMatrix::zeros(n, n);
        for i in 0..n {
            b.set(i, i, 0.5 + (i as f64) / n as f64);
        }
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let res = trace_identity_residual(&a, &b, &d).unwrap();
        assert!(res <= 1e-13, "diagonal case residual {res}");
    }

    #[test]
    fn indefinite_b_is_rejected() {
        let mut a = DenseMatrix::identity(2);
        a.set(0, 1, 0.3);
        a.set(1, 0, 0.3);
        let mut b = DenseMatrix::zeros(2, 2);
        b.set(0, 0, 1.0);
        b.set(0, 1, 2.0);
        b.set(1, 0, 2.0);
        b.set(1, 1, 1.0);
        assert!(matches!(
            trace_identity_residual(&a, &b, &[0.0, 0.0]),
            Err(Error::NotSpd(_))
        ));
    }
}
