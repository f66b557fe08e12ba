//! Sparse and dense linear algebra kernels.
//!
//! Everything here is deterministic: reductions run in fixed orders, so a
//! given build produces bitwise-identical results run to run. The
//! submodules provide CSR storage and kernels, small dense factorizations
//! and eigensolvers, a deflated conjugate gradient, and a trace identity
//! self-check; this root adds the vector helpers and the metric
//! Gram-Schmidt used throughout the solver.

pub mod cg;
pub mod csr;
pub mod dense;
pub mod trace;

pub use cg::{cg_solve, CgReport};
pub use csr::{spmv, CsrMatrix};
pub use dense::{
    cholesky, dense_generalized_eig, dense_sym_eig, solve_lower,
    solve_lower_transpose, solve_with_cholesky, DenseMatrix,
};
pub use trace::trace_identity_residual;

use crate::error::{Error, Result};

/// Euclidean dot product.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Euclidean norm.
pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// In-place update `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Inner product `x^T G y` in the metric of a sparse symmetric matrix.
pub fn m_dot(g: &CsrMatrix, x: &[f64], y: &[f64]) -> f64 {
    dot(x, &g.spmv(y))
}

/// Norm induced by a sparse symmetric positive definite metric.
pub fn m_norm(g: &CsrMatrix, x: &[f64]) -> f64 {
    m_dot(g, x, x).max(0.0).sqrt()
}

/// Relative drop tolerance for Gram-Schmidt: a candidate whose norm after
/// orthogonalization falls below this fraction of its original norm is
/// numerically inside the span and is discarded.
const MGS_DROP_TOL: f64 = 1e-10;

/// Orthonormalizes `candidates` against `existing` and against each other
/// in the `metric` inner product, returning the kept vectors.
///
/// The `existing` vectors must already be metric-orthonormal; they are not
/// modified. Two Gram-Schmidt passes are run per vector, which keeps the
/// loss of orthogonality at round-off level even for ill-conditioned
/// inputs. Each kept vector is normalized and sign-fixed so its
/// largest-magnitude entry is positive.
pub fn m_orthonormalize_against(
    existing: &[Vec<f64>],
    candidates: &[Vec<f64>],
    metric: &CsrMatrix,
) -> Result<Vec<Vec<f64>>> {
    let n = metric.n_rows;
    for v in existing.iter().chain(candidates) {
        if v.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: v.len(),
            });
        }
    }
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for cand in candidates {
        let mut v = cand.clone();
        let norm0 = m_norm(metric, &v);
        if norm0 == 0.0 {
            continue;
        }
        for _pass in 0..2 {
            let gv = metric.spmv(&v);
            let coeffs: Vec<f64> = existing
                .iter()
                .chain(&kept)
                .map(|q| dot(q, &gv))
                .collect();
            for (q, c) in existing.iter().chain(&kept).zip(coeffs) {
                axpy(-c, q, &mut v);
            }
        }
        let norm1 = m_norm(metric, &v);
        if norm1 <= MGS_DROP_TOL * norm0 {
            continue;
        }
        let inv = 1.0 / norm1;
        for vi in v.iter_mut() {
            *vi *= inv;
        }
        let mut best = 0usize;
        let mut best_abs = 0.0f64;
        for (i, vi) in v.iter().enumerate() {
            if vi.abs() > best_abs {
                best_abs = vi.abs();
                best = i;
            }
        }
        if v[best] < 0.0 {
            for vi in v.iter_mut() {
                *vi = -*vi;
            }
        }
        kept.push(v);
    }
    Ok(kept)
}

/// Orthonormalizes a set of vectors in the given metric (two-pass modified
/// Gram-Schmidt with drop tolerance). See `m_orthonormalize_against`.
pub fn m_orthonormalize(
    candidates: &[Vec<f64>],
    metric: &CsrMatrix,
) -> Result<Vec<Vec<f64>>> {
    m_orthonormalize_against(&[], candidates, metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn mass_like(n: usize) -> CsrMatrix {
        let mut trips = Vec::new();
        for i in 0..n {
            trips.push((i, i, 4.0 / 6.0));
            if i + 1 < n {
                trips.push((i, i + 1, 1.0 / 6.0));
                trips.push((i + 1, i, 1.0 / 6.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &trips)
    }

    #[test]
    fn orthonormalized_set_has_identity_gram_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 40;
        let g = mass_like(n);
        for _ in 0..10 {
            let cands: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let q = m_orthonormalize(&cands, &g).unwrap();
            assert_eq!(q.len(), 6);
            for (i, qi) in q.iter().enumerate() {
                for (j, qj) in q.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    let got = m_dot(&g, qi, qj);
                    assert!(
                        (got - want).abs() <= 1e-12,
                        "gram({i},{j}) = {got}"
                    );
                }
            }
        }
    }

    #[test]
    fn dependent_and_zero_vectors_are_dropped() {
        let n = 15;
        let g = mass_like(n);
        let mut a = vec![0.0; n];
        a[3] = 1.0;
        let mut b = vec![0.0; n];
        b[3] = -2.5;
        let zero = vec![0.0; n];
        let q = m_orthonormalize(&[a.clone(), b, zero], &g).unwrap();
        assert_eq!(q.len(), 1, "span has dimension one");
    }

    #[test]
    fn new_vectors_stay_orthogonal_to_a_frozen_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 30;
        let g = mass_like(n);
        let first: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let basis = m_orthonormalize(&first, &g).unwrap();
        let snapshot = basis.clone();
        let more: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let added = m_orthonormalize_against(&basis, &more, &g).unwrap();
        assert_eq!(basis, snapshot, "existing basis must not change");
        for a in &added {
            for b in &basis {
                assert!(m_dot(&g, a, b).abs() <= 1e-12);
            }
            assert!((m_norm(&g, a) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn sign_convention_pins_the_largest_entry_positive() {
        let n = 10;
        let g = CsrMatrix::identity(n);
        let mut v = vec![0.1; n];
        v[7] = -3.0;
        let q = m_orthonormalize(&[v], &g).unwrap();
        assert!(q[0][7] > 0.0, "largest-magnitude entry should be positive");
    }
}
