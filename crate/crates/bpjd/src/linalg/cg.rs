//! Conjugate gradient solver with optional spectral deflation.
//!
//! The solver works on a caller-supplied operator closure, so the same
//! routine serves plain mass solves, shifted local stiffness solves, and
//! the deflated coarse solves. When a deflation basis is supplied the
//! right-hand side is projected into the complement of the deflated
//! subspace and both the residual and the search direction are
//! re-projected every iteration: the shifted operator is indefinite on
//! the deflated subspace, and because the basis vectors are eigenvectors
//! only up to round-off, every operator application leaks a small
//! deflated component back into the residual. Left in place, the leak
//! grows along the negative directions until it dominates the step
//! length and the iterate diverges, so it is removed as it appears. The
//! final iterate is projected once more before it is returned.

use super::csr::CsrMatrix;
use super::{axpy, dot, norm2};
use crate::error::{Error, Result};

/// Outcome of a conjugate gradient solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CgReport {
    /// Number of iterations performed.
    pub iterations: usize,
    /// Final residual norm relative to the (projected) right-hand side.
    pub rel_residual: f64,
    /// Whether the relative tolerance was reached within `max_it`.
    pub converged: bool,
}

/// Solves `A x = b` for a symmetric positive (semi-)definite operator
/// given as a closure `apply(x, out)` computing `out = A x`.
///
/// `deflation_basis` columns must be orthonormal in the `metric` inner
/// product (Euclidean when `metric` is `None`); the solve then runs in the
/// metric-orthogonal complement of their span. Returns the iterate and a
/// report; running out of iterations is reported, not an error, but a
/// non-positive curvature `p^T A p` aborts with `Indefinite` because it
/// means the operator is not positive definite on the solve subspace.
pub fn cg_solve<F>(
    mut apply: F,
    rhs: &[f64],
    tol_rel: f64,
    max_it: usize,
    deflation_basis: Option<&[Vec<f64>]>,
    metric: Option<&CsrMatrix>,
) -> Result<(Vec<f64>, CgReport)>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = rhs.len();
    // Metric images G u_j of the deflation vectors, computed once. Both
    // projections reduce to dot products against these images.
    let basis: &[Vec<f64>] = deflation_basis.unwrap_or(&[]);
    let images: Vec<Vec<f64>> = match metric {
        Some(g) => basis
            .iter()
            .map(|u| {
                if u.len() != g.n_cols {
                    return Err(Error::Dimension {
                        expected: g.n_cols,
                        got: u.len(),
                    });
                }
                Ok(g.spmv(u))
            })
            .collect::<Result<_>>()?,
        None => basis.to_vec(),
    };
    for u in basis {
        if u.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: u.len(),
            });
        }
    }

    // Dual projection: removes the components carried by the metric
    // images of the deflated vectors. Applied to the right-hand side
    // once and to the residual every iteration.
    let dual_project = |v: &mut Vec<f64>| {
        for (u, gu) in basis.iter().zip(&images) {
            let c = dot(u, v);
            axpy(-c, gu, v);
        }
    };

    let mut b = rhs.to_vec();
    dual_project(&mut b);
    let bnorm = norm2(&b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            CgReport {
                iterations: 0,
                rel_residual: 0.0,
                converged: true,
            },
        ));
    }

    let primal_project = |v: &mut Vec<f64>| {
        for (u, gu) in basis.iter().zip(&images) {
            let c = dot(gu, v);
            axpy(-c, u, v);
        }
    };

    let mut r = b;
    let mut p = r.clone();
    primal_project(&mut p);
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut iterations = 0usize;
    let mut converged = false;
    let mut rel = norm2(&r) / bnorm;
    if rel <= tol_rel {
        converged = true;
    }
    while !converged && iterations < max_it {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Indefinite { curvature: pap });
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        dual_project(&mut r);
        iterations += 1;
        rel = norm2(&r) / bnorm;
        if rel <= tol_rel {
            converged = true;
            break;
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        primal_project(&mut p);
    }
    primal_project(&mut x);
    Ok((
        x,
        CgReport {
            iterations,
            rel_residual: rel,
            converged,
        },
    ))
}
