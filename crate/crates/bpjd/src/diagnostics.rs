//! Numerical verification of the solver's convergence behavior.
//!
//! This module provides reference eigenpairs (dense for small problems,
//! tight-tolerance iterative otherwise), principal-angle gaps between
//! subspaces in a problem metric, per-iteration checks of the a-priori
//! error bounds that govern the method, and a least-squares estimate of
//! the observed linear convergence rate.

use crate::assembly::FeProblem;
use crate::coarse::{CoarseSpectral, CG_TOL, DENSE_EIG_LIMIT};
use crate::decomp::Decomposition;
use crate::error::{Error, Result};
use crate::linalg::{
    cg_solve, dense_generalized_eig, dense_sym_eig, dot, m_orthonormalize, norm2,
    CsrMatrix, DenseMatrix,
};
use crate::solver::{solve, EigResult, IterationRecord, SolverConfig, SubspacePolicy};

/// Additive slack applied when checking the theoretical bounds, to absorb
/// round-off in both sides.
const BOUND_SLACK: f64 = 1e-8;

/// Reference eigenpairs used to measure the solver's error.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    /// First `s` discrete eigenvalues, ascending.
    pub lambdas_ref: Vec<f64>,
    /// Matching mass-orthonormal eigenvectors.
    pub u_ref: Vec<Vec<f64>>,
    /// Eigenvalue `s + 1`, when the computation provides it.
    pub lambda_next: Option<f64>,
    /// Whether the spectral gap after pair `s` is clearly positive
    /// (`None` when the gap was not computed).
    pub gap_ok: Option<bool>,
}

/// Dense reference solve of the full pencil.
///
/// Only available for moderate problem sizes; larger problems should use
/// [`reference_solve_iterative`]. The eigenvalue after the requested
/// block is returned as well, and a collapsed gap behind the block is
/// flagged rather than rejected.
pub fn reference_solve(p: &FeProblem, s: usize) -> Result<ReferenceSolution> {
    if s == 0 {
        return Err(Error::Config("s must be at least 1".to_string()));
    }
    if s + 1 > p.n_free {
        return Err(Error::Config(format!(
            "cannot reference {s} pairs on a problem with {} unknowns",
            p.n_free
        )));
    }
    if p.n_free > DENSE_EIG_LIMIT {
        return Err(Error::Config(format!(
            "problem has {} unknowns, above the dense limit {}; use the \
             tight-tolerance iterative reference",
            p.n_free, DENSE_EIG_LIMIT
        )));
    }
    let (w, v) = dense_generalized_eig(
        &DenseMatrix::from_csr(&p.k),
        &DenseMatrix::from_csr(&p.m),
    )?;
    let u_ref: Vec<Vec<f64>> = (0..s).map(|j| v.col(j)).collect();
    for (i, ui) in u_ref.iter().enumerate() {
        let ku = p.k.spmv(ui);
        let mu = p.m.spmv(ui);
        let res: f64 = ku
            .iter()
            .zip(&mu)
            .map(|(k, m)| (k - w[i] * m) * (k - w[i] * m))
            .sum::<f64>()
            .sqrt();
        if res > 1e-9 * w[i].max(1.0) * norm2(&mu) {
            return Err(Error::ContractViolation(format!(
                "dense reference residual {res} for pair {i}"
            )));
        }
    }
    let rel_gap = (w[s] - w[s - 1]) / w[s].max(1.0);
    Ok(ReferenceSolution {
        lambdas_ref: w[..s].to_vec(),
        u_ref,
        lambda_next: Some(w[s]),
        gap_ok: Some(rel_gap > 1e-8),
    })
}

/// Iterative reference solve at a much tighter tolerance than production
/// runs, for problems beyond the dense limit.
///
/// The tolerance is four orders below the production default. Tightening
/// it further is counterproductive: the stopping sum accumulates the
/// round-off jitter of every Ritz value, so for a block of s pairs with
/// eigenvalues of size lambda the reachable floor is roughly
/// s * lambda * machine epsilon, and a tolerance below that floor makes
/// the solve grind to its iteration cap while the trial subspace keeps
/// growing.
pub fn reference_solve_iterative(
    p: &FeProblem,
    d: &Decomposition,
    cs: &CoarseSpectral,
    s: usize,
) -> Result<ReferenceSolution> {
    let level = p.mesh.level;
    let cfg = SolverConfig {
        s,
        tol: 1e-12,
        tau: 1,
        max_outer: 300,
        subspace_policy: SubspacePolicy::Growing,
        overlap_ratio: 0.25,
        coarse_n: p.mesh.n_axis[0] >> level,
        diagnostics: false,
    };
    let res = solve(p, d, cs, &cfg)?;
    if !res.converged {
        return Err(Error::Config(
            "iterative reference did not converge within its budget".to_string(),
        ));
    }
    Ok(ReferenceSolution {
        lambdas_ref: res.lambdas,
        u_ref: res.u,
        lambda_next: None,
        gap_ok: None,
    })
}

/// Sine of the largest principal angle between two equal-dimensional
/// subspaces, measured in the inner product induced by `g`.
///
/// Both bases are orthonormalized in the metric first; a rank-deficient
/// basis is rejected.
pub fn subspace_gap(u1: &[Vec<f64>], u2: &[Vec<f64>], g: &CsrMatrix) -> Result<f64> {
    if u1.is_empty() || u2.is_empty() {
        return Err(Error::Config(
            "subspace gap of an empty basis is undefined".to_string(),
        ));
    }
    if u1.len() != u2.len() {
        return Err(Error::Dimension {
            expected: u1.len(),
            got: u2.len(),
        });
    }
    let q1 = m_orthonormalize(u1, g)?;
    let q2 = m_orthonormalize(u2, g)?;
    if q1.len() < u1.len() || q2.len() < u2.len() {
        return Err(Error::Degeneracy(
            "rank-deficient basis in subspace gap".to_string(),
        ));
    }
    let s = q1.len();
    let mut c = DenseMatrix::zeros(s, s);
    for (j, q2j) in q2.iter().enumerate() {
        let gq = g.spmv(q2j);
        for (i, q1i) in q1.iter().enumerate() {
            c.set(i, j, dot(q1i, &gq));
        }
    }
    let ctc = c.transpose().matmul(&c);
    // enforce exact symmetry before the eigensolve
    let mut sym = DenseMatrix::zeros(s, s);
    for i in 0..s {
        for j in 0..s {
            sym.set(i, j, 0.5 * (ctc.get(i, j) + ctc.get(j, i)));
        }
    }
    let (vals, _) = dense_sym_eig(&sym)?;
    let sigma_min_sq = vals[0].max(0.0);
    Ok((1.0 - sigma_min_sq).max(0.0).sqrt().min(1.0))
}

/// Measured and predicted quantities of the error bounds at one
/// iteration.
#[derive(Debug, Clone)]
pub struct IterationBounds {
    /// Outer iteration number.
    pub k: usize,
    /// Subspace gap to the reference in the mass metric.
    pub theta_m: f64,
    /// Bound on `theta_m^2` from the eigenvalue errors.
    pub theta_m_bound: f64,
    /// Subspace gap to the reference in the stiffness metric.
    pub theta_k: f64,
    /// Bound on `theta_k^2` from the reciprocal eigenvalue errors.
    pub theta_k_bound: f64,
    /// Stiffness energy of the block defect (only when requested).
    pub g_term: Option<f64>,
    /// Bound on the defect energy.
    pub g_bound: Option<f64>,
}

impl IterationBounds {
    /// Whether every computed quantity respects its bound, up to a small
    /// round-off slack.
    pub fn satisfied(&self) -> bool {
        let slack = |rhs: f64| rhs + BOUND_SLACK * (1.0 + rhs.abs());
        let theta_ok = self.theta_m * self.theta_m <= slack(self.theta_m_bound)
            && self.theta_k * self.theta_k <= slack(self.theta_k_bound);
        let g_ok = match (self.g_term, self.g_bound) {
            (Some(lhs), Some(rhs)) => lhs <= slack(rhs),
            _ => true,
        };
        theta_ok && g_ok
    }
}

/// Evaluates the a-priori error bounds on every recorded iteration.
///
/// The history must carry Ritz vector snapshots (solver diagnostics
/// enabled) and the reference must provide the eigenvalue after the
/// block. The optional defect bound costs one stiffness solve per pair
/// and iteration, so it is requested explicitly.
pub fn check_iteration_bounds(
    p: &FeProblem,
    history: &[IterationRecord],
    reference: &ReferenceSolution,
    include_defect_bound: bool,
) -> Result<Vec<IterationBounds>> {
    let lam_h = &reference.lambdas_ref;
    let s = lam_h.len();
    let Some(lam_next) = reference.lambda_next else {
        return Err(Error::Config(
            "bound checks need the reference eigenvalue after the block".to_string(),
        ));
    };
    let denom_m = lam_next - lam_h[s - 1];
    let denom_k = 1.0 / lam_h[s - 1] - 1.0 / lam_next;
    if denom_m <= 0.0 || denom_k <= 0.0 {
        return Err(Error::Config(
            "collapsed spectral gap behind the block; the bounds are void".to_string(),
        ));
    }
    let mut out = Vec::with_capacity(history.len());
    for rec in history {
        let Some(snap) = rec.u_snapshot.as_ref() else {
            return Err(Error::Config(format!(
                "iteration {} has no Ritz vector snapshot; run the solver \
                 with diagnostics enabled",
                rec.k
            )));
        };
        if rec.lambdas.len() < s || snap.len() < s {
            return Err(Error::Dimension {
                expected: s,
                got: rec.lambdas.len().min(snap.len()),
            });
        }
        let snap_s = &snap[..s];
        let theta_m = subspace_gap(&reference.u_ref, snap_s, &p.m)?;
        let theta_k = subspace_gap(&reference.u_ref, snap_s, &p.k)?;
        let sum_lambda: f64 = (0..s).map(|i| rec.lambdas[i] - lam_h[i]).sum();
        let sum_mu: f64 = (0..s).map(|i| 1.0 / lam_h[i] - 1.0 / rec.lambdas[i]).sum();
        let (g_term, g_bound) = if include_defect_bound {
            let mut energy = 0.0;
            for i in 0..s {
                let mu = p.m.spmv(&snap_s[i]);
                let (y, _) = cg_solve(
                    |x: &[f64], out: &mut [f64]| p.k.spmv_into(x, out),
                    &mu,
                    CG_TOL,
                    10 * mu.len(),
                    None,
                    None,
                )?;
                let gi: Vec<f64> = snap_s[i]
                    .iter()
                    .zip(&y)
                    .map(|(u, yi)| u / rec.lambdas[i] - yi)
                    .collect();
                energy += dot(&gi, &p.k.spmv(&gi));
            }
            (Some(energy), Some(sum_mu))
        } else {
            (None, None)
        };
        out.push(IterationBounds {
            k: rec.k,
            theta_m,
            theta_m_bound: sum_lambda / denom_m,
            theta_k,
            theta_k_bound: sum_mu / denom_k,
            g_term,
            g_bound,
        });
    }
    Ok(out)
}

/// Least-squares estimate of the linear convergence factor.
#[derive(Debug, Clone, Copy)]
pub struct RateFit {
    /// Estimated per-iteration error reduction factor.
    pub gamma_hat: f64,
    /// Coefficient of determination of the log-linear fit.
    pub r2: f64,
    /// Number of iterations entering the fit.
    pub n_points: usize,
}

/// Fits `log(error_k) ~ a + k log(gamma)` over the recorded history.
///
/// The first two iterations are excluded (the subspace is still settling)
/// and so are iterations whose error has dropped within two orders of
/// magnitude of the stopping tolerance, where round-off flattens the
/// decay. Returns `None` when fewer than three points remain.
pub fn estimate_rate(
    history: &[IterationRecord],
    lambdas_ref: &[f64],
    tol: f64,
) -> Option<RateFit> {
    let s = lambdas_ref.len();
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for rec in history {
        if rec.k < 2 || rec.lambdas.len() < s {
            continue;
        }
        let e: f64 = (0..s).map(|i| rec.lambdas[i] - lambdas_ref[i]).sum();
        if e <= 100.0 * tol {
            continue;
        }
        pts.push((rec.k as f64, e.ln()));
    }
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| {
            let fit = intercept + slope * p.0;
            (p.1 - fit) * (p.1 - fit)
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some(RateFit {
        gamma_hat: slope.exp(),
        r2,
        n_points: pts.len(),
    })
}

/// Summary of a finished run measured against a reference solution.
#[derive(Debug, Clone)]
pub struct GapReport {
    /// Mass-metric gap between the converged block and the reference.
    pub final_gap: f64,
    /// Per-pair eigenvalue errors relative to the reference.
    pub lambda_errors: Vec<f64>,
    /// Fitted convergence rate, when the history supports a fit.
    pub rate: Option<RateFit>,
}

/// Builds the run summary against a reference solution.
pub fn gap_report(
    p: &FeProblem,
    result: &EigResult,
    reference: &ReferenceSolution,
    tol: f64,
) -> Result<GapReport> {
    let s = reference.lambdas_ref.len();
    if result.lambdas.len() < s {
        return Err(Error::Dimension {
            expected: s,
            got: result.lambdas.len(),
        });
    }
    let final_gap = subspace_gap(&reference.u_ref, &result.u[..s], &p.m)?;
    let lambda_errors = (0..s)
        .map(|i| result.lambdas[i] - reference.lambdas_ref[i])
        .collect();
    Ok(GapReport {
        final_gap,
        lambda_errors,
        rate: estimate_rate(&result.history, &reference.lambdas_ref, tol),
    })
}
