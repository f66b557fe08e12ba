//! Two-level block preconditioned Jacobi-Davidson eigensolver.
//!
//! The iteration computes the first `s` eigenpairs of the discrete pencil
//! `K u = lambda M u`. Each outer step applies, for every pair, a
//! two-level additive preconditioner to the block residual: a coarse
//! solve deflated by the coarse eigenvectors plus independent overlapping
//! subdomain solves, all shifted by the pair's current Ritz value. The
//! projected corrections enrich a search subspace, and a Rayleigh-Ritz
//! step extracts the next Ritz pairs. Because the subspace always
//! contains the previous Ritz vectors, the Ritz values decrease
//! monotonically; the iteration stops when their total change per step
//! drops below the tolerance.

use crate::assembly::{rayleigh_quotient, FeProblem};
use crate::coarse::{
    coarse_deflated_solve, coarse_eigs, galerkin_pair, CoarseSpectral, CG_TOL,
};
use crate::decomp::{local_shifted_operator, restrict, Decomposition};
use crate::error::{Error, Result};
use crate::linalg::{
    cg_solve, dense_sym_eig, dot, m_dot, m_orthonormalize, m_orthonormalize_against,
    norm2, DenseMatrix,
};
use crate::mesh::{build_coarse_mesh, prolongation, refine_uniform};
use rayon::prelude::*;
use std::time::Instant;

/// Relative floor below which a block residual is treated as converged
/// and its correction is skipped.
const RESIDUAL_FLOOR: f64 = 1e-13;

/// Absolute slack allowed on the monotone decrease of Ritz values.
const MONOTONE_SLACK: f64 = 1e-12;

/// How the search subspace evolves between outer iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubspacePolicy {
    /// Rebuild the basis from the current Ritz vectors and the new
    /// corrections each iteration (at most `2 s` columns).
    FixedTwoS,
    /// Keep the previous basis and append the new corrections.
    Growing,
}

impl SubspacePolicy {
    /// Parses the configuration-file spelling.
    pub fn from_name(name: &str) -> Result<SubspacePolicy> {
        match name {
            "fixed_2s" => Ok(SubspacePolicy::FixedTwoS),
            "growing" => Ok(SubspacePolicy::Growing),
            other => Err(Error::Config(format!(
                "unknown subspace policy '{other}' (expected fixed_2s or growing)"
            ))),
        }
    }

    /// Canonical configuration-file spelling.
    pub fn name(&self) -> &'static str {
        match self {
            SubspacePolicy::FixedTwoS => "fixed_2s",
            SubspacePolicy::Growing => "growing",
        }
    }
}

/// Parameters of the eigensolver.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Number of eigenpairs to compute.
    pub s: usize,
    /// Stopping tolerance on the summed Ritz value change per iteration.
    pub tol: f64,
    /// Initialization depth: the starting subspace comes from the coarse
    /// mesh refined `tau` times (capped at the fine level).
    pub tau: usize,
    /// Maximum number of outer iterations.
    pub max_outer: usize,
    /// Search subspace policy.
    pub subspace_policy: SubspacePolicy,
    /// Target overlap width as a fraction of the coarse cell width.
    pub overlap_ratio: f64,
    /// Cells per axis of the coarse mesh.
    pub coarse_n: usize,
    /// Record Ritz vector snapshots in the history (needed by the
    /// convergence diagnostics, costly in memory otherwise).
    pub diagnostics: bool,
}

impl Default for SolverConfig {
    fn default() -> SolverConfig {
        SolverConfig {
            s: 1,
            tol: 1e-8,
            tau: 1,
            max_outer: 100,
            subspace_policy: SubspacePolicy::FixedTwoS,
            overlap_ratio: 0.25,
            coarse_n: 4,
            diagnostics: false,
        }
    }
}

/// One outer iteration of the solve, as recorded in the history.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// Outer iteration number (0 is the initial state).
    pub k: usize,
    /// Ritz values after this iteration.
    pub lambdas: Vec<f64>,
    /// Summed absolute Ritz value change; `None` for the initial record.
    pub sum_delta: Option<f64>,
    /// Wall time of the iteration in milliseconds.
    pub wall_ms: f64,
    /// Mass-inverse norms of the block residuals.
    pub res_bnorms: Option<Vec<f64>>,
    /// Ritz vector snapshot (only when diagnostics are enabled).
    pub u_snapshot: Option<Vec<Vec<f64>>>,
}

/// Mutable state of the outer iteration.
#[derive(Debug, Clone)]
pub struct SolverState {
    /// Completed outer iterations.
    pub k: usize,
    /// Current Ritz vectors (mass-orthonormal).
    pub u: Vec<Vec<f64>>,
    /// Current Ritz values, ascending.
    pub lambdas: Vec<f64>,
    /// Search subspace basis (mass-orthonormal, spans the Ritz vectors).
    pub w: Vec<Vec<f64>>,
    /// Per-iteration records.
    pub history: Vec<IterationRecord>,
}

/// Result of a solve.
#[derive(Debug, Clone)]
pub struct EigResult {
    /// Final Ritz values, ascending.
    pub lambdas: Vec<f64>,
    /// Final Ritz vectors (mass-orthonormal).
    pub u: Vec<Vec<f64>>,
    /// Number of outer iterations performed.
    pub iterations: usize,
    /// Whether the stopping tolerance was reached within `max_outer`.
    pub converged: bool,
    /// Per-iteration records including the initial state.
    pub history: Vec<IterationRecord>,
}

/// Builds the starting subspace from an auxiliary coarse problem.
///
/// The auxiliary mesh is the coarse mesh refined `min(tau, level)` times.
/// Its first `s` pencil eigenvectors are prolonged to the fine space,
/// mass-orthonormalized, and their Rayleigh quotients become the starting
/// Ritz values. When the auxiliary level is zero the eigenvectors of the
/// supplied coarse spectral data are reused instead of being recomputed.
pub fn initialize(
    p: &FeProblem,
    cfg: &SolverConfig,
    cs: Option<&CoarseSpectral>,
) -> Result<SolverState> {
    let level = p.mesh.level;
    if p.mesh.n_axis[0] != cfg.coarse_n << level {
        return Err(Error::Config(format!(
            "fine mesh has {} cells per axis at level {level}, which does \
             not refine a coarse mesh with {} cells per axis",
            p.mesh.n_axis[0], cfg.coarse_n
        )));
    }
    let tl = cfg.tau.min(level);
    let prolonged: Vec<Vec<f64>> = match cs {
        Some(cs) if tl == 0 && cs.s >= cfg.s => cs.eigvecs[..cfg.s]
            .iter()
            .map(|v| cs.p.spmv(v))
            .collect(),
        _ => {
            let mut aux = build_coarse_mesh(&p.mesh.spec, cfg.coarse_n)?;
            for _ in 0..tl {
                aux = refine_uniform(&aux);
            }
            let prol = prolongation(&aux, &p.mesh)?;
            let (k_aux, m_aux) = galerkin_pair(&prol, &p.k, &p.m);
            let (_, vecs) = coarse_eigs(&k_aux, &m_aux, cfg.s)?;
            vecs.iter().map(|v| prol.spmv(v)).collect()
        }
    };
    let u = m_orthonormalize(&prolonged, &p.m)?;
    if u.len() < cfg.s {
        return Err(Error::Degeneracy(format!(
            "initial subspace has rank {} but {} eigenpairs were requested",
            u.len(),
            cfg.s
        )));
    }
    let lambdas: Vec<f64> = u.iter().map(|ui| rayleigh_quotient(p, ui)).collect();
    Ok(SolverState {
        k: 0,
        w: u.clone(),
        u,
        lambdas,
        history: Vec::new(),
    })
}

/// Block residuals `rho_i = lambda_i M u_i - K u_i`.
pub fn block_residuals(p: &FeProblem, u: &[Vec<f64>], lambdas: &[f64]) -> Vec<Vec<f64>> {
    u.iter()
        .zip(lambdas)
        .map(|(ui, &li)| {
            let ku = p.k.spmv(ui);
            let mu = p.m.spmv(ui);
            (0..ui.len()).map(|j| li * mu[j] - ku[j]).collect()
        })
        .collect()
}

/// Applies the two-level preconditioner at the given shift: the deflated
/// coarse solve (when coarse data is supplied) plus all subdomain solves,
/// summed.
///
/// Subdomain solves run independently (in parallel) and are accumulated
/// in ascending subdomain order, so the result does not depend on the
/// thread count. Local systems are solved by conjugate gradients after
/// symmetric diagonal scaling; a loss of positive definiteness surfaces
/// as `ShiftSafety`.
pub fn apply_preconditioner(
    p: &FeProblem,
    d: &Decomposition,
    cs: Option<&CoarseSpectral>,
    shift: f64,
    rho: &[f64],
) -> Result<Vec<f64>> {
    if rho.len() != p.n_free {
        return Err(Error::Dimension {
            expected: p.n_free,
            got: rho.len(),
        });
    }
    let mut out = match cs {
        Some(cs) => coarse_deflated_solve(cs, shift, rho)?,
        None => vec![0.0; p.n_free],
    };
    let locals: Vec<Result<Vec<f64>>> = (0..d.n_sub)
        .into_par_iter()
        .map(|l| {
            if d.local_dofs[l].is_empty() {
                return Ok(Vec::new());
            }
            let a = local_shifted_operator(p, d, l, shift)?;
            let scale: Vec<f64> = a.diagonal().iter().map(|&v| 1.0 / v.sqrt()).collect();
            let b: Vec<f64> = restrict(d, l, rho)
                .iter()
                .zip(&scale)
                .map(|(r, s)| r * s)
                .collect();
            let n = b.len();
            let mut tmp = vec![0.0; n];
            let apply = |x: &[f64], out: &mut [f64]| {
                for (t, (xi, si)) in tmp.iter_mut().zip(x.iter().zip(&scale)) {
                    *t = xi * si;
                }
                a.spmv_into(&tmp, out);
                for (o, si) in out.iter_mut().zip(&scale) {
                    *o *= si;
                }
            };
            let (y, _report) =
                cg_solve(apply, &b, CG_TOL, 10 * n, None, None).map_err(|e| match e {
                    Error::Indefinite { .. } => Error::ShiftSafety {
                        component: format!("subdomain {l}"),
                        shift,
                    },
                    other => other,
                })?;
            Ok(y.iter().zip(&scale).map(|(yi, si)| yi * si).collect())
        })
        .collect();
    for (l, local) in locals.into_iter().enumerate() {
        let local = local?;
        if !local.is_empty() {
            crate::decomp::extend(d, l, &local, &mut out);
        }
    }
    Ok(out)
}

/// Preconditioned, projected corrections for every block pair.
///
/// Pairs whose residual is at round-off level relative to their scale are
/// skipped. Each remaining correction is the preconditioned residual at
/// the pair's Ritz value, projected mass-orthogonally off the current
/// Ritz space.
pub fn block_correction(
    p: &FeProblem,
    d: &Decomposition,
    cs: Option<&CoarseSpectral>,
    u: &[Vec<f64>],
    lambdas: &[f64],
    rhos: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for (i, rho) in rhos.iter().enumerate() {
        let mu = p.m.spmv(&u[i]);
        let floor = RESIDUAL_FLOOR * lambdas[i].max(1.0) * norm2(&mu);
        if norm2(rho) <= floor {
            continue;
        }
        let mut t = apply_preconditioner(p, d, cs, lambdas[i], rho)?;
        for uj in u {
            let c = m_dot(&p.m, uj, &t);
            for (ti, vj) in t.iter_mut().zip(uj) {
                *ti -= c * vj;
            }
        }
        out.push(t);
    }
    Ok(out)
}

/// Gram matrix `W^T K W` from cached products `kw[j] = K w_j`.
fn stiffness_gram(w: &[Vec<f64>], kw: &[Vec<f64>]) -> DenseMatrix {
    let n = w.len();
    let mut a = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(&w[i], &kw[j]);
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    a
}

/// Extends a cached Gram matrix by the columns `n_old..` of `w`.
fn extend_stiffness_gram(
    a_old: &DenseMatrix,
    w: &[Vec<f64>],
    kw: &[Vec<f64>],
    n_old: usize,
) -> DenseMatrix {
    let n = w.len();
    let mut a = DenseMatrix::zeros(n, n);
    for i in 0..n_old {
        for j in 0..n_old {
            a.set(i, j, a_old.get(i, j));
        }
    }
    for j in n_old..n {
        for i in 0..=j {
            let v = dot(&w[i], &kw[j]);
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    a
}

/// Rayleigh-Ritz extraction on a mass-orthonormal basis: eigenpairs of
/// the projected stiffness, with Ritz vectors assembled in the fine
/// space. Values ascend.
pub fn rayleigh_ritz(
    p: &FeProblem,
    w: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if w.is_empty() {
        return Err(Error::Degeneracy("empty search subspace".to_string()));
    }
    let kw: Vec<Vec<f64>> = w.iter().map(|wj| p.k.spmv(wj)).collect();
    let a = stiffness_gram(w, &kw);
    let (vals, z) = dense_sym_eig(&a)?;
    let vecs = assemble_ritz_vectors(w, &z, w.len());
    Ok((vals, vecs))
}

/// Linear combinations `W z_j` for the first `count` eigenvector columns.
fn assemble_ritz_vectors(w: &[Vec<f64>], z: &DenseMatrix, count: usize) -> Vec<Vec<f64>> {
    let n = w[0].len();
    (0..count)
        .map(|j| {
            let mut y = vec![0.0; n];
            for (i, wi) in w.iter().enumerate() {
                let c = z.get(i, j);
                if c != 0.0 {
                    for (yi, wv) in y.iter_mut().zip(wi) {
                        *yi += c * wv;
                    }
                }
            }
            y
        })
        .collect()
}

/// Mass-inverse norms `sqrt(rho^T M^{-1} rho)` of the block residuals.
fn residual_bnorms(p: &FeProblem, rhos: &[Vec<f64>]) -> Result<Vec<f64>> {
    rhos.iter()
        .map(|rho| {
            let (y, _) = cg_solve(
                |x: &[f64], out: &mut [f64]| p.m.spmv_into(x, out),
                rho,
                CG_TOL,
                10 * rho.len(),
                None,
                None,
            )?;
            Ok(dot(rho, &y).max(0.0).sqrt())
        })
        .collect()
}

/// Runs the full outer iteration.
///
/// Iterations are counted as Rayleigh-Ritz extractions performed; the
/// initial subspace construction is iteration zero. Failure to converge
/// within `max_outer` iterations is reported through the result, not as
/// an error.
pub fn solve(
    p: &FeProblem,
    d: &Decomposition,
    cs: &CoarseSpectral,
    cfg: &SolverConfig,
) -> Result<EigResult> {
    if cfg.s == 0 {
        return Err(Error::Config("s must be at least 1".to_string()));
    }
    if cs.s < cfg.s {
        return Err(Error::Config(format!(
            "coarse spectral data deflates {} pairs but {} were requested",
            cs.s, cfg.s
        )));
    }
    if d.owner.len() != p.mesh.elements.len() {
        return Err(Error::Config(
            "decomposition does not match the fine mesh".to_string(),
        ));
    }
    let t0 = Instant::now();
    let mut state = initialize(p, cfg, Some(cs))?;
    let mut rhos = block_residuals(p, &state.u, &state.lambdas);
    state.history.push(IterationRecord {
        k: 0,
        lambdas: state.lambdas.clone(),
        sum_delta: None,
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        res_bnorms: Some(residual_bnorms(p, &rhos)?),
        u_snapshot: cfg.diagnostics.then(|| state.u.clone()),
    });

    // Cached stiffness images and Gram matrix of the search basis (the
    // growing policy extends them incrementally).
    let mut kw: Vec<Vec<f64>> = state.w.iter().map(|wj| p.k.spmv(wj)).collect();
    let mut a_hat = stiffness_gram(&state.w, &kw);
    let mut converged = false;

    while state.k < cfg.max_outer && !converged {
        let t_it = Instant::now();
        let corrections =
            block_correction(p, d, Some(cs), &state.u, &state.lambdas, &rhos)?;
        match cfg.subspace_policy {
            SubspacePolicy::FixedTwoS => {
                let mut candidates = state.u.clone();
                candidates.extend(corrections);
                let w = m_orthonormalize(&candidates, &p.m)?;
                if w.len() < cfg.s {
                    return Err(Error::Degeneracy(format!(
                        "search subspace collapsed to rank {} (< {})",
                        w.len(),
                        cfg.s
                    )));
                }
                state.w = w;
                kw = state.w.iter().map(|wj| p.k.spmv(wj)).collect();
                a_hat = stiffness_gram(&state.w, &kw);
            }
            SubspacePolicy::Growing => {
                let added = m_orthonormalize_against(&state.w, &corrections, &p.m)?;
                let n_old = state.w.len();
                for t in added {
                    kw.push(p.k.spmv(&t));
                    state.w.push(t);
                }
                a_hat = extend_stiffness_gram(&a_hat, &state.w, &kw, n_old);
            }
        }
        let (vals, z) = dense_sym_eig(&a_hat)?;
        let new_u = assemble_ritz_vectors(&state.w, &z, cfg.s);
        let new_lambdas = vals[..cfg.s].to_vec();
        for (i, (&nl, &ol)) in new_lambdas.iter().zip(&state.lambdas).enumerate() {
            assert!(
                nl <= ol + MONOTONE_SLACK,
                "Ritz value {i} increased from {ol} to {nl}; the search \
                 subspace no longer spans the previous Ritz vectors"
            );
        }
        let sum_delta: f64 = new_lambdas
            .iter()
            .zip(&state.lambdas)
            .map(|(n, o)| (n - o).abs())
            .sum();
        state.u = new_u;
        state.lambdas = new_lambdas;
        state.k += 1;
        rhos = block_residuals(p, &state.u, &state.lambdas);
        state.history.push(IterationRecord {
            k: state.k,
            lambdas: state.lambdas.clone(),
            sum_delta: Some(sum_delta),
            wall_ms: t_it.elapsed().as_secs_f64() * 1e3,
            res_bnorms: Some(residual_bnorms(p, &rhos)?),
            u_snapshot: cfg.diagnostics.then(|| state.u.clone()),
        });
        converged = sum_delta < cfg.tol;
    }

    Ok(EigResult {
        lambdas: state.lambdas.clone(),
        u: state.u.clone(),
        iterations: state.k,
        converged,
        history: state.history,
    })
}
