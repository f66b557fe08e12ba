//! Coarse spectral component of the two-level preconditioner.
//!
//! The coarse space is the finite element space of the coarsest mesh,
//! carried to the fine level by the prolongation. Its stiffness and mass
//! matrices are Galerkin restrictions of the fine matrices, which agree
//! with direct coarse assembly because the spaces are nested. The first
//! eigenpairs of the coarse pencil are solved densely once; coarse solves
//! during the iteration then run a conjugate gradient deflated by those
//! eigenvectors, so the shifted coarse operator is applied only on the
//! subspace where it is positive definite.

use crate::assembly::FeProblem;
use crate::error::{Error, Result};
use crate::linalg::{
    cg_solve, dense_generalized_eig, CsrMatrix, DenseMatrix,
};
use crate::mesh::{prolongation, StructuredMesh};

/// Largest matrix dimension accepted by the dense eigensolvers.
pub const DENSE_EIG_LIMIT: usize = 4000;

/// Relative tolerance of the inner conjugate gradient solves.
pub(crate) const CG_TOL: f64 = 1e-12;

/// Spectral data of the coarse space.
#[derive(Debug, Clone)]
pub struct CoarseSpectral {
    /// Galerkin coarse stiffness.
    pub k_h: CsrMatrix,
    /// Galerkin coarse mass.
    pub m_h: CsrMatrix,
    /// Prolongation from coarse to fine free dofs.
    pub p: CsrMatrix,
    /// First `s + 1` coarse eigenvalues, ascending.
    pub eigvals: Vec<f64>,
    /// First `s` coarse eigenvectors (coarse dofs, mass-orthonormal).
    pub eigvecs: Vec<Vec<f64>>,
    /// Number of deflated eigenpairs.
    pub s: usize,
    pt: CsrMatrix,
}

/// Galerkin restriction of a fine matrix pair through a prolongation.
pub fn galerkin_pair(
    p: &CsrMatrix,
    k: &CsrMatrix,
    m: &CsrMatrix,
) -> (CsrMatrix, CsrMatrix) {
    let pt = p.transpose();
    (pt.matmul(&k.matmul(p)), pt.matmul(&m.matmul(p)))
}

/// First `count` eigenpairs of the coarse pencil `K_H u = lambda M_H u`,
/// solved densely. Eigenvectors are mass-orthonormal.
pub fn coarse_eigs(
    k_h: &CsrMatrix,
    m_h: &CsrMatrix,
    count: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = k_h.n_rows;
    if n > DENSE_EIG_LIMIT {
        return Err(Error::Config(format!(
            "coarse problem has {n} dofs, above the dense eigensolver limit \
             {DENSE_EIG_LIMIT}; use a coarser mesh"
        )));
    }
    if count > n {
        return Err(Error::Config(format!(
            "requested {count} coarse eigenpairs but the coarse space has \
             only {n} dofs; enlarge the coarse mesh"
        )));
    }
    let (w, v) = dense_generalized_eig(
        &DenseMatrix::from_csr(k_h),
        &DenseMatrix::from_csr(m_h),
    )?;
    let vecs = (0..count).map(|j| v.col(j)).collect();
    Ok((w[..count].to_vec(), vecs))
}

/// Builds the coarse spectral data for a fine problem: Galerkin pencil,
/// its first `s + 1` eigenpairs, and the prolongation pair.
///
/// A multiple coarse eigenvalue may straddle the cut at `s`: the
/// deflated solves stay well defined because the solver's shifts are
/// strictly below the coarse values (fine and initialization spaces
/// refine the coarse one), and `coarse_deflated_solve` still rejects any
/// shift that reaches `eigvals[s]` at apply time.
pub fn build_coarse_spectral(
    p: &FeProblem,
    coarse: &StructuredMesh,
    s: usize,
) -> Result<CoarseSpectral> {
    if s == 0 {
        return Err(Error::Config("s must be at least 1".to_string()));
    }
    let prol = prolongation(coarse, &p.mesh)?;
    let (k_h, m_h) = galerkin_pair(&prol, &p.k, &p.m);
    let (eigvals, mut eigvecs) = coarse_eigs(&k_h, &m_h, s + 1)?;
    eigvecs.truncate(s);
    let pt = prol.transpose();
    Ok(CoarseSpectral {
        k_h,
        m_h,
        p: prol,
        eigvals,
        eigvecs,
        s,
        pt,
    })
}

/// Applies the deflated coarse solve: restricts the fine residual to the
/// coarse space, solves the shifted coarse operator in the complement of
/// the deflated eigenvectors, and prolongs the result back.
///
/// The shift must stay below the `(s+1)`-th coarse eigenvalue; otherwise
/// the operator is indefinite even on the deflated complement and the
/// call fails with `ShiftSafety` before touching the solver.
pub fn coarse_deflated_solve(
    cs: &CoarseSpectral,
    shift: f64,
    fine_rhs: &[f64],
) -> Result<Vec<f64>> {
    if shift >= cs.eigvals[cs.s] {
        return Err(Error::ShiftSafety {
            component: "coarse".to_string(),
            shift,
        });
    }
    let rhs_h = cs.pt.spmv(fine_rhs);
    let n = rhs_h.len();
    let apply = |x: &[f64], out: &mut [f64]| {
        cs.k_h.spmv_into(x, out);
        let mx = cs.m_h.spmv(x);
        for (o, m) in out.iter_mut().zip(&mx) {
            *o -= shift * m;
        }
    };
    let (x_h, _report) = cg_solve(
        apply,
        &rhs_h,
        CG_TOL,
        10 * n,
        Some(&cs.eigvecs),
        Some(&cs.m_h),
    )?;
    Ok(cs.p.spmv(&x_h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, assemble_p1};
    use crate::linalg::{dot, norm2};
    use crate::mesh::{build_coarse_mesh, refine_uniform, DomainSpec};
    use std::sync::Arc;

    fn fine_problem(spec: &DomainSpec, n: usize, levels: usize) -> (StructuredMesh, FeProblem) {
        let coarse = build_coarse_mesh(spec, n).unwrap();
        let mut mesh = coarse.clone();
        for _ in 0..levels {
            mesh = refine_uniform(&mesh);
        }
        let p = assemble(&Arc::new(mesh)).unwrap();
        (coarse, p)
    }

    #[test]
    fn galerkin_restriction_equals_direct_coarse_assembly() {
        for spec in [
            DomainSpec::box2d(),
            DomainSpec::lshape2d(),
            DomainSpec::box3d(),
        ] {
            let (coarse, p) = fine_problem(&spec, 4, 1);
            let prol = prolongation(&coarse, &p.mesh).unwrap();
            let (k_h, m_h) = galerkin_pair(&prol, &p.k, &p.m);
            let direct = assemble(&Arc::new(coarse)).unwrap();
            let kd = DenseMatrix::from_csr(&direct.k);
            let kg = DenseMatrix::from_csr(&k_h);
            let md = DenseMatrix::from_csr(&direct.m);
            let mg = DenseMatrix::from_csr(&m_h);
            let ks = kd.frobenius();
            let ms = md.frobenius();
            for i in 0..kd.n_rows {
                for j in 0..kd.n_cols {
                    assert!(
                        (kd.get(i, j) - kg.get(i, j)).abs() <= 1e-12 * ks,
                        "{}: stiffness mismatch at ({i},{j})",
                        spec.name()
                    );
                    assert!(
                        (md.get(i, j) - mg.get(i, j)).abs() <= 1e-12 * ms,
                        "{}: mass mismatch at ({i},{j})",
                        spec.name()
                    );
                }
            }
        }
    }

    #[test]
    fn coarse_eigenpairs_satisfy_the_pencil() {
        let (coarse, p) = fine_problem(&DomainSpec::box2d(), 8, 1);
        let prol = prolongation(&coarse, &p.mesh).unwrap();
        let (k_h, m_h) = galerkin_pair(&prol, &p.k, &p.m);
        let (w, v) = coarse_eigs(&k_h, &m_h, 5).unwrap();
        assert!(w.windows(2).all(|x| x[0] <= x[1]));
        for (j, u) in v.iter().enumerate() {
            let ku = k_h.spmv(u);
            let mu = m_h.spmv(u);
            let mut res = 0.0f64;
            for i in 0..u.len() {
                res = res.max((ku[i] - w[j] * mu[i]).abs());
            }
            assert!(res <= 1e-10 * w[j].max(1.0), "pair {j} residual {res}");
            assert!((dot(u, &mu) - 1.0).abs() <= 1e-11, "pair {j} not normalized");
        }
        // first eigenvalue approximates the continuum value 2 from above
        assert!(w[0] > 2.0 && w[0] < 2.2, "lambda_1^H = {}", w[0]);
    }

    #[test]
    fn tensor_mesh_multiplets_are_exactly_multiple() {
        // On the cube the discrete pencil inherits the permutation
        // symmetry of the tensor construction, so the second eigenvalue
        // is exactly triple.
        let mesh = Arc::new(build_coarse_mesh(&DomainSpec::box3d(), 4).unwrap());
        let p = assemble(&mesh).unwrap();
        let (w, _) = coarse_eigs(&p.k, &p.m, 8).unwrap();
        for pair in [(1usize, 2usize), (2, 3), (4, 5), (5, 6)] {
            let rel = (w[pair.1] - w[pair.0]).abs() / w[pair.1];
            assert!(rel <= 1e-9, "positions {pair:?} differ by {rel}");
        }
        assert!((w[3] - w[4]).abs() / w[4] > 1e-3, "clusters are separated");
    }

    #[test]
    fn a_cut_through_a_cluster_still_yields_a_usable_solve() {
        let (coarse, p) = fine_problem(&DomainSpec::box3d(), 4, 1);
        // s = 6 cuts through the exactly-triple eigenvalue at positions
        // five to seven, leaving eigvals[5] == eigvals[6]
        let cs = build_coarse_spectral(&p, &coarse, 6).unwrap();
        assert_eq!(cs.eigvecs.len(), 6);
        assert_eq!(cs.eigvals.len(), 7);
        let tie = (cs.eigvals[6] - cs.eigvals[5]).abs() / cs.eigvals[6];
        assert!(tie <= 1e-12, "positions 6 and 7 are an exact multiplet");
        // shifts strictly below the tie keep the deflated solve definite
        let shift = 0.99 * cs.eigvals[5];
        let rhs: Vec<f64> = (0..p.n_free)
            .map(|i| ((i * 11 + 2) % 19) as f64 / 19.0 - 0.5)
            .collect();
        let x = coarse_deflated_solve(&cs, shift, &rhs).unwrap();
        assert!(norm2(&x).is_finite() && norm2(&x) > 0.0);
        // a shift at the tie is still rejected at apply time
        assert!(matches!(
            coarse_deflated_solve(&cs, cs.eigvals[6], &rhs),
            Err(Error::ShiftSafety { .. })
        ));
    }

    #[test]
    fn deflated_solve_matches_the_eigenbasis_expansion() {
        let (coarse, p) = fine_problem(&DomainSpec::box2d(), 4, 1);
        let s = 2usize;
        let cs = build_coarse_spectral(&p, &coarse, s).unwrap();
        // full coarse eigenbasis as an independent oracle
        let n_h = cs.k_h.n_rows;
        let (w, v) = coarse_eigs(&cs.k_h, &cs.m_h, n_h).unwrap();
        let shift = 0.5 * (cs.eigvals[s - 1] + cs.eigvals[s]);
        let rhs: Vec<f64> = (0..p.n_free)
            .map(|i| ((i * 13 + 5) % 17) as f64 / 17.0 - 0.5)
            .collect();
        let got = coarse_deflated_solve(&cs, shift, &rhs).unwrap();
        let rhs_h = cs.p.transpose().spmv(&rhs);
        let mut y = vec![0.0; n_h];
        for j in s..n_h {
            let c = dot(&v[j], &rhs_h) / (w[j] - shift);
            for (yi, vi) in y.iter_mut().zip(&v[j]) {
                *yi += c * vi;
            }
        }
        let want = cs.p.spmv(&y);
        let scale = norm2(&want).max(1.0);
        for (g, w2) in got.iter().zip(&want) {
            assert!((g - w2).abs() <= 1e-8 * scale, "{g} vs {w2}");
        }
    }

    #[test]
    fn deflated_solve_stays_stable_with_negative_deflated_modes() {
        // A shift above every deflated coarse eigenvalue makes the
        // shifted operator strongly negative on the whole deflated
        // subspace. Round-off leaks residual components into that
        // subspace during the inner conjugate gradient; unless the
        // residual is re-projected every iteration the leak grows
        // geometrically and the returned vector is garbage of enormous
        // magnitude. This pins the re-projection.
        let (coarse, p) = fine_problem(&DomainSpec::box2d(), 4, 2);
        let s = 5usize;
        let cs = build_coarse_spectral(&p, &coarse, s).unwrap();
        let n_h = cs.k_h.n_rows;
        let (w, v) = coarse_eigs(&cs.k_h, &cs.m_h, n_h).unwrap();
        let shift = 0.5 * (cs.eigvals[s - 1] + cs.eigvals[s]);
        assert!(shift > cs.eigvals[0], "shift sits above the deflated modes");
        let rhs: Vec<f64> = (0..p.n_free)
            .map(|i| ((i * 7 + 3) % 23) as f64 / 23.0 - 0.5)
            .collect();
        let got = coarse_deflated_solve(&cs, shift, &rhs).unwrap();
        let rhs_h = cs.p.transpose().spmv(&rhs);
        let mut y = vec![0.0; n_h];
        for j in s..n_h {
            let c = dot(&v[j], &rhs_h) / (w[j] - shift);
            for (yi, vi) in y.iter_mut().zip(&v[j]) {
                *yi += c * vi;
            }
        }
        let want = cs.p.spmv(&y);
        let scale = norm2(&want).max(1.0);
        for (g, w2) in got.iter().zip(&want) {
            assert!((g - w2).abs() <= 1e-8 * scale, "{g} vs {w2}");
        }
    }

    #[test]
    fn unsafe_shifts_are_rejected_before_solving() {
        let (coarse, p) = fine_problem(&DomainSpec::box2d(), 4, 1);
        let cs = build_coarse_spectral(&p, &coarse, 2).unwrap();
        let bad = cs.eigvals[2] + 0.1;
        match coarse_deflated_solve(&cs, bad, &vec![1.0; p.n_free]) {
            Err(Error::ShiftSafety { component, shift }) => {
                assert_eq!(component, "coarse");
                assert_eq!(shift, bad);
            }
            other => panic!("expected ShiftSafety, got {other:?}"),
        }
    }

    #[test]
    fn oversized_coarse_spaces_are_rejected() {
        let mesh = Arc::new(build_coarse_mesh(&DomainSpec::box2d(), 4).unwrap());
        let p = assemble_p1(&mesh).unwrap();
        assert!(matches!(
            coarse_eigs(&p.k, &p.m, p.n_free + 1),
            Err(Error::Config(_))
        ));
    }
}
