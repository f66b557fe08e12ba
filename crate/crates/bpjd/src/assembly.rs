//! Finite element assembly of the Laplace stiffness and mass matrices.
//!
//! Homogeneous Dirichlet conditions are imposed by elimination: only free
//! dofs appear in the assembled matrices. Element contributions are
//! accumulated through the deterministic triplet builder in element
//! order, so repeated assemblies are bitwise identical.

use crate::error::{Error, Result};
use crate::linalg::{dot, CsrMatrix};
use crate::mesh::StructuredMesh;
use std::sync::Arc;

/// Discretized eigenvalue problem `K u = lambda M u` on the free dofs of
/// a mesh.
#[derive(Debug, Clone)]
pub struct FeProblem {
    /// Stiffness matrix on free dofs.
    pub k: CsrMatrix,
    /// Mass matrix on free dofs.
    pub m: CsrMatrix,
    /// The mesh the matrices were assembled on.
    pub mesh: Arc<StructuredMesh>,
    /// Number of free dofs (matrix dimension).
    pub n_free: usize,
}

/// Assembles linear triangular elements on a 2D mesh.
///
/// Uses the general-coordinate formulas: with triangle vertices
/// `(x_i, y_i)` and twice-area `det`, the stiffness couples the gradient
/// coefficient vectors `b` and `c`, and the mass matrix is the exact
/// integral `area/12 * (1 + delta_ij)`.
pub fn assemble_p1(mesh: &Arc<StructuredMesh>) -> Result<FeProblem> {
    if mesh.spec.dim != 2 {
        return Err(Error::Config(format!(
            "triangular assembly needs a 2D mesh, got a {}D domain",
            mesh.spec.dim
        )));
    }
    let mut kt = Vec::new();
    let mut mt = Vec::new();
    for el in &mesh.elements {
        let p0 = mesh.nodes[el[0]];
        let p1 = mesh.nodes[el[1]];
        let p2 = mesh.nodes[el[2]];
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]);
        let area = 0.5 * det;
        assert!(area > 0.0, "degenerate or inverted triangle");
        let bb = [p1[1] - p2[1], p2[1] - p0[1], p0[1] - p1[1]];
        let cc = [p2[0] - p1[0], p0[0] - p2[0], p1[0] - p0[0]];
        for a in 0..3 {
            let Some(ra) = mesh.free_dof_map[el[a]] else {
                continue;
            };
            for b in 0..3 {
                let Some(rb) = mesh.free_dof_map[el[b]] else {
                    continue;
                };
                let ke = (bb[a] * bb[b] + cc[a] * cc[b]) / (4.0 * area);
                let me = area / 12.0 * if a == b { 2.0 } else { 1.0 };
                kt.push((ra, rb, ke));
                mt.push((ra, rb, me));
            }
        }
    }
    let n = mesh.n_free;
    Ok(FeProblem {
        k: CsrMatrix::from_triplets(n, n, &kt),
        m: CsrMatrix::from_triplets(n, n, &mt),
        mesh: Arc::clone(mesh),
        n_free: n,
    })
}

/// Assembles trilinear hexahedral elements on a 3D mesh with a 2-point
/// Gauss rule per axis.
///
/// On the axis-aligned cells used here the rule integrates both the mass
/// and the stiffness integrands exactly. Local node order matches the
/// mesh convention `index = 4*dz + 2*dy + dx`.
pub fn assemble_q1_3d(mesh: &Arc<StructuredMesh>) -> Result<FeProblem> {
    if mesh.spec.dim != 3 {
        return Err(Error::Config(format!(
            "hexahedral assembly needs a 3D mesh, got a {}D domain",
            mesh.spec.dim
        )));
    }
    let gp = 1.0 / 3.0f64.sqrt();
    // Reference-cube corner signs in local node order.
    let signs: Vec<[f64; 3]> = (0..8)
        .map(|a| {
            [
                if a & 1 == 1 { 1.0 } else { -1.0 },
                if a & 2 == 2 { 1.0 } else { -1.0 },
                if a & 4 == 4 { 1.0 } else { -1.0 },
            ]
        })
        .collect();
    let mut kt = Vec::new();
    let mut mt = Vec::new();
    for el in &mesh.elements {
        let lo = mesh.nodes[el[0]];
        let hi = mesh.nodes[el[7]];
        let h = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        assert!(h.iter().all(|&x| x > 0.0), "degenerate hexahedron");
        let det_j = h[0] * h[1] * h[2] / 8.0;
        let inv_j = [2.0 / h[0], 2.0 / h[1], 2.0 / h[2]];
        let mut ke = [[0.0f64; 8]; 8];
        let mut me = [[0.0f64; 8]; 8];
        for gz in [-gp, gp] {
            for gy in [-gp, gp] {
                for gx in [-gp, gp] {
                    let xi = [gx, gy, gz];
                    let mut n_val = [0.0f64; 8];
                    let mut n_grad = [[0.0f64; 3]; 8];
                    for a in 0..8 {
                        let s = signs[a];
                        let f = [
                            0.5 * (1.0 + s[0] * xi[0]),
                            0.5 * (1.0 + s[1] * xi[1]),
                            0.5 * (1.0 + s[2] * xi[2]),
                        ];
                        n_val[a] = f[0] * f[1] * f[2];
                        n_grad[a] = [
                            0.5 * s[0] * f[1] * f[2] * inv_j[0],
                            f[0] * 0.5 * s[1] * f[2] * inv_j[1],
                            f[0] * f[1] * 0.5 * s[2] * inv_j[2],
                        ];
                    }
                    for a in 0..8 {
                        for b in 0..8 {
                            me[a][b] += n_val[a] * n_val[b] * det_j;
                            ke[a][b] += dot(&n_grad[a], &n_grad[b]) * det_j;
                        }
                    }
                }
            }
        }
        for a in 0..8 {
            let Some(ra) = mesh.free_dof_map[el[a]] else {
                continue;
            };
            for b in 0..8 {
                let Some(rb) = mesh.free_dof_map[el[b]] else {
                    continue;
                };
                kt.push((ra, rb, ke[a][b]));
                mt.push((ra, rb, me[a][b]));
            }
        }
    }
    let n = mesh.n_free;
    Ok(FeProblem {
        k: CsrMatrix::from_triplets(n, n, &kt),
        m: CsrMatrix::from_triplets(n, n, &mt),
        mesh: Arc::clone(mesh),
        n_free: n,
    })
}

/// Assembles the element type matching the mesh dimension.
pub fn assemble(mesh: &Arc<StructuredMesh>) -> Result<FeProblem> {
    match mesh.spec.dim {
        2 => assemble_p1(mesh),
        3 => assemble_q1_3d(mesh),
        d => Err(Error::Config(format!("unsupported dimension {d}"))),
    }
}

/// Rayleigh quotient `u^T K u / u^T M u`.
pub fn rayleigh_quotient(p: &FeProblem, u: &[f64]) -> f64 {
    let ku = p.k.spmv(u);
    let mu = p.m.spmv(u);
    dot(u, &ku) / dot(u, &mu)
}
