//! Finite element eigenvalue toolkit for the Laplacian on structured 2D
//! and 3D domains.
//!
//! The crate assembles P1 (triangles) and Q1 (hexahedra) discretizations
//! of the Dirichlet Laplacian on structured box and L-shaped meshes and
//! computes the first eigenpairs, multiple or clustered ones included,
//! with a block preconditioned Jacobi-Davidson iteration. The
//! preconditioner combines overlapping subdomain solves with a coarse
//! solve deflated by coarse eigenvectors, which makes the iteration
//! count nearly independent of the mesh size and robust to growing
//! numbers of subdomains. A diagnostics layer measures the error
//! against reference solutions and checks the theoretical bounds that
//! explain this behavior.
//!
//! The typical pipeline is:
//!
//! 1. [`mesh::build_coarse_mesh`] and [`mesh::refine_uniform`] build the
//!    nested mesh hierarchy;
//! 2. [`assembly::assemble`] produces the stiffness and mass matrices;
//! 3. [`decomp::build_decomposition`] grows overlapping subdomains from
//!    the coarse elements;
//! 4. [`coarse::build_coarse_spectral`] prepares the coarse-space data;
//! 5. [`solver::solve`] runs the eigensolver;
//! 6. [`diagnostics`] verifies the outcome.

pub mod assembly;
pub mod coarse;
pub mod decomp;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod solver;

pub use assembly::{assemble, FeProblem};
pub use coarse::{build_coarse_spectral, CoarseSpectral};
pub use decomp::{build_decomposition, overlap_layers_for_ratio, Decomposition};
pub use error::{Error, Result};
pub use mesh::{build_coarse_mesh, refine_uniform, DomainSpec, StructuredMesh};
pub use solver::{
    solve, EigResult, IterationRecord, SolverConfig, SolverState, SubspacePolicy,
};
