//! Dense symmetric linear algebra: square roots, pseudo-inverses, SPD solves.

mod eigen;
mod mat;

pub use eigen::{
    check_psd, cholesky, components, pseudo_inverse, pseudo_inverse_with, psd_sqrt, psd_sqrt_with,
    rank, spd_inverse, spd_solve, sym_eigen, EigenPart, KernelConfig, SymEigen,
};
pub(crate) use eigen::{spectral_adjoint, UnionFind};
pub use mat::{dot, Mat, SparseVec, SymMatrix};
