//! Accelerated cyclic reduction (ACR) for block-tridiagonal systems arising
//! from 7-point discretizations of 3D elliptic PDEs.
//!
//! Every formally dense block produced by cyclic reduction is stored as a
//! hierarchical matrix over a planar cluster tree. The accuracy of the
//! low-rank blocks (`epsilon`), the admissibility weight (`eta`) and the leaf
//! size (`n_min`) control how good (and how expensive) the resulting
//! preconditioner is.
//!
//! All numerical code is generic over [`Real`] (implemented for `f32` and
//! `f64`); the `*F64` aliases below cover the common case.

pub mod acr;
pub mod cluster;
pub mod cr;
mod dense;
mod error;
pub mod hmatrix;
pub mod krylov;
pub mod lowrank;
pub mod problems;
mod scalar;
pub mod sparse;

pub use acr::{AcrOptions, AcrPreconditioner, LevelStats, SolveStats};
pub use cluster::{
    build_block_tree, build_cluster_tree, is_admissible, Admissibility, BlockKind, BlockNode, BlockTree, BoundingBox,
    Cluster, ClusterTree, HOptions,
};
pub use cr::exact_cr_solve;
pub use error::{AcrError, Result};
pub use hmatrix::{footprint, h_add, h_invert, h_matvec, h_mul, rank_stats, HMatrix, LeafInfo, RankStats};
pub use krylov::{cg, gmres, FnOperator, Identity, KrylovOptions, KrylovResult, LinearOperator};
pub use lowrank::{recompress_sum, truncated_svd, DenseBlock, LowRankBlock};
pub use problems::{
    convdiff_system, flow_eval, frequency_for_ppw, gaussian_random_field, harmonic_mean, helmholtz_exact,
    helmholtz_system, points_per_wavelength, poisson_system, velocity_eval, BlockTridiagonalSystem, CoefficientField,
    FieldKind, GaussianSampler, Grid,
};
pub use scalar::Real;
pub use sparse::CsrMatrix;

pub type HMatrixF64 = HMatrix<f64>;
pub type HMatrixF32 = HMatrix<f32>;
pub type LowRankBlockF64 = LowRankBlock<f64>;
pub type AcrPreconditionerF64 = AcrPreconditioner<f64>;
pub type AcrPreconditionerF32 = AcrPreconditioner<f32>;
pub type BlockTridiagonalSystemF64 = BlockTridiagonalSystem<f64>;
pub type CsrMatrixF64 = CsrMatrix<f64>;
pub type KrylovResultF64 = KrylovResult<f64>;
