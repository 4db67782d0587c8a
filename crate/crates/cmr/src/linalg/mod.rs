//! Dense linear algebra kernel: matrices, SVD, symmetric eigendecomposition,
//! and Chebyshev polynomial evaluation. All operations are pure functions
//! with deterministic results for fixed inputs.

mod chebyshev;
mod decomp;
mod matrix;

pub use chebyshev::{chebyshev_t_scalar, chebyshev_t_upto, chebyshev_u_scalar, chebyshev_u_upto};
pub use decomp::{
    scale_rows,
    apply_symmetric_function, gram, orthonormal_rows, svd, svd_with_hint, symmetric_eigen,
    top_singular_triple, SpectralDecomposition,
};
pub use matrix::{vec_dot, vec_norm, Matrix};
