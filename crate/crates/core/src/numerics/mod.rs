//! Dense linear algebra and training primitives shared by every model.

mod activation;
mod adam;
mod gradcheck;
mod lstsq;
mod matrix;

pub use activation::{sigmoid, Activation};
pub use adam::{AdamConfig, DecayScope, ParamTensor, Parameterized};
pub use gradcheck::{grad_check, GradCheckReport};
pub use lstsq::{least_squares_solve, residual_norm, symmetric_eigen, LeastSquaresSolution, DEGENERACY_THRESHOLD};
pub use matrix::{axpy, dot, matmul, Matrix};
