//! Mixed-precision partial eigenvalue and singular value solvers built on the
//! orthogonalization-free Rayleigh-Ritz projection.
//!
//! Low-precision arithmetic is emulated: values live in `f64` containers and
//! are rounded into `f16` or `f32` after every operation, as described by a
//! [`PrecisionPolicy`]. Bases come from Gram-Schmidt variants, the Arnoldi
//! process or the inner-product-free Hessenberg process, and are projected
//! either classically (`Q'AQ`) or through the generalized pencil
//! `(U'AU, U'U)`.

pub mod basis;
pub mod driver;
pub mod error;
pub mod experiment;
pub mod matrix;
pub mod precision;
pub mod projection;
pub mod smallsolve;

pub use basis::{BasisFactorization, BasisMethod, HessLayout};
pub use driver::{IterConfig, ProjectionKind};
pub use error::{OfrrError, Result};
pub use matrix::{CsrMatrix, DenseMatrix, KernelConfig, LinearOperator, PointSet};
pub use precision::{FpFormat, PrecisionPolicy};
pub use projection::{RitzKind, RitzSet};
pub use smallsolve::EigResult;
