//! Tensor-product Q1 finite elements for anisotropic diffusion problems
//! `-div(A_eps grad u) = f` on the unit square and cube, together with the
//! limit problem obtained as `eps -> 0`.

// `!(x > 0.0)` is used on purpose to reject NaN alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod assembly;
pub mod error;
pub mod harness;
pub mod mesh;
pub mod problems;
pub mod quadrature;
pub mod solver;
pub mod space;
pub mod sparse;

pub use error::{Error, Result};
pub use mesh::{Grid1D, TensorMesh};
pub use space::{DofMap, NodalField};
pub use sparse::SparseMatrix;
