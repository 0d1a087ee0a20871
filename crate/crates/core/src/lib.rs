//! Hybridizable discontinuous Galerkin methods for the 2-D steady diffusion
//! problem `q + grad u = 0`, `div q = f`, `u = 0` on the boundary, with scalar
//! (Dirichlet-type), vector (Neumann-type) or edgewise-mixed hybrid unknowns.

pub mod error;
pub mod fem;
pub mod mesh;
pub mod par;
pub mod projections;
pub mod schemes;
pub mod solver;
pub mod study;
pub mod verify;

pub use error::{HdgError, Result};
