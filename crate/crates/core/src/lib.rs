//! Numerical laboratory for ancient solutions of the cylindrical Yamabe flow
//! built by merging two traveling-wave solitons.

// negated comparisons are how NaN inputs are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// stencil loops read several arrays at the same index
#![allow(clippy::needless_range_loop)]

pub mod acceptance;
pub mod ancient;
pub mod config;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod model;
pub mod numerics;
pub mod ode;
pub mod pde;
pub mod soliton;

pub use error::{Error, Result};
