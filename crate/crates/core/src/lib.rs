//! Joint diagonalization of almost commuting symmetric matrices.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constrained;
pub mod cost;
pub mod error;
pub mod ica;
pub mod jacobi;
pub mod matcore;
pub mod metrics;
pub mod randgen;
pub mod solver;
pub mod sphere;
pub mod vjd;

pub use error::{Error, Result};
pub use matcore::{MatrixTuple, Spectrum, SymMatrix};
