//! Solver and verification toolkit for the semilinear elliptic problem on the
//! half-space `R^n_+` with the nonlinear dynamic boundary condition
//! `∂_t u + ∂_ν u = u|u|^{p2-1}`, `-Δu = u|u|^{p1-1}`, posed through its
//! integral reformulation in time-weighted Morrey spaces.

// `!(x > 0.0)` is used deliberately so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod conv;
pub mod data;
pub mod error;
pub mod fields;
pub mod kernels;
pub mod morrey;
pub mod operators;
pub mod par;
pub mod params;
pub mod quadrature;
pub mod report;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
