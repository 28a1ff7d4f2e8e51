#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Numerical toolkit for the weighted Hardy–Littlewood–Sobolev inequality on
//! `ℝ^{n-k} × ℝ^n`: parameter validation, radial discretization of the
//! extension/restriction operator pair, rearrangement utilities, extremal
//! constant estimation and divergence probes.

pub mod cli;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod optimize;
pub mod params;
pub mod probes;
pub mod quad;
pub mod rearrange;

pub use error::{Error, Result};
pub use params::{derive_exponents, validate, DerivedExponents, HlsParams, Regime, ValidityReport, Violation};
