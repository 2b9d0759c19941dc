//! Projectively invariant quantization on foliated charts.
//!
//! The pipeline builds the normal Cartan connection of a projective class of
//! adapted (or foliated) connections on a trivialized Cartan bundle, then
//! evaluates the quantization formula through invariant differentiation.

pub mod cartan;
pub mod chart;
pub mod error;
pub mod exprlang;
pub mod jetgroup;
pub mod mat;
pub mod quant;
pub mod symtensor;
pub mod taylor;
pub mod verify;

pub use error::{Error, Result};
