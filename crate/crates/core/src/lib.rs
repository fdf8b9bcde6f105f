//! Teugels martingale bases, BSDE and PDIE solvers for multidimensional pure-jump Lévy models.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bsde;
pub mod cli;
pub mod config;
pub mod error;
pub mod levy_model;
pub mod multi_index;
pub mod orthobasis;
pub mod pdie;
pub mod pricing;
pub mod quadrature;
pub mod simulator;

pub use error::{Error, Result};
pub use multi_index::MultiIndex;
