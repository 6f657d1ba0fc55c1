//! Frequency-domain solvers for the convolution equations of
//! measurement-error models.

pub mod dist;
pub mod grid;
pub mod harness;
pub mod io;
pub mod kappa;
pub mod moments;
pub mod regularization;
pub mod solvers;
pub mod support;

pub use grid::{Grid, GridFn, C64};
