//! Trajectory-independent model-based reconstruction for field-free-point
//! magnetic particle imaging.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cg;
pub mod config;
pub mod core_stage;
pub mod denoise;
pub mod error;
pub mod fft;
pub mod forward;
pub mod grid;
pub mod interp;
pub mod io;
pub mod phantom;
pub mod physics;
pub mod pipeline;
pub mod pnp;
pub mod preprocess;
pub mod profile;
pub mod scanner;

pub use error::{Error, Result};
pub use grid::{ConcentrationImage, GridGeometry, Image};
