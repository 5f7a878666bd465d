//! Channel models, integral parametrices and index formulas for first-order
//! elliptic operators on manifolds with metric horns.

pub mod channels;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod homotopy;
pub mod index;
pub mod kernels;
pub mod oracle;
pub mod quad;
pub mod report;
pub mod warp;

pub use error::{Error, Result};
