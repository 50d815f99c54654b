//! Synthetic individual-level population data from aggregate census-style
//! tables.
//!
//! The pipeline fits a nonnegative integer counts matrix to a set of
//! marginal tables per census block, expands it into person records,
//! validates the fit against the input tables and against external
//! microdata, and measures how differential-privacy noise on the tables
//! distorts derived tract-level percentages.

pub mod error;
pub mod matrix;
pub mod privacy;
pub mod rng;
pub mod schema;
pub mod solver;
pub mod synthesis;
pub mod tables;
pub mod validation;

pub use error::{Error, Result};
