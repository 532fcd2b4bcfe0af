//! Bandits with movement costs on finite metric spaces.
//!
//! Metrics are embedded into hierarchically well-separated trees, on which a
//! slowly-moving exponential-weights policy plays so that expensive moves are
//! rare. The [`harness`] module drives experiments and checks.

pub mod error;
pub mod harness;
pub mod hst;
pub mod metric;
pub mod rng;
pub mod smb;

pub use error::{Error, Result};
