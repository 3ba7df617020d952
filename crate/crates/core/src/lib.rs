//! Per-record zero-concentrated differential privacy for aggregate queries
//! over skewed tabular data.

pub mod accountant;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod mechanisms;
pub mod optimize;
pub mod splitting;
pub mod table;
pub mod workload;

pub use error::{Error, Result};
