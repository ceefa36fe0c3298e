//! Pipelines, simulation studies and the `hrshift` command line.

pub mod basis;
pub mod blc;
pub mod cli;
pub mod config;
pub mod error;
pub mod procedure1;
pub mod procedure2;
pub mod sim;
pub mod study;
pub mod table;

pub use error::{HarnessError, Result};
