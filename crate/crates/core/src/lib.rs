//! Multi-step forecasting strategies with instance-level dynamic strategy selection.

pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod models;
pub mod seed;
pub mod selector;
pub mod strategies;

pub use error::{Error, Result};
