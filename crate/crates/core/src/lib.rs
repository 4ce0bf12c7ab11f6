//! Hierarchical clustered federated learning simulator.

pub mod data;
pub mod error;
pub mod fdc;
pub mod fedcore;
pub mod model;
pub mod numerics;
pub mod report;
pub mod sim;

pub use error::{Error, Result};
