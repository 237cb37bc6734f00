//! Robust flexibility assessment for heat-pump demand response.

mod error;
pub mod constraints;
pub mod control;
pub mod lp;
pub mod robust;
pub mod sim;
pub mod thermal;

pub use error::{Error, Result};
