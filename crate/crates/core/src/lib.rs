//! Optimal screening-at-entry synthesis for an SIS epidemic in a closed
//! population with constant turnover.

pub mod cli;
pub mod curves;
pub mod error;
pub mod flow;
pub mod model;
pub mod oracle;
pub mod pontryagin;
pub mod synthesis;
pub mod value;
pub mod verify;

pub use error::{Error, Result};
