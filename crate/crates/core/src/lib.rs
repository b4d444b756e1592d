//! Generalized functionally generated portfolios.
//!
//! The crate simulates Itô markets on log prices, builds portfolios from
//! generating functions of numéraire-relative log prices, checks the pathwise
//! master equation against a discrete self-financing wealth oracle, and runs
//! the statistical-arbitrage, immunization and mirror-portfolio
//! constructions built on top of it.

pub mod cli;
pub mod error;
pub mod fgp;
pub mod immunize;
pub mod market;
pub mod numerics;
pub mod portfolio;
pub mod report;
pub mod statarb;
pub mod units;
pub mod verify;

pub use error::{FgpError, Result};
