//! Exact policy optimization on problems with closed-form solutions.
//!
//! Tabular MDPs ([`mdp`], [`measures`], [`optimizers`]) and linear-quadratic
//! regulators ([`lqr`]) under the discounted, total (discounted with
//! `gamma = 1` and an absorbing terminal state) and average setups, plus the
//! independent checks in [`oracle`].

pub mod error;
pub mod linalg;
pub mod lqr;
pub mod mdp;
pub mod measures;
pub mod optimizers;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
