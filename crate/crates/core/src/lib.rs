//! Finite-horizon stochastic H∞ control of Markov regime-switching linear systems
//! under partial information.
//!
//! The controller observes one Brownian motion `W` and the regime chain `α`; the
//! disturbance additionally sees a second Brownian motion `W̄`. The crate solves the
//! coupled Riccati systems of the associated soft-constrained zero-sum LQ game,
//! synthesizes its closed-loop saddle point, simulates the filtered/difference state
//! dynamics and certifies the saddle and H∞ properties by Monte Carlo.

pub mod chain;
pub mod error;
pub mod eval;
pub mod gains;
pub mod grid;
mod kernel;
pub mod linalg;
pub mod model;
pub mod policy;
pub mod riccati;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
