//! Privacy-cost energy management for a smart meter with a finite battery
//! and a renewable source that fully recharges the battery when it fires.
//!
//! The observer (utility provider) sees grid purchases and renewable
//! arrivals; the controller randomizes purchases to trade information
//! leakage about household demand against the cost of grid energy.

pub mod bellman;
pub mod belief;
pub mod bound;
pub mod config;
pub mod control;
pub mod error;
pub mod model;
pub mod oracle;
pub mod policies;
pub mod sim;
pub mod solver_finite;
pub mod solver_infinite;
pub mod sweep;
pub mod table;
pub mod tree;

pub use belief::{ActionRule, Belief, BeliefGrid};
pub use error::{Error, Result};
pub use model::{JointState, Renewable, SystemConfig};
