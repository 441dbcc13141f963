//! Simulation and optimisation engine for a live-streaming attention market.
//!
//! Viewers pick streamers through a multinomial-logit rule whose utility carries
//! a network-effect term, streamers move their content quality toward the profit
//! first-order condition, and the platform studies the resulting steady states,
//! their local stability, market concentration, welfare and the optimal static
//! and dynamic allocation of traffic.

pub mod allocation;
pub mod cli;
pub mod control;
pub mod dynamics;
pub mod eigen;
pub mod equilibrium;
pub mod error;
pub mod market;
pub mod output;
pub mod par;
pub mod scenario;
pub mod stability;
pub mod sweep;
pub mod welfare;

pub use error::{MarketError, Result};
pub use market::{CostSpec, MarketParams, MarketState, QualityLaw, UtilityVector};
