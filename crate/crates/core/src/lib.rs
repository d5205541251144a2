//! Multi-UAV wireless network simulator with learning controllers.
//!
//! UAVs act as aerial base stations over ground users. An echo state network
//! forecasts user positions, multi-agent Q-learning steers the UAVs in 3D and
//! picks their transmit power, and a cache-enabled scenario compares a
//! reservoir-predicted caching policy against Q-learning baselines.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod channel;
pub mod error;
pub mod harness;
pub mod mobility;
pub mod qtable;
pub mod reservoir;
pub mod seed;
pub mod trajectory;
pub mod world;

pub use channel::{Association, ChannelParams, LinkBudget, LossMode, RateReport};
pub use error::{Error, Result};
pub use world::{Bounds, CellIndex, Clock, Grid, Position3, Scenario, UavState, UserState, Violation};
