//! Trajectory-based CO2 estimation for intercity road networks.
//!
//! The crate turns per-second vehicle trajectories into monthly and annual
//! CO2 totals under several estimators (a distance-based macro benchmark and
//! an instantaneous speed/acceleration model), adjusts them for fleet
//! composition, cold months and seasonal demand, and evaluates electric
//! vehicle adoption scenarios against charging infrastructure cost.
//!
//! Module map:
//!
//! - [`trajectory`]: CSV ingestion, validation, OD grouping, distance and VMT.
//! - [`synth`]: deterministic synthetic trajectories for desk-scale runs.
//! - [`micro`]: instantaneous emission polynomial and coefficient tables.
//! - [`fleet`]: vehicle-type catalog, baseline rate and type factors.
//! - [`calendar`]: month profiles and demand-factor fitting from station counts.
//! - [`pipeline`]: the eight-variant monthly estimator matrix.
//! - [`scenarios`]: adoption scenarios and CO2 savings.
//! - [`econ`]: energy demand, charger share and benefit/cost ratios.
//! - [`report`]: config-driven orchestration used by the command-line tool.

// `!(x > 0.0)` is the intended way to reject NaN alongside non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calendar;
pub mod config;
pub mod econ;
pub mod error;
pub mod fixtures;
pub mod fleet;
pub mod ids;
pub mod io;
pub mod micro;
pub mod pipeline;
pub mod report;
pub mod scenarios;
pub mod seed;
pub mod synth;
pub mod trajectory;
pub mod units;

pub use error::{Error, Result};
