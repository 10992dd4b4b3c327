//! Closed-loop artificial pancreas simulation toolkit.
//!
//! * [`controller`]: the population-tuned basal/bolus dosing law.
//! * [`patient`]: virtual subject ODE model, sensor and integration.
//! * [`protocol`]: seeded 52-week lifestyle scenarios.
//! * [`simulator`]: closed-loop runs, population sampling, parallel trials.
//! * [`metrics`]: time-in-range statistics and glycemic targets.
//! * [`bolus_opt`]: optimal meal bolus by single shooting.
//! * [`report`]: CSV/JSON output files.

// Negated comparisons deliberately treat NaN as invalid.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bolus_opt;
pub mod controller;
pub mod error;
pub mod integrate;
pub mod metrics;
pub mod par;
pub mod patient;
pub mod protocol;
pub mod report;
pub mod simulator;
pub mod units;

pub use error::{Error, Result};
