//! Digital-twin assisted closed-loop bandwidth management over a simulated
//! end-to-end link.
//!
//! The pipeline: bandwidth telemetry ([`traffic`]) trains a memory-augmented
//! BiLSTM state predictor ([`predictor`]); a tabular Q-learning agent
//! ([`agent`]) maps predicted bandwidth states to shaping rates; the twin
//! ([`twin`]) closes the loop against a simulated link ([`netsim`]) and runs
//! what-if simulations for unseen states; [`harness`] wires up scenarios,
//! technique comparisons and reports.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod error;
pub mod harness;
pub mod netsim;
pub mod predictor;
pub mod rng;
pub mod traffic;
pub mod twin;

pub use error::{Error, Result};
