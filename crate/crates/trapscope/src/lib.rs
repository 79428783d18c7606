//! Discrete-state Markov models of multidimensional welfare mobility.
//!
//! The crate turns longitudinal household panels (income, health,
//! education, ... observed over repeated waves) into discrete-state
//! transition models and interrogates those models for persistence
//! structure: stationary distributions and potential landscapes, mixing
//! and escape times, mean first-passage times, mobility indices, shock
//! recovery, and counterfactual interventions. A deterministic synthetic
//! generator and a reproducible CLI pipeline sit on top.
//!
//! Modules are layered roughly bottom-up:
//!
//! - [`state_space`]: binning continuous/ordinal dimensions into a joint
//!   discrete state space.
//! - [`panel`]: CSV panel ingestion, run extraction, transition records.
//! - [`estimation`]: weighted MLE transition models, regularization,
//!   bootstrap spread, homogeneity and memory-length diagnostics.
//! - [`rng`]: keyed deterministic random streams used everywhere chance
//!   enters, so every result is reproducible from a single seed.

pub mod error;
pub mod estimation;
pub mod landscape;
pub mod metrics;
pub mod interventions;
pub mod panel;
pub mod pipeline;
pub mod rng;
pub mod shock;
pub mod synth;
pub mod state_space;

pub use error::{Error, Result};
