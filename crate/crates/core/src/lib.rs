//! Simulator and protocol library for the distributed experts problem.
//!
//! A coordinator picks one of `n` experts per day; each expert's cost is
//! split over `s` servers and combined by an aggregation function. Protocols
//! estimate the aggregated costs with few words of communication, under either
//! private channels or a shared broadcast channel, and every word is counted.

pub mod aggregation;
pub mod config;
pub mod costgen;
pub mod error;
pub mod harness;
pub mod meta;
pub mod netsim;
pub mod protocols;
pub mod rng;

pub use aggregation::{aggregate, gamma_norm, inclusion_probability, AggregationSpec};
pub use config::{
    validate_config, BaseProtocol, DayLocalCosts, ExperimentConfig, ExpertId, ProtocolId, ResolvedParams, ServerId,
};
pub use costgen::{CostStream, DiffDistCase, StreamKind, StreamSpec};
pub use error::{ConfigIssue, ConfigIssues, Error, Result};
pub use harness::{run_experiment, run_trial, ExperimentSummary, RegretRecord, TrialOptions, TrialResult};
pub use netsim::{CommLedger, CommModel};
pub use rng::{derive_stream, DayStreams, RngStream, Role};
