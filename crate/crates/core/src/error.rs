use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// A single violated configuration invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigIssue {
    #[error("sampling budget b_e={budget} is outside [1, {n}]")]
    BudgetOutOfRange { budget: usize, n: usize },
    #[error("protocol {protocol} requires the broadcast model")]
    IncompatibleModel { protocol: String },
    #[error("bad exponent: {0}")]
    BadExponent(String),
    #[error("protocol {protocol} does not support aggregation {aggregation}")]
    UnsupportedAggregation { protocol: String, aggregation: String },
    #[error("{field} must be at least 1")]
    ZeroCount { field: &'static str },
    #[error("learning rate {field} must be positive and finite, got {value}")]
    BadLearningRate { field: &'static str, value: f64 },
    #[error("probe count k={k} exceeds server count s={s}")]
    ProbeOutOfRange { k: usize, s: usize },
    #[error("server budget b_s={budget} is outside [1, {s}]")]
    ServerBudgetOutOfRange { budget: usize, s: usize },
    #[error("exploration rate {0} is outside [0, 1]")]
    BadExploration(f64),
    #[error("stream: {0}")]
    BadStream(String),
}

/// The full list of issues found by validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssues(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigIssues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, issue) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(ConfigIssues),
    #[error("negative cost {value} at position {index}")]
    NegativeCost { index: usize, value: f64 },
    #[error("bad exponent: {0}")]
    BadExponent(String),
    #[error("model violation: {0}")]
    ModelViolation(String),
    #[error("memory bound violated: server {server} retains {words} word(s) across days")]
    MemoryBoundViolation { server: usize, words: usize },
    #[error("server {server} scratch overflow (capacity {capacity} words)")]
    ScratchOverflow { server: usize, capacity: usize },
    #[error("local cost {value} of expert {expert} on server {server} is outside [0, 1]")]
    BadLocalCost { expert: usize, server: usize, value: f64 },
    #[error("trace exhausted at day {day} (trace holds {len} days)")]
    TraceExhausted { day: usize, len: usize },
    #[error("aggregated cost {value} of expert {expert} exceeds 1")]
    NormalizationViolation { expert: usize, value: f64 },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Shape { path: PathBuf, message: String },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors that stem from the configuration rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::PreconditionViolated(_) | Error::BadExponent(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
