//! Domain types and validated experiment configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationSpec;
use crate::costgen::{StreamKind, StreamSpec};
use crate::error::{ConfigIssue, ConfigIssues, Error, Result};
use crate::meta;
use crate::netsim::CommModel;

/// Index of an expert, `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExpertId(pub usize);

/// Index of a server, `0..s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ServerId(pub usize);

impl fmt::Display for ExpertId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0 + 1)
    }
}

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0 + 1)
    }
}

/// The `n x s` matrix of local costs for one day, stored expert-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DayLocalCosts {
    day: usize,
    n: usize,
    s: usize,
    costs: Vec<f64>,
}

impl DayLocalCosts {
    pub fn zeros(day: usize, n: usize, s: usize) -> Self {
        Self { day, n, s, costs: vec![0.0; n * s] }
    }

    /// Build from expert-major values; every entry must be finite and >= 0.
    pub fn from_rows(day: usize, n: usize, s: usize, costs: Vec<f64>) -> Result<Self> {
        if costs.len() != n * s {
            return Err(Error::Invalid(format!(
                "cost matrix has {} entries, expected {n}x{s}",
                costs.len()
            )));
        }
        if let Some((index, &value)) = costs
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(Error::NegativeCost { index, value });
        }
        Ok(Self { day, n, s, costs })
    }

    pub fn day(&self) -> usize {
        self.day
    }

    pub fn num_experts(&self) -> usize {
        self.n
    }

    pub fn num_servers(&self) -> usize {
        self.s
    }

    #[inline]
    pub fn get(&self, expert: usize, server: usize) -> f64 {
        self.costs[expert * self.s + server]
    }

    pub(crate) fn set(&mut self, expert: usize, server: usize, value: f64) {
        debug_assert!(value >= 0.0);
        self.costs[expert * self.s + server] = value;
    }

    /// One expert's costs across all servers.
    pub fn row(&self, expert: usize) -> &[f64] {
        &self.costs[expert * self.s..(expert + 1) * self.s]
    }

    pub fn values(&self) -> &[f64] {
        &self.costs
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        self.costs.iter_mut().for_each(|c| *c *= factor);
    }
}

/// Base coordinator algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseProtocol {
    Ewa,
    Exp3,
    DewaS,
    DewaM,
    DewaL,
    BDewaS,
    BDewaM,
}

impl BaseProtocol {
    pub fn name(self) -> &'static str {
        match self {
            BaseProtocol::Ewa => "ewa",
            BaseProtocol::Exp3 => "exp3",
            BaseProtocol::DewaS => "dewa-s",
            BaseProtocol::DewaM => "dewa-m",
            BaseProtocol::DewaL => "dewa-l",
            BaseProtocol::BDewaS => "b-dewa-s",
            BaseProtocol::BDewaM => "b-dewa-m",
        }
    }

    pub fn needs_broadcast(self) -> bool {
        matches!(self, BaseProtocol::DewaM | BaseProtocol::DewaL | BaseProtocol::BDewaM)
    }

    pub fn supports(self, agg: &AggregationSpec) -> bool {
        match self {
            BaseProtocol::Ewa | BaseProtocol::Exp3 => true,
            BaseProtocol::DewaS => matches!(
                agg,
                AggregationSpec::Sum | AggregationSpec::PowerOfSum { q: 1 | 2 }
            ),
            BaseProtocol::BDewaS => matches!(agg, AggregationSpec::Sum),
            BaseProtocol::DewaM | BaseProtocol::BDewaM => matches!(agg, AggregationSpec::Max),
            BaseProtocol::DewaL => matches!(agg, AggregationSpec::Lp { .. }),
        }
    }

    /// Whether a `-p` meta-wrapped variant exists.
    pub fn has_meta_variant(self) -> bool {
        !matches!(self, BaseProtocol::Ewa | BaseProtocol::Exp3)
    }
}

/// A protocol identifier as used on the command line, e.g. `dewa-m-p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ProtocolId {
    pub base: BaseProtocol,
    /// Wrapped in the meta-expert layer (`-p` suffix).
    pub meta: bool,
}

impl ProtocolId {
    pub const fn plain(base: BaseProtocol) -> Self {
        Self { base, meta: false }
    }

    pub const fn wrapped(base: BaseProtocol) -> Self {
        Self { base, meta: true }
    }

    pub fn all() -> Vec<ProtocolId> {
        use BaseProtocol::*;
        let mut ids = vec![Self::plain(Ewa), Self::plain(Exp3)];
        for b in [DewaS, DewaM, DewaL, BDewaS, BDewaM] {
            ids.push(Self::plain(b));
            ids.push(Self::wrapped(b));
        }
        ids
    }
}

impl fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.base.name())?;
        if self.meta {
            f.write_str("-p")?;
        }
        Ok(())
    }
}

impl FromStr for ProtocolId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProtocolId::all()
            .into_iter()
            .find(|id| id.to_string() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown protocol {s:?}")))
    }
}

impl From<ProtocolId> for String {
    fn from(id: ProtocolId) -> String {
        id.to_string()
    }
}

impl TryFrom<String> for ProtocolId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub s: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Sampling budget `b_e`.
    pub budget: usize,
    /// Server sampling budget `b_s` of the uniform-sampling baseline.
    pub server_budget: usize,
    pub eta: f64,
    /// `None` resolves to `sqrt(ln K / T)`.
    pub eta_meta: Option<f64>,
    /// Meta-expert count `K`; `None` resolves to `ceil(2 log10 T)`.
    pub meta_experts: Option<usize>,
    pub aggregation: AggregationSpec,
    pub comm_model: CommModel,
    pub protocol: ProtocolId,
    pub stream: StreamSpec,
    pub seed: u64,
    pub trials: usize,
    /// Regret-analysis constant for DEWA-L; needs `1 + epsilon < p`.
    pub epsilon: Option<f64>,
    /// Rescale DEWA-M estimates by the inverse inclusion probability.
    pub unbias_max: bool,
    /// Servers probed per sampled expert by B-DEWA-M; `None` is `ceil(ln s)`.
    pub k_probe: Option<usize>,
    /// Exp3 uniform-exploration rate; `None` is `min(1, sqrt(n ln n / T))`.
    pub exp3_gamma: Option<f64>,
}

impl ExperimentConfig {
    /// The message-passing / summation setting with `n=100, s=50, eta=0.1`.
    pub fn new(protocol: ProtocolId) -> Self {
        Self {
            n: 100,
            s: 50,
            horizon: 10_000,
            budget: 100,
            server_budget: 2,
            eta: 0.1,
            eta_meta: None,
            meta_experts: None,
            aggregation: AggregationSpec::Sum,
            comm_model: CommModel::MessagePassing,
            protocol,
            stream: StreamSpec::gaussian(),
            seed: 0,
            trials: 1,
            epsilon: None,
            unbias_max: false,
            k_probe: None,
            exp3_gamma: None,
        }
    }

    /// Defaults filled in for every `auto` field.
    pub fn resolved(&self) -> ResolvedParams {
        let t = self.horizon.max(1);
        let meta_experts = self.meta_experts.unwrap_or_else(|| meta::default_k(t));
        let eta_meta = self
            .eta_meta
            .unwrap_or_else(|| ((meta_experts as f64).ln() / t as f64).sqrt());
        let k_probe = self
            .k_probe
            .unwrap_or_else(|| ((self.s as f64).ln().ceil() as usize).clamp(1, self.s.max(1)));
        let exp3_gamma = self.exp3_gamma.unwrap_or_else(|| {
            let n = self.n as f64;
            (n * n.ln() / t as f64).sqrt().min(1.0)
        });
        let epsilon = match self.aggregation {
            AggregationSpec::Lp { p } => Some(self.epsilon.unwrap_or(((p - 1.0) / 2.0).min(1.0))),
            _ => self.epsilon,
        };
        ResolvedParams { meta_experts, eta_meta, k_probe, exp3_gamma, epsilon }
    }
}

/// Values chosen for the configuration's `auto` fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    #[serde(rename = "K")]
    pub meta_experts: usize,
    pub eta_meta: f64,
    pub k_probe: usize,
    pub exp3_gamma: f64,
    pub epsilon: Option<f64>,
}

/// Check every configuration invariant; returns the config unchanged or the
/// complete list of violations.
pub fn validate_config(cfg: ExperimentConfig) -> Result<ExperimentConfig, ConfigIssues> {
    let mut issues = Vec::new();
    for (field, v) in [("n", cfg.n), ("s", cfg.s), ("T", cfg.horizon), ("trials", cfg.trials)] {
        if v == 0 {
            issues.push(ConfigIssue::ZeroCount { field });
        }
    }
    if cfg.budget == 0 || cfg.budget > cfg.n {
        issues.push(ConfigIssue::BudgetOutOfRange { budget: cfg.budget, n: cfg.n });
    }
    if !(cfg.eta > 0.0 && cfg.eta.is_finite()) {
        issues.push(ConfigIssue::BadLearningRate { field: "eta", value: cfg.eta });
    }
    if let Some(e) = cfg.eta_meta {
        if !(e > 0.0 && e.is_finite()) {
            issues.push(ConfigIssue::BadLearningRate { field: "eta_meta", value: e });
        }
    }
    if cfg.meta_experts == Some(0) {
        issues.push(ConfigIssue::ZeroCount { field: "K" });
    }
    let base = cfg.protocol.base;
    if cfg.protocol.meta && !base.has_meta_variant() {
        issues.push(ConfigIssue::UnsupportedAggregation {
            protocol: cfg.protocol.to_string(),
            aggregation: "(no meta variant)".into(),
        });
    }
    if base.needs_broadcast() && cfg.comm_model == CommModel::MessagePassing {
        issues.push(ConfigIssue::IncompatibleModel { protocol: cfg.protocol.to_string() });
    }
    match cfg.aggregation {
        AggregationSpec::Lp { p } if !(p > 1.0) || !p.is_finite() => {
            issues.push(ConfigIssue::BadExponent(format!("p={p} must be > 1")));
        }
        AggregationSpec::PowerOfSum { q: 0 } => {
            issues.push(ConfigIssue::BadExponent("q must be >= 1".into()));
        }
        _ => {}
    }
    if !base.supports(&cfg.aggregation) {
        issues.push(ConfigIssue::UnsupportedAggregation {
            protocol: cfg.protocol.to_string(),
            aggregation: cfg.aggregation.to_string(),
        });
    }
    if base == BaseProtocol::DewaL {
        if let AggregationSpec::Lp { p } = cfg.aggregation {
            let eps = cfg.resolved().epsilon.unwrap_or(0.0);
            if !(eps > 0.0 && eps <= 1.0) || 1.0 + eps >= p {
                issues.push(ConfigIssue::BadExponent(format!(
                    "epsilon={eps} must lie in (0, 1] with 1 + epsilon < p={p}"
                )));
            }
        }
    }
    if let Some(k) = cfg.k_probe {
        if k == 0 || k > cfg.s {
            issues.push(ConfigIssue::ProbeOutOfRange { k, s: cfg.s });
        }
    }
    if cfg.server_budget == 0 || cfg.server_budget > cfg.s {
        issues.push(ConfigIssue::ServerBudgetOutOfRange { budget: cfg.server_budget, s: cfg.s });
    }
    if let Some(g) = cfg.exp3_gamma {
        if !(0.0..=1.0).contains(&g) {
            issues.push(ConfigIssue::BadExploration(g));
        }
    }
    match &cfg.stream.kind {
        StreamKind::DiffDist { eps, .. } if !(*eps > 0.0 && *eps <= 0.5) => {
            issues.push(ConfigIssue::BadStream(format!("diffdist eps={eps} outside (0, 1/2]")));
        }
        StreamKind::Sparse { base } if matches!(**base, StreamKind::Sparse { .. }) => {
            issues.push(ConfigIssue::BadStream("sparse stream cannot wrap another sparse stream".into()));
        }
        _ => {}
    }
    if cfg.stream.best_expert.0 >= cfg.n && cfg.n > 0 {
        issues.push(ConfigIssue::BadStream(format!(
            "best expert {} is outside [0, {})",
            cfg.stream.best_expert.0, cfg.n
        )));
    }
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigIssues(issues))
    }
}
