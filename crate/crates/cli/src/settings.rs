//! Flag and config-file handling. Every setting travels as a `key -> value`
//! string pair so the exact values given can be echoed back.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use clap::Args;

use dexperts_core::costgen::{DiffDistCase, StreamSpec};
use dexperts_core::{AggregationSpec, BaseProtocol, CommModel, ExperimentConfig, ExpertId, ProtocolId};

/// Keys accepted both as `--key` flags and in `--config` files.
pub const KEYS: &[&str] = &[
    "protocol", "agg", "model", "n", "s", "T", "be", "bs", "eta", "eta-meta", "K", "dist", "sparse", "seed", "trials",
    "out", "unbias-max", "k-probe",
];

/// A bad flag or config entry. Always maps to exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Plain-text `key=value` file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<String>,
    /// ewa, exp3, dewa-s, dewa-m, dewa-l, b-dewa-s, b-dewa-m (append -p for the meta variant)
    #[arg(long)]
    pub protocol: Option<String>,
    /// sum, pow:q, max or lp:p
    #[arg(long)]
    pub agg: Option<String>,
    /// mp (message passing) or bc (broadcast)
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub s: Option<String>,
    /// Horizon in days
    #[arg(long = "T")]
    pub horizon: Option<String>,
    /// Sampling budget b_e (defaults to n)
    #[arg(long)]
    pub be: Option<String>,
    /// Server budget of b-dewa-s
    #[arg(long)]
    pub bs: Option<String>,
    #[arg(long)]
    pub eta: Option<String>,
    #[arg(long = "eta-meta")]
    pub eta_meta: Option<String>,
    /// Meta-expert count
    #[arg(long = "K")]
    pub k: Option<String>,
    /// gaussian, bernoulli, diffdist, adaptive or trace:PATH
    #[arg(long)]
    pub dist: Option<String>,
    /// Put each expert's cost on a single random server
    #[arg(long)]
    pub sparse: bool,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub trials: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Divide dewa-m estimates by the inclusion probability
    #[arg(long = "unbias-max")]
    pub unbias_max: bool,
    #[arg(long = "k-probe")]
    pub k_probe: Option<String>,
}

impl CommonArgs {
    /// Flags given on the command line, keyed like the config file.
    pub fn given(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: &Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v.clone());
            }
        };
        put("protocol", &self.protocol);
        put("agg", &self.agg);
        put("model", &self.model);
        put("n", &self.n);
        put("s", &self.s);
        put("T", &self.horizon);
        put("be", &self.be);
        put("bs", &self.bs);
        put("eta", &self.eta);
        put("eta-meta", &self.eta_meta);
        put("K", &self.k);
        put("dist", &self.dist);
        put("seed", &self.seed);
        put("trials", &self.trials);
        put("out", &self.out);
        put("k-probe", &self.k_probe);
        if self.sparse {
            m.insert("sparse".into(), "true".into());
        }
        if self.unbias_max {
            m.insert("unbias-max".into(), "true".into());
        }
        m
    }

    /// Config file entries overridden by command-line flags.
    pub fn settings(&self) -> Result<BTreeMap<String, String>, UsageError> {
        let mut m = match &self.config {
            Some(path) => read_config_file(Path::new(path))?,
            None => BTreeMap::new(),
        };
        m.extend(self.given());
        Ok(m)
    }
}

/// Parse a `key=value` file. Blank lines and `#` comments are skipped.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, UsageError> {
    let text =
        fs::read_to_string(path).map_err(|e| UsageError(format!("--config {}: {e}", path.display())))?;
    let mut m = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("{}:{}: expected key=value", path.display(), k + 1)))?;
        let key = key.trim().trim_start_matches("--");
        if !KEYS.contains(&key) {
            return Err(UsageError(format!("{}:{}: unknown key {key:?}", path.display(), k + 1)));
        }
        m.insert(key.to_string(), value.trim().to_string());
    }
    Ok(m)
}

fn parse<T: std::str::FromStr>(m: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, UsageError> {
    match m.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| UsageError(format!("--{key}: invalid value {v:?}"))),
    }
}

fn flag(m: &BTreeMap<String, String>, key: &str) -> Result<bool, UsageError> {
    match m.get(key).map(String::as_str) {
        None | Some("false") => Ok(false),
        Some("true") => Ok(true),
        Some(v) => Err(UsageError(format!("--{key}: expected true or false, got {v:?}"))),
    }
}

/// Cost stream named by `--dist`. `diffdist` needs the case and bias, which
/// only the diffdist subcommand supplies.
fn stream(m: &BTreeMap<String, String>) -> Result<StreamSpec, UsageError> {
    let dist = m.get("dist").map(String::as_str).unwrap_or("gaussian");
    let spec = match dist {
        "gaussian" => StreamSpec::gaussian(),
        "bernoulli" => StreamSpec::bernoulli(),
        "adaptive" => StreamSpec::adaptive_greedy(),
        "diffdist" => StreamSpec::diffdist(DiffDistCase::A, 0.5, ExpertId(0)),
        d => match d.strip_prefix("trace:") {
            Some(path) if !path.is_empty() => StreamSpec::trace(path),
            _ => return Err(UsageError(format!("--dist: unknown distribution {d:?}"))),
        },
    };
    if flag(m, "sparse")? {
        if !matches!(dist, "gaussian" | "bernoulli") {
            return Err(UsageError(format!("--sparse only applies to gaussian or bernoulli, not {dist:?}")));
        }
        return Ok(spec.sparse());
    }
    Ok(spec)
}

/// Build the experiment configuration. Unset fields take protocol-aware
/// defaults: `b_e = n`, broadcast for broadcast-only protocols, and the
/// aggregation each protocol is built for.
pub fn build_config(m: &BTreeMap<String, String>) -> Result<ExperimentConfig, UsageError> {
    let protocol: ProtocolId = parse(m, "protocol")?.unwrap_or(ProtocolId::plain(BaseProtocol::DewaS));
    let mut cfg = ExperimentConfig::new(protocol);
    cfg.aggregation = match parse::<AggregationSpec>(m, "agg")? {
        Some(a) => a,
        None => match protocol.base {
            BaseProtocol::DewaM | BaseProtocol::BDewaM => AggregationSpec::Max,
            BaseProtocol::DewaL => AggregationSpec::Lp { p: 2.0 },
            _ => AggregationSpec::Sum,
        },
    };
    cfg.comm_model = match parse::<CommModel>(m, "model")? {
        Some(model) => model,
        None if protocol.base.needs_broadcast() => CommModel::Broadcast,
        None => CommModel::MessagePassing,
    };
    if let Some(n) = parse(m, "n")? {
        cfg.n = n;
    }
    if let Some(s) = parse(m, "s")? {
        cfg.s = s;
    }
    if let Some(t) = parse(m, "T")? {
        cfg.horizon = t;
    }
    cfg.budget = parse(m, "be")?.unwrap_or(cfg.n);
    if let Some(b) = parse(m, "bs")? {
        cfg.server_budget = b;
    }
    if let Some(eta) = parse(m, "eta")? {
        cfg.eta = eta;
    }
    cfg.eta_meta = parse(m, "eta-meta")?;
    cfg.meta_experts = parse(m, "K")?;
    cfg.stream = stream(m)?;
    if let Some(seed) = parse(m, "seed")? {
        cfg.seed = seed;
    }
    if let Some(trials) = parse(m, "trials")? {
        cfg.trials = trials;
    }
    cfg.unbias_max = flag(m, "unbias-max")?;
    cfg.k_probe = parse(m, "k-probe")?;
    Ok(cfg)
}
