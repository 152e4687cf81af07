//! The day loop, regret tracking and multi-trial replication.
//!
//! Every day runs in a fixed order: the protocol commits a distribution, the
//! adversary picks costs after seeing it, an expert is drawn and pays its true
//! cost, then the protocol talks to the servers and updates. Regret is read
//! straight from the true costs and never touches the ledger.

mod diffdist;
mod persist;

pub use diffdist::{classify, diffdist_constant, diffdist_params, run_diffdist, DiffDistOutcome, DiffDistParams, DiffDistReport};
pub use persist::{persist_results, write_regret_csv};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{validate_config, ExperimentConfig, ExpertId, ResolvedParams};
use crate::costgen::{true_costs, AdversaryContext, CostStream};
use crate::error::{Error, Result};
use crate::netsim::{assert_memoryless, run_day_messaging, CommLedger, ServerPool};
use crate::protocols::{build, Protocol};
use crate::rng::{DayStreams, Role};

/// Cumulative costs and the running average regret.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretRecord {
    pub cum_alg_cost: f64,
    pub cum_expert_cost: Vec<f64>,
    pub avg_regret_series: Vec<f64>,
}

impl RegretRecord {
    pub fn new(n: usize, horizon: usize) -> Self {
        Self { cum_alg_cost: 0.0, cum_expert_cost: vec![0.0; n], avg_regret_series: Vec::with_capacity(horizon) }
    }

    /// Fold in one day: the true costs of all experts and today's pick.
    pub fn record(&mut self, costs: &[f64], pick: ExpertId) {
        self.cum_alg_cost += costs[pick.0];
        for (c, l) in self.cum_expert_cost.iter_mut().zip(costs) {
            *c += l;
        }
        let best = self.cum_expert_cost.iter().copied().fold(f64::INFINITY, f64::min);
        let t = self.avg_regret_series.len() + 1;
        self.avg_regret_series.push((self.cum_alg_cost - best) / t as f64);
    }

    pub fn final_regret(&self) -> f64 {
        self.avg_regret_series.last().copied().unwrap_or(0.0)
    }
}

/// When the adversary gets to look at the distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdversaryTiming {
    /// After today's commit (the strong adversary).
    #[default]
    AfterCommit,
    /// Only yesterday's distribution is visible. Exists to show that the loop
    /// order matters.
    Stale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialOptions {
    pub track_regret: bool,
    /// Keep every charged event for a transcript dump.
    pub record_events: bool,
    pub adversary_timing: AdversaryTiming,
}

impl Default for TrialOptions {
    fn default() -> Self {
        Self { track_regret: true, record_events: false, adversary_timing: AdversaryTiming::AfterCommit }
    }
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: u64,
    pub seed: u64,
    pub regret: Option<RegretRecord>,
    pub ledger: CommLedger,
    pub selections: Vec<ExpertId>,
    /// Day boundaries at which the servers were checked to hold no words.
    pub memory_checks: usize,
}

impl TrialResult {
    pub fn final_regret(&self) -> f64 {
        self.regret.as_ref().map_or(0.0, RegretRecord::final_regret)
    }
}

/// Run one trial of a validated configuration.
pub fn run_trial(cfg: &ExperimentConfig, trial: u64) -> Result<TrialResult> {
    let mut protocol = build(cfg);
    run_trial_with(cfg, trial, protocol.as_mut(), &TrialOptions::default())
}

/// Run one trial with an explicit protocol instance and options.
pub fn run_trial_with(
    cfg: &ExperimentConfig,
    trial: u64,
    protocol: &mut dyn Protocol,
    opts: &TrialOptions,
) -> Result<TrialResult> {
    let (n, s, horizon) = (cfg.n, cfg.s, cfg.horizon);
    let stream = CostStream::new(cfg.stream.clone(), n, s, cfg.aggregation)?;
    let mut pool = ServerPool::for_experts(s, n);
    assert_memoryless(&pool)?;
    let mut ledger = if opts.record_events { CommLedger::recording() } else { CommLedger::new() };
    let mut regret = opts.track_regret.then(|| RegretRecord::new(n, horizon));
    let mut selections = Vec::with_capacity(horizon);
    let mut previous = vec![1.0 / n as f64; n];
    let mut memory_checks = 0;
    for day in 0..horizon {
        let streams = DayStreams::new(cfg.seed, trial, day as u64);
        let committed = protocol.commit();
        let seen = match opts.adversary_timing {
            AdversaryTiming::AfterCommit => &committed,
            AdversaryTiming::Stale => &previous,
        };
        let ctx = AdversaryContext { day, committed_distribution: seen };
        let costs = stream.next_day(&ctx, &mut streams.stream(Role::Generator, 0))?;
        let pick = protocol.select(&streams);
        selections.push(pick);
        if let Some(r) = regret.as_mut() {
            r.record(&true_costs(&costs, &cfg.aggregation), pick);
        }
        let transcript = run_day_messaging(protocol, cfg.comm_model, &mut pool, &costs, &mut ledger, &streams)?;
        protocol.update(&transcript);
        assert_memoryless(&pool)?;
        memory_checks += 1;
        previous = committed;
    }
    Ok(TrialResult { trial, seed: cfg.seed, regret, ledger, selections, memory_checks })
}

/// Trial-averaged results of one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub resolved: ResolvedParams,
    pub trials: usize,
    pub mean_regret: Vec<f64>,
    pub stderr_regret: Vec<f64>,
    pub final_regrets: Vec<f64>,
    /// Counters summed over all trials.
    pub ledger: CommLedger,
    pub mean_total_words: f64,
    pub ewa_ratio: f64,
    pub memory_checks: usize,
}

impl ExperimentSummary {
    pub fn final_regret_mean(&self) -> f64 {
        self.mean_regret.last().copied().unwrap_or(0.0)
    }
}

/// Words per run of full-information EWA under message passing.
pub fn ewa_words(cfg: &ExperimentConfig) -> u64 {
    (cfg.horizon * (cfg.n * cfg.s + cfg.s)) as u64
}

/// Validate, run every trial (in parallel), and fold the results in trial
/// order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    let cfg = validate_config(cfg.clone()).map_err(Error::InvalidConfig)?;
    let results: Vec<Result<TrialResult>> =
        (0..cfg.trials as u64).into_par_iter().map(|trial| run_trial(&cfg, trial)).collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(summarize(&cfg, &results))
}

/// Fold trial results (in the given order) into a summary.
pub fn summarize(cfg: &ExperimentConfig, results: &[TrialResult]) -> ExperimentSummary {
    let horizon = cfg.horizon;
    let k = results.len();
    let mut sum = vec![0.0; horizon];
    let mut sq = vec![0.0; horizon];
    let mut ledger = CommLedger::new();
    let mut memory_checks = 0;
    for r in results {
        if let Some(reg) = &r.regret {
            for (t, v) in reg.avg_regret_series.iter().enumerate() {
                sum[t] += v;
                sq[t] += v * v;
            }
        }
        ledger.merge(&r.ledger.counters());
        memory_checks += r.memory_checks;
    }
    let kf = k.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|v| v / kf).collect();
    let stderr = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            if k < 2 {
                0.0
            } else {
                let var = ((q - kf * m * m) / (kf - 1.0)).max(0.0);
                (var / kf).sqrt()
            }
        })
        .collect();
    let mean_total_words = ledger.total_words as f64 / kf;
    ExperimentSummary {
        config: cfg.clone(),
        resolved: cfg.resolved(),
        trials: k,
        mean_regret: mean,
        stderr_regret: stderr,
        final_regrets: results.iter().map(TrialResult::final_regret).collect(),
        ewa_ratio: mean_total_words / ewa_words(cfg) as f64,
        mean_total_words,
        ledger,
        memory_checks,
    }
}
