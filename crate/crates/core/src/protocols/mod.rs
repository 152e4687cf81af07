//! Coordinator algorithms.
//!
//! Each protocol commits a distribution at the start of the day, selects an
//! expert from it, runs its communication schedule over a [`Link`], and then
//! updates its state from what the coordinator received.

mod baselines;
mod dewa_l;
mod dewa_m;
mod dewa_s;
mod ewa;
mod exp3;

pub use baselines::{b_dewa_m_estimate, b_dewa_s_estimate, BDewaM, BDewaS};
pub use dewa_l::{dewa_l_estimate, DewaL};
pub use dewa_m::{dewa_m_estimate, running_max_updates, DewaM};
pub use dewa_s::{dewa_s_estimate, DewaS};
pub use ewa::Ewa;
pub use exp3::{exp3_step, Exp3, Exp3Step};

use rand::Rng;

use crate::config::{BaseProtocol, ExperimentConfig, ExpertId, ProtocolId};
use crate::meta::Meta;
use crate::netsim::{Exchange, Transcript};
use crate::rng::{DayStreams, RngStream, Role};

/// A coordinator algorithm driven by the day loop.
pub trait Protocol: Exchange + Send {
    fn id(&self) -> ProtocolId;

    /// Commit today's distribution over experts.
    fn commit(&mut self) -> Vec<f64>;

    /// Pick today's expert from the committed distribution.
    fn select(&mut self, streams: &DayStreams) -> ExpertId;

    /// Fold the day's transcript into the coordinator state.
    fn update(&mut self, transcript: &Transcript);
}

/// Cumulative estimated losses and the learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    pub cum_loss: Vec<f64>,
    pub eta: f64,
}

impl WeightState {
    pub fn new(n: usize, eta: f64) -> Self {
        Self { cum_loss: vec![0.0; n], eta }
    }

    pub fn add(&mut self, estimate: &DayEstimate) {
        for (l, e) in self.cum_loss.iter_mut().zip(&estimate.0) {
            *l += e;
        }
    }
}

/// One day's per-expert loss estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct DayEstimate(pub Vec<f64>);

/// Multiset of `b_e` experts drawn independently and uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSet {
    pub draws: Vec<ExpertId>,
    member: Vec<bool>,
}

impl SampledSet {
    pub fn draw(n: usize, budget: usize, rng: &mut RngStream) -> Self {
        let draws: Vec<ExpertId> = (0..budget).map(|_| ExpertId(rng.random_range(0..n))).collect();
        Self::from_draws(n, draws)
    }

    pub fn from_draws(n: usize, draws: Vec<ExpertId>) -> Self {
        let mut member = vec![false; n];
        for d in &draws {
            member[d.0] = true;
        }
        Self { draws, member }
    }

    pub fn contains(&self, expert: usize) -> bool {
        self.member[expert]
    }

    /// Distinct members in increasing index order.
    pub fn distinct(&self) -> Vec<usize> {
        self.member.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect()
    }
}

/// Exponential weights with the minimum subtracted before exponentiating.
pub fn ewa_distribution(state: &WeightState) -> Vec<f64> {
    let min = state.cum_loss.iter().copied().fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = state.cum_loss.iter().map(|l| (-state.eta * (l - min)).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// Inverse-CDF sampling over expert index order.
pub fn sample_index(p: &[f64], rng: &mut RngStream) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the final partial sum.
    p.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

pub(crate) fn selection_stream(streams: &DayStreams, lane: u32) -> RngStream {
    streams.lane_stream(Role::Selection, lane, 0)
}

/// Instantiate the configured protocol.
pub fn build(cfg: &ExperimentConfig) -> Box<dyn Protocol> {
    if cfg.protocol.meta {
        let k = cfg.resolved().meta_experts;
        let children = (0..k as u32).map(|lane| build_base(cfg, lane)).collect();
        Box::new(Meta::new(cfg.protocol, children, cfg.resolved().eta_meta, cfg.aggregation))
    } else {
        build_base(cfg, 0)
    }
}

/// Instantiate the base protocol on randomness lane `lane`.
pub fn build_base(cfg: &ExperimentConfig, lane: u32) -> Box<dyn Protocol> {
    let r = cfg.resolved();
    match cfg.protocol.base {
        BaseProtocol::Ewa => Box::new(Ewa::new(cfg.n, cfg.eta, cfg.aggregation, lane)),
        BaseProtocol::Exp3 => Box::new(Exp3::new(cfg.n, cfg.eta, r.exp3_gamma, cfg.aggregation, lane)),
        BaseProtocol::DewaS => {
            let q = match cfg.aggregation {
                crate::aggregation::AggregationSpec::PowerOfSum { q } => q,
                _ => 1,
            };
            Box::new(DewaS::new(cfg.n, cfg.budget, cfg.eta, q, lane))
        }
        BaseProtocol::DewaM => Box::new(DewaM::new(cfg.n, cfg.budget, cfg.eta, cfg.unbias_max, lane)),
        BaseProtocol::DewaL => {
            let p = match cfg.aggregation {
                crate::aggregation::AggregationSpec::Lp { p } => p,
                _ => 2.0,
            };
            Box::new(DewaL::new(cfg.n, cfg.budget, cfg.eta, p, lane))
        }
        BaseProtocol::BDewaS => Box::new(BDewaS::new(cfg.n, cfg.s, cfg.budget, cfg.server_budget, cfg.eta, lane)),
        BaseProtocol::BDewaM => Box::new(BDewaM::new(cfg.n, cfg.budget, r.k_probe, cfg.eta, lane)),
    }
}
