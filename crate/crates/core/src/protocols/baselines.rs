use rand::seq::index;
use rand::Rng;

use crate::config::{BaseProtocol, DayLocalCosts, ExpertId, ProtocolId, ServerId};
use crate::error::{ConfigIssue, ConfigIssues, Error, Result};
use crate::netsim::{run_day_messaging, CommLedger, CommModel, Exchange, Link, Message, ServerPool, Transcript};
use crate::rng::{DayStreams, Role};

use super::dewa_m::max_per_expert;
use super::{ewa_distribution, sample_index, selection_stream, DayEstimate, Protocol, SampledSet, WeightState};

/// Uniform-sampling baseline for sum aggregation: each pair `(i, j)` is kept
/// with probability `(b_e/n)(b_s/s)` and its raw value shipped.
#[derive(Debug, Clone)]
pub struct BDewaS {
    weights: WeightState,
    s: usize,
    budget: usize,
    server_budget: usize,
    lane: u32,
    committed: Vec<f64>,
}

impl BDewaS {
    pub fn new(n: usize, s: usize, budget: usize, server_budget: usize, eta: f64, lane: u32) -> Self {
        Self { weights: WeightState::new(n, eta), s, budget, server_budget, lane, committed: Vec::new() }
    }

    pub fn weights(&self) -> &WeightState {
        &self.weights
    }

    pub fn estimate(&self, transcript: &Transcript) -> DayEstimate {
        let n = self.weights.cum_loss.len();
        let scale = (n * self.s) as f64 / (self.budget * self.server_budget) as f64;
        let mut est = vec![0.0; n];
        for m in &transcript.messages {
            if let Message::Value { expert, value, .. } = m {
                est[expert.0] += scale * value;
            }
        }
        DayEstimate(est)
    }
}

impl Exchange for BDewaS {
    fn exchange(&mut self, link: &mut Link<'_>, streams: &DayStreams) -> Result<()> {
        let (n, s) = (link.num_experts(), link.num_servers());
        let keep_expert = self.budget as f64 / n as f64;
        let keep_server = self.server_budget as f64 / s as f64;
        for j in 0..s {
            let mut rng = streams.lane_stream(Role::Server, self.lane, j as u32);
            let mut session = link.open(ServerId(j));
            for i in 0..n {
                let alpha = self.budget == n || rng.random_bool(keep_expert);
                if alpha && (self.server_budget == s || rng.random_bool(keep_server)) {
                    let value = session.local_cost(i);
                    session.send(Message::Value { expert: ExpertId(i), server: ServerId(j), value });
                }
            }
        }
        Ok(())
    }
}

impl Protocol for BDewaS {
    fn id(&self) -> ProtocolId {
        ProtocolId::plain(BaseProtocol::BDewaS)
    }

    fn commit(&mut self) -> Vec<f64> {
        self.committed = ewa_distribution(&self.weights);
        self.committed.clone()
    }

    fn select(&mut self, streams: &DayStreams) -> ExpertId {
        ExpertId(sample_index(&self.committed, &mut selection_stream(streams, self.lane)))
    }

    fn update(&mut self, transcript: &Transcript) {
        let est = self.estimate(transcript);
        self.weights.add(&est);
    }
}

/// One day of the uniform-sampling sum baseline (message-passing).
pub fn b_dewa_s_estimate(
    day_costs: &DayLocalCosts,
    budget: usize,
    server_budget: usize,
    streams: &DayStreams,
) -> Result<(DayEstimate, CommLedger)> {
    let (n, s) = (day_costs.num_experts(), day_costs.num_servers());
    if server_budget == 0 || server_budget > s {
        return Err(Error::InvalidConfig(ConfigIssues(vec![ConfigIssue::ServerBudgetOutOfRange {
            budget: server_budget,
            s,
        }])));
    }
    let mut proto = BDewaS::new(n, s, budget, server_budget, 1.0, 0);
    let mut pool = ServerPool::for_experts(s, n);
    let mut ledger = CommLedger::new();
    let t = run_day_messaging(&mut proto, CommModel::MessagePassing, &mut pool, day_costs, &mut ledger, streams)?;
    Ok((proto.estimate(&t), ledger))
}

/// Probing baseline for max aggregation: every sampled slot asks `k_probe`
/// distinct random servers and keeps the largest answer.
#[derive(Debug, Clone)]
pub struct BDewaM {
    weights: WeightState,
    budget: usize,
    k_probe: usize,
    lane: u32,
    committed: Vec<f64>,
}

impl BDewaM {
    pub fn new(n: usize, budget: usize, k_probe: usize, eta: f64, lane: u32) -> Self {
        Self { weights: WeightState::new(n, eta), budget, k_probe, lane, committed: Vec::new() }
    }

    pub fn weights(&self) -> &WeightState {
        &self.weights
    }

    pub fn estimate(&self, transcript: &Transcript) -> DayEstimate {
        DayEstimate(max_per_expert(self.weights.cum_loss.len(), transcript))
    }

    fn exchange_with(&mut self, link: &mut Link<'_>, streams: &DayStreams, sampled: &SampledSet) -> Result<()> {
        link.require_broadcast("server turns")?;
        let s = link.num_servers();
        if self.k_probe == 0 || self.k_probe > s {
            return Err(Error::InvalidConfig(ConfigIssues(vec![ConfigIssue::ProbeOutOfRange { k: self.k_probe, s }])));
        }
        let mut coord = streams.lane_stream(Role::Coordinator, self.lane, 2);
        let mut probes: Vec<Vec<ExpertId>> = vec![Vec::new(); s];
        for &slot in &sampled.draws {
            for j in index::sample(&mut coord, s, self.k_probe) {
                probes[j].push(slot);
            }
        }
        for (j, asked) in probes.into_iter().enumerate() {
            let mut session = link.open(ServerId(j));
            for expert in asked {
                let value = session.local_cost(expert.0);
                session.send(Message::Value { expert, server: ServerId(j), value });
            }
        }
        Ok(())
    }
}

impl Exchange for BDewaM {
    fn exchange(&mut self, link: &mut Link<'_>, streams: &DayStreams) -> Result<()> {
        let mut coord = streams.lane_stream(Role::Coordinator, self.lane, 0);
        let sampled = SampledSet::draw(link.num_experts(), self.budget, &mut coord);
        self.exchange_with(link, streams, &sampled)
    }
}

impl Protocol for BDewaM {
    fn id(&self) -> ProtocolId {
        ProtocolId::plain(BaseProtocol::BDewaM)
    }

    fn commit(&mut self) -> Vec<f64> {
        self.committed = ewa_distribution(&self.weights);
        self.committed.clone()
    }

    fn select(&mut self, streams: &DayStreams) -> ExpertId {
        ExpertId(sample_index(&self.committed, &mut selection_stream(streams, self.lane)))
    }

    fn update(&mut self, transcript: &Transcript) {
        let est = self.estimate(transcript);
        self.weights.add(&est);
    }
}

/// One day of the probing max baseline for a fixed sample (broadcast).
pub fn b_dewa_m_estimate(
    day_costs: &DayLocalCosts,
    sampled: &SampledSet,
    k_probe: usize,
    streams: &DayStreams,
) -> Result<(DayEstimate, CommLedger)> {
    let n = day_costs.num_experts();
    let mut proto = BDewaM::new(n, sampled.draws.len(), k_probe, 1.0, 0);
    let mut pool = ServerPool::for_experts(day_costs.num_servers(), n);
    let mut ledger = CommLedger::new();
    let mut link = Link::new(CommModel::Broadcast, day_costs, &mut pool, &mut ledger);
    proto.exchange_with(&mut link, streams, sampled)?;
    let t = link.take_transcript();
    Ok((proto.estimate(&t), ledger))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_sampling_sum_is_exact() {
        let costs = DayLocalCosts::from_rows(0, 2, 3, vec![0.1, 0.2, 0.3, 0.0, 0.5, 0.25]).unwrap();
        let (est, ledger) = b_dewa_s_estimate(&costs, 2, 3, &DayStreams::new(0, 0, 0)).unwrap();
        assert!((est.0[0] - 0.6).abs() < 1e-12);
        assert!((est.0[1] - 0.75).abs() < 1e-12);
        assert_eq!(ledger.total_words, 3 + 6);
    }

    #[test]
    fn sum_baseline_is_unbiased() {
        let costs = DayLocalCosts::from_rows(0, 2, 4, vec![0.1, 0.7, 0.0, 0.4, 0.9, 0.9, 0.9, 0.9]).unwrap();
        let reps = 100_000u64;
        let (mut sum, mut sq) = ([0.0; 2], [0.0; 2]);
        for r in 0..reps {
            let (e, _) = b_dewa_s_estimate(&costs, 1, 2, &DayStreams::new(3, r, 0)).unwrap();
            for i in 0..2 {
                sum[i] += e.0[i];
                sq[i] += e.0[i] * e.0[i];
            }
        }
        for (i, truth) in [1.2, 3.6].into_iter().enumerate() {
            let mean = sum[i] / reps as f64;
            let se = ((sq[i] / reps as f64 - mean * mean) / reps as f64).sqrt();
            assert!((mean - truth).abs() <= 4.0 * se, "{mean} vs {truth}");
        }
    }

    #[test]
    fn probing_every_server_finds_the_max() {
        let costs = DayLocalCosts::from_rows(0, 2, 3, vec![0.1, 0.8, 0.3, 0.2, 0.0, 0.6]).unwrap();
        let sampled = SampledSet::from_draws(2, vec![ExpertId(0), ExpertId(1)]);
        let (est, ledger) = b_dewa_m_estimate(&costs, &sampled, 3, &DayStreams::new(0, 0, 0)).unwrap();
        assert_eq!(est.0, vec![0.8, 0.6]);
        assert_eq!(ledger.total_words, 3 + 2 * 3);
    }

    #[test]
    fn probing_misses_a_sparse_spike() {
        // The only nonzero entry sits on one of 10 servers; 2 probes find it
        // with probability 1/5.
        let mut row = vec![0.0; 10];
        row[7] = 1.0;
        let costs = DayLocalCosts::from_rows(0, 1, 10, row).unwrap();
        let sampled = SampledSet::from_draws(1, vec![ExpertId(0)]);
        let reps = 20_000u64;
        let hits = (0..reps)
            .filter(|r| b_dewa_m_estimate(&costs, &sampled, 2, &DayStreams::new(1, *r, 0)).unwrap().0 .0[0] > 0.0)
            .count();
        let rate = hits as f64 / reps as f64;
        assert!((rate - 0.2).abs() < 0.015, "{rate}");
    }

    #[test]
    fn probe_count_above_servers_rejected() {
        let costs = DayLocalCosts::zeros(0, 1, 3);
        let sampled = SampledSet::from_draws(1, vec![ExpertId(0)]);
        let err = b_dewa_m_estimate(&costs, &sampled, 4, &DayStreams::new(0, 0, 0)).unwrap_err();
        assert!(err.is_config());
    }
}
