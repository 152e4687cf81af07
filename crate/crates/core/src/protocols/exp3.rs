use crate::aggregation::{aggregate_unchecked, AggregationSpec};
use crate::config::{BaseProtocol, DayLocalCosts, ExpertId, ProtocolId, ServerId};
use crate::error::Result;
use crate::netsim::{run_day_messaging, CommLedger, CommModel, Exchange, Link, Message, ServerPool, Transcript};
use crate::rng::DayStreams;

use super::{ewa_distribution, sample_index, selection_stream, DayEstimate, Protocol, WeightState};

/// Bandit baseline: exponential weights mixed with uniform exploration; only
/// the chosen expert's costs are fetched, from every server.
#[derive(Debug, Clone)]
pub struct Exp3 {
    weights: WeightState,
    gamma: f64,
    agg: AggregationSpec,
    lane: u32,
    committed: Vec<f64>,
    chosen: Option<ExpertId>,
}

impl Exp3 {
    pub fn new(n: usize, eta: f64, gamma: f64, agg: AggregationSpec, lane: u32) -> Self {
        Self { weights: WeightState::new(n, eta), gamma, agg, lane, committed: Vec::new(), chosen: None }
    }

    pub fn weights(&self) -> &WeightState {
        &self.weights
    }

    /// Importance-weighted estimate from the chosen expert's fetched row.
    pub fn estimate(&self, transcript: &Transcript) -> DayEstimate {
        let n = self.weights.cum_loss.len();
        let mut est = vec![0.0; n];
        if let Some(i) = self.chosen {
            let row: Vec<f64> = transcript
                .messages
                .iter()
                .filter_map(|m| match m {
                    Message::Value { expert, value, .. } if *expert == i => Some(*value),
                    _ => None,
                })
                .collect();
            let cost = aggregate_unchecked(&self.agg, &row);
            est[i.0] = cost / self.committed[i.0];
        }
        DayEstimate(est)
    }
}

impl Exchange for Exp3 {
    fn exchange(&mut self, link: &mut Link<'_>, _streams: &DayStreams) -> Result<()> {
        let chosen = self.chosen.expect("select runs before the exchange");
        for j in 0..link.num_servers() {
            let mut session = link.open(ServerId(j));
            let value = session.local_cost(chosen.0);
            session.send(Message::Value { expert: chosen, server: ServerId(j), value });
        }
        Ok(())
    }
}

impl Protocol for Exp3 {
    fn id(&self) -> ProtocolId {
        ProtocolId::plain(BaseProtocol::Exp3)
    }

    fn commit(&mut self) -> Vec<f64> {
        let n = self.weights.cum_loss.len() as f64;
        self.committed = ewa_distribution(&self.weights)
            .into_iter()
            .map(|p| (1.0 - self.gamma) * p + self.gamma / n)
            .collect();
        self.committed.clone()
    }

    fn select(&mut self, streams: &DayStreams) -> ExpertId {
        let i = ExpertId(sample_index(&self.committed, &mut selection_stream(streams, self.lane)));
        self.chosen = Some(i);
        i
    }

    fn update(&mut self, transcript: &Transcript) {
        let est = self.estimate(transcript);
        self.weights.add(&est);
    }
}

/// Result of one Exp3 day.
#[derive(Debug, Clone)]
pub struct Exp3Step {
    pub chosen: ExpertId,
    pub estimate: DayEstimate,
    pub ledger: CommLedger,
}

/// Run one full Exp3 day (commit, select, fetch, update) on `exp3`.
pub fn exp3_step(exp3: &mut Exp3, day_costs: &DayLocalCosts, model: CommModel, streams: &DayStreams) -> Result<Exp3Step> {
    exp3.commit();
    let chosen = exp3.select(streams);
    let mut pool = ServerPool::for_experts(day_costs.num_servers(), day_costs.num_experts());
    let mut ledger = CommLedger::new();
    let t = run_day_messaging(exp3, model, &mut pool, day_costs, &mut ledger, streams)?;
    let estimate = exp3.estimate(&t);
    exp3.weights.add(&estimate);
    Ok(Exp3Step { chosen, estimate, ledger })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_expert_is_exact() {
        let costs = DayLocalCosts::from_rows(0, 1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let mut exp3 = Exp3::new(1, 0.1, 0.0, AggregationSpec::Sum, 0);
        let step = exp3_step(&mut exp3, &costs, CommModel::MessagePassing, &DayStreams::new(0, 0, 0)).unwrap();
        assert_eq!(step.chosen, ExpertId(0));
        assert!((step.estimate.0[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn always_two_s_words() {
        let (n, s) = (100, 50);
        let costs = DayLocalCosts::zeros(0, n, s);
        let mut exp3 = Exp3::new(n, 0.1, 0.1, AggregationSpec::Sum, 0);
        for day in 0..5 {
            let step = exp3_step(&mut exp3, &costs, CommModel::MessagePassing, &DayStreams::new(1, 0, day)).unwrap();
            assert_eq!(step.ledger.total_words, 2 * s as u64);
        }
    }

    #[test]
    fn estimate_is_importance_weighted() {
        let costs = DayLocalCosts::from_rows(0, 2, 1, vec![0.5, 0.5]).unwrap();
        let mut exp3 = Exp3::new(2, 0.1, 1.0, AggregationSpec::Sum, 0);
        let step = exp3_step(&mut exp3, &costs, CommModel::MessagePassing, &DayStreams::new(0, 0, 0)).unwrap();
        // gamma = 1 gives p = 1/2 for both experts.
        assert!((step.estimate.0[step.chosen.0] - 1.0).abs() < 1e-12);
        assert_eq!(step.estimate.0[1 - step.chosen.0], 0.0);
    }
}
