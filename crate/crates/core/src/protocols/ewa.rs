use crate::aggregation::{aggregate_unchecked, AggregationSpec};
use crate::config::{BaseProtocol, ExpertId, ProtocolId, ServerId};
use crate::error::Result;
use crate::netsim::{Exchange, Link, Message, Transcript};
use crate::rng::DayStreams;

use super::{ewa_distribution, sample_index, selection_stream, Protocol, WeightState};

/// Full-information exponential weights: every server ships its whole cost
/// column every day.
#[derive(Debug, Clone)]
pub struct Ewa {
    weights: WeightState,
    agg: AggregationSpec,
    lane: u32,
    committed: Vec<f64>,
}

impl Ewa {
    pub fn new(n: usize, eta: f64, agg: AggregationSpec, lane: u32) -> Self {
        Self { weights: WeightState::new(n, eta), agg, lane, committed: Vec::new() }
    }

    pub fn weights(&self) -> &WeightState {
        &self.weights
    }
}

impl Exchange for Ewa {
    fn exchange(&mut self, link: &mut Link<'_>, _streams: &DayStreams) -> Result<()> {
        let n = link.num_experts();
        for j in 0..link.num_servers() {
            let mut session = link.open(ServerId(j));
            let values = (0..n).map(|i| session.local_cost(i)).collect();
            session.send(Message::Row { server: ServerId(j), values });
        }
        Ok(())
    }
}

impl Protocol for Ewa {
    fn id(&self) -> ProtocolId {
        ProtocolId::plain(BaseProtocol::Ewa)
    }

    fn commit(&mut self) -> Vec<f64> {
        self.committed = ewa_distribution(&self.weights);
        self.committed.clone()
    }

    fn select(&mut self, streams: &DayStreams) -> ExpertId {
        ExpertId(sample_index(&self.committed, &mut selection_stream(streams, self.lane)))
    }

    fn update(&mut self, transcript: &Transcript) {
        let n = self.weights.cum_loss.len();
        let columns: Vec<&Vec<f64>> = transcript
            .messages
            .iter()
            .filter_map(|m| match m {
                Message::Row { values, .. } => Some(values),
                _ => None,
            })
            .collect();
        let mut row = vec![0.0; columns.len()];
        for i in 0..n {
            for (r, col) in row.iter_mut().zip(&columns) {
                *r = col[i];
            }
            self.weights.cum_loss[i] += aggregate_unchecked(&self.agg, &row);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DayLocalCosts;
    use crate::netsim::CommModel;
    use crate::protocols::testutil::one_day;

    #[test]
    fn charges_n_s_plus_s_words() {
        let (n, s) = (100, 50);
        let costs = DayLocalCosts::zeros(0, n, s);
        let mut ewa = Ewa::new(n, 0.1, AggregationSpec::Sum, 0);
        ewa.commit();
        let (t, ledger) = one_day(&mut ewa, CommModel::MessagePassing, &costs, &DayStreams::new(0, 0, 0));
        assert_eq!(t.len(), s);
        assert_eq!(ledger.total_words, 5_050);
    }

    #[test]
    fn accumulates_true_aggregated_costs() {
        let costs = DayLocalCosts::from_rows(0, 2, 3, vec![0.1, 0.2, 0.3, 0.0, 0.5, 0.0]).unwrap();
        let mut ewa = Ewa::new(2, 1.0, AggregationSpec::Max, 0);
        ewa.commit();
        let (t, _) = one_day(&mut ewa, CommModel::Broadcast, &costs, &DayStreams::new(0, 0, 0));
        ewa.update(&t);
        assert_eq!(ewa.weights().cum_loss, vec![0.3, 0.5]);
    }
}
