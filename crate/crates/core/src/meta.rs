//! Meta-expert layer: `K` independent copies of a base protocol, combined by
//! exponential weights over the true costs of each copy's pick.

use crate::aggregation::{aggregate_unchecked, AggregationSpec};
use crate::config::{ExpertId, ProtocolId, ServerId};
use crate::error::Result;
use crate::netsim::{Exchange, Link, Message, Transcript};
use crate::protocols::{ewa_distribution, sample_index, Protocol, WeightState};
use crate::rng::{DayStreams, Role};

/// `ceil(2 log10 T)`, at least 1.
pub fn default_k(horizon: usize) -> usize {
    ((2.0 * (horizon.max(1) as f64).log10()).ceil() as usize).max(1)
}

pub struct Meta {
    id: ProtocolId,
    children: Vec<Box<dyn Protocol>>,
    agg: AggregationSpec,
    meta_weights: WeightState,
    mixture: Vec<Vec<f64>>,
    committed: Vec<f64>,
    picks: Vec<ExpertId>,
    chunks: Vec<Transcript>,
}

impl Meta {
    pub fn new(id: ProtocolId, children: Vec<Box<dyn Protocol>>, eta_meta: f64, agg: AggregationSpec) -> Self {
        assert!(!children.is_empty(), "meta layer needs at least one child");
        let k = children.len();
        Self {
            id,
            children,
            agg,
            meta_weights: WeightState::new(k, eta_meta),
            mixture: Vec::new(),
            committed: Vec::new(),
            picks: Vec::new(),
            chunks: Vec::new(),
        }
    }

    pub fn num_children(&self) -> usize {
        self.children.len()
    }

    /// Cumulative true cost of each child's picks.
    pub fn meta_losses(&self) -> &[f64] {
        &self.meta_weights.cum_loss
    }

    /// Today's weights over children.
    pub fn child_weights(&self) -> Vec<f64> {
        ewa_distribution(&self.meta_weights)
    }

    /// Each child's pick today (after `select`).
    pub fn picks(&self) -> &[ExpertId] {
        &self.picks
    }
}

impl std::fmt::Debug for Meta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Meta")
            .field("id", &self.id)
            .field("k", &self.children.len())
            .field("meta_losses", &self.meta_weights.cum_loss)
            .finish()
    }
}

impl Exchange for Meta {
    fn exchange(&mut self, link: &mut Link<'_>, streams: &DayStreams) -> Result<()> {
        self.chunks.clear();
        for child in &mut self.children {
            child.exchange(link, streams)?;
            self.chunks.push(link.take_transcript());
        }
        // Fetch the true cost of every child's pick from all servers.
        for &pick in &self.picks {
            for j in 0..link.num_servers() {
                let mut session = link.open(ServerId(j));
                let value = session.local_cost(pick.0);
                session.send(Message::Value { expert: pick, server: ServerId(j), value });
            }
        }
        Ok(())
    }
}

impl Protocol for Meta {
    fn id(&self) -> ProtocolId {
        self.id
    }

    fn commit(&mut self) -> Vec<f64> {
        self.mixture = self.children.iter_mut().map(|c| c.commit()).collect();
        let w = self.child_weights();
        let n = self.mixture[0].len();
        let mut p = vec![0.0; n];
        for (wk, pk) in w.iter().zip(&self.mixture) {
            for (a, b) in p.iter_mut().zip(pk) {
                *a += wk * b;
            }
        }
        self.committed = p;
        self.committed.clone()
    }

    fn select(&mut self, streams: &DayStreams) -> ExpertId {
        self.picks = self.children.iter_mut().map(|c| c.select(streams)).collect();
        let mut rng = streams.stream(Role::Meta, 0);
        let k = sample_index(&self.child_weights(), &mut rng);
        self.picks[k]
    }

    fn update(&mut self, transcript: &Transcript) {
        for (child, chunk) in self.children.iter_mut().zip(&self.chunks) {
            child.update(chunk);
        }
        let values: Vec<f64> = transcript
            .messages
            .iter()
            .filter_map(|m| match m {
                Message::Value { value, .. } => Some(*value),
                _ => None,
            })
            .collect();
        // Queries arrive child by child, s values each.
        let s = values.len() / self.children.len();
        if s > 0 {
            for (loss, row) in self.meta_weights.cum_loss.iter_mut().zip(values.chunks(s)) {
                *loss += aggregate_unchecked(&self.agg, row);
            }
        }
        self.chunks.clear();
    }
}
