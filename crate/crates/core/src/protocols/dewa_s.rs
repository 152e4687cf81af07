use rand::Rng;

use crate::config::{BaseProtocol, DayLocalCosts, ExpertId, ProtocolId, ServerId};
use crate::error::{Error, Result};
use crate::netsim::{run_day_messaging, CommLedger, CommModel, Exchange, Link, Message, ServerPool, Transcript};
use crate::rng::{DayStreams, Role};

use super::{ewa_distribution, sample_index, selection_stream, DayEstimate, Protocol, WeightState};

/// Sampling protocol for sum aggregation.
///
/// Server `j` keeps `(i, j)` with probability `b_e/n` and fires it with
/// probability `l_{i,j}`; each fired tuple costs one word and the coordinator
/// scales the count by `n/b_e`, which is unbiased for `l_i`. For the square of
/// the sum (`q = 2`) two independent panels are sampled and their estimates
/// multiplied.
#[derive(Debug, Clone)]
pub struct DewaS {
    weights: WeightState,
    budget: usize,
    q: u32,
    lane: u32,
    committed: Vec<f64>,
}

impl DewaS {
    pub fn new(n: usize, budget: usize, eta: f64, q: u32, lane: u32) -> Self {
        assert!(q == 1 || q == 2, "power-of-sum estimator implemented for q <= 2");
        Self { weights: WeightState::new(n, eta), budget, q, lane, committed: Vec::new() }
    }

    pub fn weights(&self) -> &WeightState {
        &self.weights
    }

    pub fn estimate(&self, transcript: &Transcript) -> DayEstimate {
        let n = self.weights.cum_loss.len();
        let mut counts = vec![[0u64; 2]; n];
        for m in &transcript.messages {
            if let Message::Tuple { expert, panel, .. } = m {
                counts[expert.0][*panel as usize] += 1;
            }
        }
        let scale = n as f64 / self.budget as f64;
        DayEstimate(
            counts
                .into_iter()
                .map(|[a, b]| match self.q {
                    1 => scale * a as f64,
                    _ => scale * a as f64 * scale * b as f64,
                })
                .collect(),
        )
    }
}

impl Exchange for DewaS {
    fn exchange(&mut self, link: &mut Link<'_>, streams: &DayStreams) -> Result<()> {
        let n = link.num_experts();
        let keep = self.budget as f64 / n as f64;
        let always_keep = self.budget == n;
        for j in 0..link.num_servers() {
            let mut rng = streams.lane_stream(Role::Server, self.lane, j as u32);
            let mut session = link.open(ServerId(j));
            for panel in 0..self.q as u8 {
                for i in 0..n {
                    let cost = session.local_cost(i);
                    if cost > 1.0 {
                        return Err(Error::BadLocalCost { expert: i, server: j, value: cost });
                    }
                    let alpha = always_keep || rng.random_bool(keep);
                    if alpha && rng.random::<f64>() < cost {
                        session.remember(i as f64)?;
                        session.send(Message::Tuple { expert: ExpertId(i), server: ServerId(j), panel });
                    }
                }
            }
            session.clear_memory();
        }
        Ok(())
    }
}

impl Protocol for DewaS {
    fn id(&self) -> ProtocolId {
        ProtocolId::plain(BaseProtocol::DewaS)
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

/// One day of DEWA-S estimation on `day_costs` (message-passing).
pub fn dewa_s_estimate(
    day_costs: &DayLocalCosts,
    budget: usize,
    q: u32,
    streams: &DayStreams,
) -> Result<(DayEstimate, CommLedger)> {
    let mut proto = DewaS::new(day_costs.num_experts(), budget, 1.0, q, 0);
    let mut pool = ServerPool::for_experts(day_costs.num_servers(), day_costs.num_experts());
    let mut ledger = CommLedger::new();
    let t = run_day_messaging(&mut proto, CommModel::MessagePassing, &mut pool, day_costs, &mut ledger, streams)?;
    Ok((proto.estimate(&t), ledger))
}
