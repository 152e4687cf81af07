use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Exp1;

use crate::aggregation::inclusion_probability;
use crate::config::{BaseProtocol, DayLocalCosts, ExpertId, ProtocolId, ServerId};
use crate::error::Result;
use crate::netsim::{CommLedger, CommModel, Exchange, Link, Message, ServerPool, Transcript};
use crate::rng::{DayStreams, Role};

use super::{ewa_distribution, sample_index, selection_stream, DayEstimate, Protocol, SampledSet, WeightState};

/// Number of strict running-maximum updates when scanning `values` in order,
/// starting from 0.
pub fn running_max_updates(values: &[f64]) -> usize {
    let mut best = 0.0;
    let mut updates = 0;
    for &v in values {
        if v > best {
            best = v;
            updates += 1;
        }
    }
    updates
}

/// Walk the servers in a random order, maintaining a public running maximum
/// per sampled expert. With `embed = Some(p)` each server first draws
/// `E_j ~ Exp(1)` and reports `l^p / E_j` instead of `l`.
pub(crate) fn pivot_walk(
    link: &mut Link<'_>,
    streams: &DayStreams,
    lane: u32,
    sampled: &SampledSet,
    embed: Option<f64>,
) -> Result<()> {
    link.require_broadcast("the public running maximum")?;
    let mut coord = streams.lane_stream(Role::Coordinator, lane, 1);
    let mut order: Vec<usize> = (0..link.num_servers()).collect();
    order.shuffle(&mut coord);
    let members = sampled.distinct();
    let mut public_max = vec![0.0f64; link.num_experts()];
    for j in order {
        let mut session = link.open(ServerId(j));
        let inv_e = match embed {
            Some(_) => {
                let mut rng = streams.lane_stream(Role::Server, lane, j as u32);
                let e: f64 = rng.sample(Exp1);
                session.remember(e)?;
                Some(1.0 / e)
            }
            None => None,
        };
        for &i in &members {
            let local = session.local_cost(i);
            let value = match (embed, inv_e) {
                (Some(p), Some(w)) => local.powf(p) * w,
                _ => local,
            };
            if value > public_max[i] {
                session.send(Message::Value { expert: ExpertId(i), server: ServerId(j), value });
                // The payload went out on the broadcast channel, so every
                // server now sees the new maximum.
                public_max[i] = value;
            }
        }
        session.clear_memory();
    }
    Ok(())
}

/// Largest received value per expert (0 when nothing arrived).
pub(crate) fn max_per_expert(n: usize, transcript: &Transcript) -> Vec<f64> {
    let mut best = vec![0.0f64; n];
    for m in &transcript.messages {
        if let Message::Value { expert, value, .. } = m {
            best[expert.0] = best[expert.0].max(*value);
        }
    }
    best
}

/// Random-walk protocol for max aggregation in the broadcast model.
///
/// Sampled experts get their exact maximum; everyone else gets 0. With
/// `unbias` set the estimate is divided by the inclusion probability.
#[derive(Debug, Clone)]
pub struct DewaM {
    weights: WeightState,
    budget: usize,
    unbias: bool,
    lane: u32,
    committed: Vec<f64>,
    sampled: Option<SampledSet>,
}

impl DewaM {
    pub fn new(n: usize, budget: usize, eta: f64, unbias: bool, lane: u32) -> Self {
        Self { weights: WeightState::new(n, eta), budget, unbias, lane, committed: Vec::new(), sampled: None }
    }

    pub fn weights(&self) -> &WeightState {
        &self.weights
    }

    pub fn sampled(&self) -> Option<&SampledSet> {
        self.sampled.as_ref()
    }

    pub fn estimate(&self, transcript: &Transcript) -> DayEstimate {
        let n = self.weights.cum_loss.len();
        let mut est = max_per_expert(n, transcript);
        if self.unbias {
            let incl = inclusion_probability(n, self.budget);
            est.iter_mut().for_each(|v| *v /= incl);
        }
        DayEstimate(est)
    }

    /// Run the walk for a given sample instead of drawing one.
    pub(crate) fn exchange_with(&mut self, link: &mut Link<'_>, streams: &DayStreams, sampled: SampledSet) -> Result<()> {
        let res = pivot_walk(link, streams, self.lane, &sampled, None);
        self.sampled = Some(sampled);
        res
    }
}

impl Exchange for DewaM {
    fn exchange(&mut self, link: &mut Link<'_>, streams: &DayStreams) -> Result<()> {
        let mut coord = streams.lane_stream(Role::Coordinator, self.lane, 0);
        let sampled = SampledSet::draw(link.num_experts(), self.budget, &mut coord);
        self.exchange_with(link, streams, sampled)
    }
}

impl Protocol for DewaM {
    fn id(&self) -> ProtocolId {
        ProtocolId::plain(BaseProtocol::DewaM)
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

/// One day of DEWA-M estimation for a fixed sample `sampled` (broadcast).
pub fn dewa_m_estimate(
    day_costs: &DayLocalCosts,
    sampled: &SampledSet,
    streams: &DayStreams,
) -> Result<(DayEstimate, CommLedger)> {
    let n = day_costs.num_experts();
    let mut proto = DewaM::new(n, sampled.draws.len().max(1), 1.0, false, 0);
    let mut pool = ServerPool::for_experts(day_costs.num_servers(), n);
    let mut ledger = CommLedger::new();
    let mut link = crate::netsim::Link::new(CommModel::Broadcast, day_costs, &mut pool, &mut ledger);
    proto.exchange_with(&mut link, streams, sampled.clone())?;
    let t = link.take_transcript();
    Ok((proto.estimate(&t), ledger))
}

/// Run a DEWA-M day through the generic messaging entry point.
#[cfg(test)]
fn run_full(day_costs: &DayLocalCosts, budget: usize, model: CommModel, streams: &DayStreams) -> Result<(DayEstimate, CommLedger, SampledSet)> {
    use crate::netsim::run_day_messaging;
    let n = day_costs.num_experts();
    let mut proto = DewaM::new(n, budget, 1.0, false, 0);
    let mut pool = ServerPool::for_experts(day_costs.num_servers(), n);
    let mut ledger = CommLedger::new();
    let t = run_day_messaging(&mut proto, model, &mut pool, day_costs, &mut ledger, streams)?;
    Ok((proto.estimate(&t), ledger, proto.sampled.clone().unwrap()))
}
