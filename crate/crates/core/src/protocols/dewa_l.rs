use crate::aggregation::{gamma_norm, inclusion_probability};
use crate::config::{BaseProtocol, DayLocalCosts, ExpertId, ProtocolId};
use crate::error::Result;
use crate::netsim::{CommLedger, CommModel, Exchange, Link, ServerPool, Transcript};
use crate::rng::{DayStreams, Role};

use super::dewa_m::{max_per_expert, pivot_walk};
use super::{ewa_distribution, sample_index, selection_stream, DayEstimate, Protocol, SampledSet, WeightState};

/// Max-stability protocol for the `l_p` norm in the broadcast model.
///
/// Each server scales `l^p` by an independent `1/E_j`, `E_j ~ Exp(1)`; the
/// running maximum of the scaled values is `||l||_p^p / E` for a single
/// `E ~ Exp(1)`, so its `1/p`-th power divided by `Γ(1 - 1/p)` is unbiased.
#[derive(Debug, Clone)]
pub struct DewaL {
    weights: WeightState,
    budget: usize,
    p: f64,
    gamma: f64,
    lane: u32,
    committed: Vec<f64>,
}

impl DewaL {
    pub fn new(n: usize, budget: usize, eta: f64, p: f64, lane: u32) -> Self {
        let gamma = gamma_norm(p).expect("validated exponent");
        Self { weights: WeightState::new(n, eta), budget, p, gamma, lane, committed: Vec::new() }
    }

    pub fn weights(&self) -> &WeightState {
        &self.weights
    }

    pub fn estimate(&self, transcript: &Transcript) -> DayEstimate {
        let n = self.weights.cum_loss.len();
        let scale = inclusion_probability(n, self.budget) * self.gamma;
        DayEstimate(
            max_per_expert(n, transcript)
                .into_iter()
                .map(|c| c.powf(1.0 / self.p) / scale)
                .collect(),
        )
    }

    fn exchange_with(&mut self, link: &mut Link<'_>, streams: &DayStreams, sampled: &SampledSet) -> Result<()> {
        pivot_walk(link, streams, self.lane, sampled, Some(self.p))
    }
}

impl Exchange for DewaL {
    fn exchange(&mut self, link: &mut Link<'_>, streams: &DayStreams) -> Result<()> {
        let mut coord = streams.lane_stream(Role::Coordinator, self.lane, 0);
        let sampled = SampledSet::draw(link.num_experts(), self.budget, &mut coord);
        self.exchange_with(link, streams, &sampled)
    }
}

impl Protocol for DewaL {
    fn id(&self) -> ProtocolId {
        ProtocolId::plain(BaseProtocol::DewaL)
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

/// One day of DEWA-L estimation for a fixed sample (broadcast). The budget
/// used for the inclusion correction is `budget`.
pub fn dewa_l_estimate(
    day_costs: &DayLocalCosts,
    p: f64,
    budget: usize,
    sampled: &SampledSet,
    streams: &DayStreams,
) -> Result<(DayEstimate, CommLedger)> {
    let n = day_costs.num_experts();
    gamma_norm(p)?;
    let mut proto = DewaL::new(n, budget, 1.0, p, 0);
    let mut pool = ServerPool::for_experts(day_costs.num_servers(), n);
    let mut ledger = CommLedger::new();
    let mut link = Link::new(CommModel::Broadcast, day_costs, &mut pool, &mut ledger);
    proto.exchange_with(&mut link, streams, sampled)?;
    let t = link.take_transcript();
    crate::netsim::assert_memoryless(&pool)?;
    Ok((proto.estimate(&t), ledger))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{aggregate, AggregationSpec};
    use crate::error::Error;

    fn everyone(n: usize) -> SampledSet {
        SampledSet::from_draws(n, (0..n).map(ExpertId).collect())
    }

    #[test]
    fn zero_costs_estimate_zero() {
        let costs = DayLocalCosts::zeros(0, 3, 4);
        let (est, ledger) = dewa_l_estimate(&costs, 2.0, 3, &everyone(3), &DayStreams::new(0, 0, 0)).unwrap();
        assert!(est.0.iter().all(|v| *v == 0.0));
        assert_eq!(ledger.total_words, 4);
    }

    #[test]
    fn rejects_p_at_most_one() {
        let costs = DayLocalCosts::zeros(0, 1, 1);
        let err = dewa_l_estimate(&costs, 1.0, 1, &everyone(1), &DayStreams::new(0, 0, 0)).unwrap_err();
        assert!(matches!(err, Error::BadExponent(_)));
    }

    #[test]
    fn single_server_mean_matches_value() {
        // s=1, everyone sampled: E[l_hat] = v.
        let costs = DayLocalCosts::from_rows(0, 1, 1, vec![0.6]).unwrap();
        let reps = 200_000u64;
        let mean: f64 = (0..reps)
            .map(|r| dewa_l_estimate(&costs, 4.0, 1, &everyone(1), &DayStreams::new(2, r, 0)).unwrap().0 .0[0])
            .sum::<f64>()
            / reps as f64;
        assert!((mean - 0.6).abs() < 0.6 * 0.02, "{mean}");
    }

    #[test]
    fn unbiased_for_the_norm_across_servers() {
        let row = vec![0.1, 0.4, 0.2, 0.3, 0.0];
        let costs = DayLocalCosts::from_rows(0, 1, 5, row.clone()).unwrap();
        let truth = aggregate(&AggregationSpec::Lp { p: 3.0 }, &row).unwrap();
        let reps = 200_000u64;
        let (mut sum, mut sq) = (0.0, 0.0);
        for r in 0..reps {
            let v = dewa_l_estimate(&costs, 3.0, 1, &everyone(1), &DayStreams::new(6, r, 0)).unwrap().0 .0[0];
            sum += v;
            sq += v * v;
        }
        let mean = sum / reps as f64;
        let se = ((sq / reps as f64 - mean * mean) / reps as f64).sqrt();
        assert!((mean - truth).abs() <= 4.0 * se, "{mean} vs {truth} (se {se})");
    }

    #[test]
    fn scaled_maximum_is_exponential() {
        // ||l||_p^p / c should be Exp(1); compare the empirical CDF with
        // 1 - exp(-x) by a Kolmogorov-Smirnov statistic.
        let row = vec![0.5, 0.25, 0.75];
        let p = 2.0;
        let costs = DayLocalCosts::from_rows(0, 1, 3, row.clone()).unwrap();
        let norm_p: f64 = row.iter().map(|v: &f64| v.powf(p)).sum();
        let gamma = gamma_norm(p).unwrap();
        let reps = 20_000u64;
        let mut xs: Vec<f64> = (0..reps)
            .map(|r| {
                let est = dewa_l_estimate(&costs, p, 1, &everyone(1), &DayStreams::new(12, r, 0)).unwrap().0 .0[0];
                let c = (est * gamma).powf(p);
                norm_p / c
            })
            .collect();
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let f = 1.0 - (-x).exp();
                let lo = k as f64 / reps as f64;
                let hi = (k + 1) as f64 / reps as f64;
                (f - lo).abs().max((hi - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value is 1.63 / sqrt(N).
        assert!(d < 1.63 / (reps as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn inclusion_correction_applied() {
        let costs = DayLocalCosts::from_rows(0, 2, 1, vec![0.5, 0.5]).unwrap();
        let only_first = SampledSet::from_draws(2, vec![ExpertId(0)]);
        let (est, _) = dewa_l_estimate(&costs, 2.0, 1, &only_first, &DayStreams::new(0, 0, 0)).unwrap();
        assert_eq!(est.0[1], 0.0);
        assert!(est.0[0] > 0.0);
    }
}
