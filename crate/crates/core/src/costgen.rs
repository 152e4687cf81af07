//! Cost streams: synthetic generators, a strong adaptive test adversary, and
//! replay of recorded cost traces.
//!
//! Dense synthetic costs are clamped to `[0, 1]` first and then scaled by the
//! aggregation's unit share (`1/s` for sums), so every expert's aggregated cost
//! stays in `[0, 1]`. Sparse and two-case bit streams put a single undivided
//! value on one server.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_unchecked, AggregationSpec};
use crate::config::{DayLocalCosts, ExpertId};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiffDistCase {
    /// Every bit is a fair coin.
    A,
    /// One coordinate is biased towards zero.
    B,
}

impl fmt::Display for DiffDistCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiffDistCase::A => "A",
            DiffDistCase::B => "B",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamKind {
    Gaussian { best_mu: f64, other_mu: f64, sigma: f64 },
    Bernoulli { best_p: f64, other_p: f64 },
    /// Each expert's cost sits on one uniformly chosen server per day.
    Sparse { base: Box<StreamKind> },
    /// Two-case bit stream; in case B the best expert's bit is
    /// `Bernoulli(1/2 - eps)`.
    DiffDist { case: DiffDistCase, eps: f64 },
    Trace { path: PathBuf },
    /// Puts full cost on the expert the committed distribution favours most.
    AdaptiveGreedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub kind: StreamKind,
    pub best_expert: ExpertId,
}

impl StreamSpec {
    pub fn gaussian() -> Self {
        Self {
            kind: StreamKind::Gaussian { best_mu: 0.2, other_mu: 0.6, sigma: 1.0 },
            best_expert: ExpertId(0),
        }
    }

    pub fn bernoulli() -> Self {
        Self { kind: StreamKind::Bernoulli { best_p: 0.25, other_p: 0.5 }, best_expert: ExpertId(0) }
    }

    pub fn sparse(self) -> Self {
        Self { kind: StreamKind::Sparse { base: Box::new(self.kind) }, best_expert: self.best_expert }
    }

    pub fn diffdist(case: DiffDistCase, eps: f64, biased: ExpertId) -> Self {
        Self { kind: StreamKind::DiffDist { case, eps }, best_expert: biased }
    }

    pub fn trace(path: impl Into<PathBuf>) -> Self {
        Self { kind: StreamKind::Trace { path: path.into() }, best_expert: ExpertId(0) }
    }

    pub fn adaptive_greedy() -> Self {
        Self { kind: StreamKind::AdaptiveGreedy, best_expert: ExpertId(0) }
    }

    /// Whether the stream ignores the committed distribution.
    pub fn is_oblivious(&self) -> bool {
        !matches!(self.kind, StreamKind::AdaptiveGreedy)
    }
}

/// What the adversary sees before choosing the day's costs.
#[derive(Debug, Clone, Copy)]
pub struct AdversaryContext<'a> {
    pub day: usize,
    pub committed_distribution: &'a [f64],
}

impl AdversaryContext<'_> {
    pub fn check(&self) -> Result<()> {
        let p = self.committed_distribution;
        let total: f64 = p.iter().sum();
        if p.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "committed distribution on day {} is not a probability vector (sum {total})",
                self.day
            )));
        }
        Ok(())
    }
}

/// A loaded `T x n x s` cost tensor, stored day-major then expert-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTensor {
    pub days: usize,
    pub n: usize,
    pub s: usize,
    values: Vec<f64>,
}

impl TraceTensor {
    pub fn get(&self, day: usize, expert: usize, server: usize) -> f64 {
        self.values[(day * self.n + expert) * self.s + server]
    }

    pub fn day(&self, day: usize) -> Result<DayLocalCosts> {
        if day >= self.days {
            return Err(Error::TraceExhausted { day, len: self.days });
        }
        let per_day = self.n * self.s;
        DayLocalCosts::from_rows(day, self.n, self.s, self.values[day * per_day..(day + 1) * per_day].to_vec())
    }
}

pub const TRACE_HEADER: &str = "t,i,j,cost";

/// Load a cost trace: a `t,i,j,cost` header followed by one row per
/// 0-indexed `(day, expert, server)` triple. Values are min-max normalised
/// over the whole file.
pub fn load_trace(path: impl AsRef<Path>) -> Result<TraceTensor> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };

    let mut lines = text.split('\n').enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == TRACE_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header {TRACE_HEADER:?}"))),
    }
    let mut rows = Vec::new();
    for (k, line) in lines {
        let line_no = k + 1;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(line_no, format!("expected 4 fields, found {}", fields.len())));
        }
        let index = |f: &str, name: &str| {
            f.trim().parse::<usize>().map_err(|_| parse_err(line_no, format!("bad {name} index {f:?}")))
        };
        let (t, i, j) = (index(fields[0], "day")?, index(fields[1], "expert")?, index(fields[2], "server")?);
        let cost: f64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad cost {:?}", fields[3])))?;
        if !cost.is_finite() || cost < 0.0 {
            return Err(parse_err(line_no, format!("cost {cost} must be finite and non-negative")));
        }
        rows.push((t, i, j, cost));
    }
    if rows.is_empty() {
        return Err(Error::Shape { path: path.to_path_buf(), message: "trace holds no rows".into() });
    }
    let days = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let n = rows.iter().map(|r| r.1).max().unwrap() + 1;
    let s = rows.iter().map(|r| r.2).max().unwrap() + 1;
    let mut values = vec![f64::NAN; days * n * s];
    for &(t, i, j, cost) in &rows {
        let slot = &mut values[(t * n + i) * s + j];
        if !slot.is_nan() {
            return Err(Error::Shape {
                path: path.to_path_buf(),
                message: format!("duplicate entry for (t={t}, i={i}, j={j})"),
            });
        }
        *slot = cost;
    }
    if let Some(pos) = values.iter().position(|v| v.is_nan()) {
        let (t, rest) = (pos / (n * s), pos % (n * s));
        return Err(Error::Shape {
            path: path.to_path_buf(),
            message: format!("missing entry for (t={t}, i={}, j={}) in a {days}x{n}x{s} grid", rest / s, rest % s),
        });
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in values.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    Ok(TraceTensor { days, n, s, values })
}

/// Write days of costs in the trace format read by [`load_trace`].
pub fn write_trace(path: impl AsRef<Path>, days: &[DayLocalCosts]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for (t, d) in days.iter().enumerate() {
            for i in 0..d.num_experts() {
                for j in 0..d.num_servers() {
                    writeln!(out, "{t},{i},{j},{}", d.get(i, j))?;
                }
            }
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Apply the aggregation to every expert row.
pub fn true_costs(day_costs: &DayLocalCosts, agg: &AggregationSpec) -> Vec<f64> {
    (0..day_costs.num_experts())
        .map(|i| aggregate_unchecked(agg, day_costs.row(i)))
        .collect()
}

/// A ready-to-run cost stream for a fixed `(n, s, aggregation)`.
#[derive(Debug, Clone)]
pub struct CostStream {
    spec: StreamSpec,
    n: usize,
    s: usize,
    agg: AggregationSpec,
    trace: Option<Arc<TraceTensor>>,
}

impl CostStream {
    pub fn new(spec: StreamSpec, n: usize, s: usize, agg: AggregationSpec) -> Result<Self> {
        let trace = match &spec.kind {
            StreamKind::Trace { path } => {
                let t = load_trace(path)?;
                if t.n != n || t.s != s {
                    return Err(Error::Shape {
                        path: path.clone(),
                        message: format!("trace is {}x{} (n x s) but the experiment uses {n}x{s}", t.n, t.s),
                    });
                }
                Some(Arc::new(t))
            }
            StreamKind::Sparse { base } => {
                if !matches!(**base, StreamKind::Gaussian { .. } | StreamKind::Bernoulli { .. }) {
                    return Err(Error::Invalid("sparse streams wrap a gaussian or bernoulli base".into()));
                }
                None
            }
            _ => None,
        };
        Ok(Self { spec, n, s, agg, trace })
    }

    pub fn from_tensor(tensor: TraceTensor, agg: AggregationSpec) -> Self {
        Self {
            spec: StreamSpec::trace("<memory>"),
            n: tensor.n,
            s: tensor.s,
            agg,
            trace: Some(Arc::new(tensor)),
        }
    }

    pub fn spec(&self) -> &StreamSpec {
        &self.spec
    }

    /// Costs for day `ctx.day`. Oblivious kinds ignore the committed
    /// distribution.
    pub fn next_day(&self, ctx: &AdversaryContext<'_>, rng: &mut RngStream) -> Result<DayLocalCosts> {
        let (n, s) = (self.n, self.s);
        let best = self.spec.best_expert.0;
        let share = self.agg.unit_share(s);
        let mut day = DayLocalCosts::zeros(ctx.day, n, s);
        match &self.spec.kind {
            StreamKind::Gaussian { .. } | StreamKind::Bernoulli { .. } => {
                for i in 0..n {
                    for j in 0..s {
                        day.set(i, j, draw_base(&self.spec.kind, i == best, rng) * share);
                    }
                }
            }
            StreamKind::Sparse { base } => {
                for i in 0..n {
                    let v = draw_base(base, i == best, rng);
                    let j = rng.random_range(0..s);
                    day.set(i, j, v);
                }
            }
            StreamKind::DiffDist { case, eps } => {
                let j = rng.random_range(0..s);
                for i in 0..n {
                    let p = if *case == DiffDistCase::B && i == best { (0.5 - eps).max(0.0) } else { 0.5 };
                    if rng.random_bool(p) {
                        day.set(i, j, 1.0);
                    }
                }
            }
            StreamKind::Trace { .. } => {
                let tensor = self.trace.as_ref().expect("trace loaded at construction");
                day = tensor.day(ctx.day)?;
                day.scale(share);
            }
            StreamKind::AdaptiveGreedy => {
                ctx.check()?;
                let target = argmax_lowest(ctx.committed_distribution);
                for j in 0..s {
                    day.set(target, j, share);
                }
            }
        }
        for (expert, value) in true_costs(&day, &self.agg).into_iter().enumerate() {
            if value > 1.0 + 1e-9 {
                return Err(Error::NormalizationViolation { expert, value });
            }
        }
        Ok(day)
    }
}

fn draw_base(kind: &StreamKind, is_best: bool, rng: &mut RngStream) -> f64 {
    match *kind {
        StreamKind::Gaussian { best_mu, other_mu, sigma } => {
            let mu = if is_best { best_mu } else { other_mu };
            let z: f64 = rng.sample(StandardNormal);
            (mu + sigma * z).clamp(0.0, 1.0)
        }
        StreamKind::Bernoulli { best_p, other_p } => {
            let p = if is_best { best_p } else { other_p };
            if rng.random_bool(p) {
                1.0
            } else {
                0.0
            }
        }
        _ => unreachable!("base kinds are gaussian or bernoulli"),
    }
}

fn argmax_lowest(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, Role};

    fn rng(day: u64) -> RngStream {
        derive_stream(11, 0, day, Role::Generator, 0)
    }

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    fn ctx(day: usize, p: &[f64]) -> AdversaryContext<'_> {
        AdversaryContext { day, committed_distribution: p }
    }

    #[test]
    fn gaussian_sum_entries_scaled_by_servers() {
        let (n, s) = (100, 50);
        let stream = CostStream::new(StreamSpec::gaussian(), n, s, AggregationSpec::Sum).unwrap();
        let p = uniform(n);
        for t in 0..5 {
            let d = stream.next_day(&ctx(t, &p), &mut rng(t as u64)).unwrap();
            assert!(d.values().iter().all(|v| (0.0..=1.0 / 50.0).contains(v)));
            assert!(true_costs(&d, &AggregationSpec::Sum).iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn gaussian_max_entries_not_divided() {
        let stream = CostStream::new(StreamSpec::gaussian(), 10, 5, AggregationSpec::Max).unwrap();
        let d = stream.next_day(&ctx(0, &uniform(10)), &mut rng(0)).unwrap();
        assert!(d.values().iter().any(|v| *v > 1.0 / 5.0));
    }

    #[test]
    fn sparse_rows_hold_one_value() {
        let (n, s) = (40, 8);
        let stream = CostStream::new(StreamSpec::bernoulli().sparse(), n, s, AggregationSpec::Sum).unwrap();
        let p = uniform(n);
        for t in 0..20 {
            let d = stream.next_day(&ctx(t, &p), &mut rng(t as u64)).unwrap();
            for i in 0..n {
                assert!(d.row(i).iter().filter(|v| **v != 0.0).count() <= 1);
            }
            for c in true_costs(&d, &AggregationSpec::Sum) {
                assert!(c == 0.0 || c == 1.0);
            }
            // The maximum of a sparse row is the single held cost.
            let maxes = true_costs(&d, &AggregationSpec::Max);
            let sums = true_costs(&d, &AggregationSpec::Sum);
            assert_eq!(maxes, sums);
        }
    }

    #[test]
    fn all_zero_day_has_zero_true_costs() {
        let d = DayLocalCosts::zeros(0, 4, 3);
        assert_eq!(true_costs(&d, &AggregationSpec::Lp { p: 3.0 }), vec![0.0; 4]);
    }

    #[test]
    fn oblivious_streams_ignore_commitment() {
        let n = 6;
        let stream = CostStream::new(StreamSpec::gaussian(), n, 4, AggregationSpec::Sum).unwrap();
        let mut skewed = vec![0.0; n];
        skewed[3] = 1.0;
        let a = stream.next_day(&ctx(2, &uniform(n)), &mut rng(2)).unwrap();
        let b = stream.next_day(&ctx(2, &skewed), &mut rng(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adaptive_greedy_follows_the_argmax() {
        let n = 5;
        let stream = CostStream::new(StreamSpec::adaptive_greedy(), n, 3, AggregationSpec::Sum).unwrap();
        let p = [0.1, 0.4, 0.1, 0.3, 0.1];
        let d = stream.next_day(&ctx(0, &p), &mut rng(0)).unwrap();
        assert_eq!(true_costs(&d, &AggregationSpec::Sum), vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        let q = [0.1, 0.3, 0.1, 0.4, 0.1];
        let e = stream.next_day(&ctx(0, &q), &mut rng(0)).unwrap();
        let costs = true_costs(&e, &AggregationSpec::Sum);
        assert!((costs[3] - 1.0).abs() < 1e-12 && costs[1] == 0.0);
        // Ties go to the lowest index.
        let f = stream.next_day(&ctx(0, &uniform(n)), &mut rng(0)).unwrap();
        assert!((true_costs(&f, &AggregationSpec::Sum)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_greedy_scales_for_lp() {
        let stream = CostStream::new(StreamSpec::adaptive_greedy(), 3, 7, AggregationSpec::Lp { p: 3.0 }).unwrap();
        let d = stream.next_day(&ctx(0, &uniform(3)), &mut rng(0)).unwrap();
        let c = true_costs(&d, &AggregationSpec::Lp { p: 3.0 });
        assert!((c[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diffdist_case_b_bias() {
        // Monte Carlo mean of Bernoulli(0.3) over 5000 days: SE ~ 0.0065.
        let (n, s, days) = (50, 4, 5000);
        let spec = StreamSpec::diffdist(DiffDistCase::B, 0.2, ExpertId(7));
        let stream = CostStream::new(spec, n, s, AggregationSpec::Sum).unwrap();
        let p = uniform(n);
        let mut hits = vec![0usize; n];
        for t in 0..days {
            let d = stream.next_day(&ctx(t, &p), &mut rng(t as u64)).unwrap();
            let occupied = (0..s).filter(|&j| (0..n).any(|i| d.get(i, j) != 0.0)).count();
            assert!(occupied <= 1);
            for (i, c) in true_costs(&d, &AggregationSpec::Sum).into_iter().enumerate() {
                hits[i] += c as usize;
            }
        }
        let mean_biased = hits[7] as f64 / days as f64;
        assert!((mean_biased - 0.3).abs() < 0.02, "{mean_biased}");
        let se = (0.25 / days as f64).sqrt();
        for (i, h) in hits.iter().enumerate().filter(|(i, _)| *i != 7) {
            let m = *h as f64 / days as f64;
            assert!((m - 0.5).abs() < 4.0 * se, "expert {i}: {m}");
        }
    }

    #[test]
    fn diffdist_case_a_is_fair() {
        let (n, days) = (20, 4000);
        let spec = StreamSpec::diffdist(DiffDistCase::A, 0.2, ExpertId(3));
        let stream = CostStream::new(spec, n, 3, AggregationSpec::Sum).unwrap();
        let p = uniform(n);
        let mut hits = vec![0.0; n];
        for t in 0..days {
            let d = stream.next_day(&ctx(t, &p), &mut rng(t as u64)).unwrap();
            for (h, c) in hits.iter_mut().zip(true_costs(&d, &AggregationSpec::Sum)) {
                *h += c;
            }
        }
        let se = (0.25 / days as f64).sqrt();
        for h in hits {
            assert!((h / days as f64 - 0.5).abs() < 4.0 * se);
        }
    }

    #[test]
    fn gaussian_sum_mean_matches_truncated_normal() {
        // Independent Monte Carlo (10^7 draws, numpy) gives
        // E[clamp(N(0.6,1), 0, 1)] = 0.53822 and E[clamp(N(0.2,1), 0, 1)] = 0.38661.
        let (n, s) = (100, 50);
        let stream = CostStream::new(StreamSpec::gaussian(), n, s, AggregationSpec::Sum).unwrap();
        let p = uniform(n);
        let (mut other, mut best, days) = (0.0, 0.0, 200);
        for t in 0..days {
            let d = stream.next_day(&ctx(t, &p), &mut rng(t as u64)).unwrap();
            let c = true_costs(&d, &AggregationSpec::Sum);
            best += c[0];
            other += c[1..].iter().sum::<f64>() / (n - 1) as f64;
        }
        let (best, other) = (best / days as f64, other / days as f64);
        assert!((other - 0.53822).abs() < 0.003, "{other}");
        assert!((best - 0.38661).abs() < 0.01, "{best}");
    }

    #[test]
    fn trace_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let days = vec![
            DayLocalCosts::from_rows(0, 2, 2, vec![0.0, 0.5, 1.0, 0.5]).unwrap(),
            DayLocalCosts::from_rows(1, 2, 2, vec![1.0, 0.0, 0.5, 0.0]).unwrap(),
        ];
        write_trace(&path, &days).unwrap();
        let tensor = load_trace(&path).unwrap();
        assert_eq!((tensor.days, tensor.n, tensor.s), (2, 2, 2));
        for (t, d) in days.iter().enumerate() {
            assert_eq!(&tensor.day(t).unwrap().values(), &d.values());
        }
        assert!(matches!(tensor.day(2), Err(Error::TraceExhausted { day: 2, len: 2 })));
    }

    #[test]
    fn trace_missing_triple_is_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gap.csv");
        fs::write(&path, "t,i,j,cost\n0,0,0,0.1\n0,0,1,0.2\n0,1,0,0.3\n").unwrap();
        assert!(matches!(load_trace(&path), Err(Error::Shape { .. })));
    }

    #[test]
    fn trace_negative_cost_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("neg.csv");
        fs::write(&path, "t,i,j,cost\n0,0,0,0.1\n0,0,1,-0.2\n").unwrap();
        match load_trace(&path) {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trace_normalised_globally() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("acc.csv");
        fs::write(&path, "t,i,j,cost\n0,0,0,2\n0,1,0,4\n1,0,0,3\n1,1,0,6\n").unwrap();
        let t = load_trace(&path).unwrap();
        assert_eq!(t.get(0, 0, 0), 0.0);
        assert_eq!(t.get(1, 1, 0), 1.0);
        assert_eq!(t.get(0, 1, 0), 0.5);
    }

    #[test]
    fn trace_stream_scales_for_sum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let days = vec![DayLocalCosts::from_rows(0, 1, 2, vec![1.0, 0.0]).unwrap()];
        write_trace(&path, &days).unwrap();
        let stream = CostStream::new(StreamSpec::trace(&path), 1, 2, AggregationSpec::Sum).unwrap();
        let d = stream.next_day(&ctx(0, &[1.0]), &mut rng(0)).unwrap();
        assert_eq!(d.values(), &[0.5, 0.0]);
        assert!(matches!(
            stream.next_day(&ctx(1, &[1.0]), &mut rng(1)),
            Err(Error::TraceExhausted { .. })
        ));
    }
}
