//! Distinguishing a fair bit stream (case A) from one with a single biased
//! coordinate (case B) by running a regret-minimizing protocol on it and
//! thresholding its average incurred cost.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{validate_config, ExperimentConfig, ExpertId};
use crate::costgen::{DiffDistCase, StreamSpec};
use crate::error::{Error, Result};
use crate::rng::{DayStreams, Role};

use super::run_trial;

/// `sqrt(2 ln 24)`.
pub fn diffdist_constant() -> f64 {
    (2.0 * 24f64.ln()).sqrt()
}

/// Derived quantities of the reduction for a target regret `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiffDistParams {
    pub r: f64,
    pub c: f64,
    /// `r (c + 1)`, capped at 1/2 so the biased coordinate stays a valid coin.
    pub eps: f64,
    /// Uncapped `r (c + 1)`.
    pub eps_raw: f64,
    /// `(1 - r c) / 2`.
    pub threshold: f64,
}

impl DiffDistParams {
    /// The largest regret the reduction is stated for: `1 / (2 + c)`.
    pub fn default_r() -> f64 {
        1.0 / (2.0 + diffdist_constant())
    }
}

/// Check the preconditions and derive the reduction's constants.
pub fn diffdist_params(r: f64, horizon: usize) -> Result<DiffDistParams> {
    let c = diffdist_constant();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::PreconditionViolated(format!("R={r} must be positive")));
    }
    if r * c >= 1.0 {
        return Err(Error::PreconditionViolated(format!("R*c={} must be below 1", r * c)));
    }
    if (horizon as f64) * r * r < 1.0 {
        return Err(Error::PreconditionViolated(format!(
            "T*R^2={} must be at least 1",
            horizon as f64 * r * r
        )));
    }
    let eps_raw = r * (c + 1.0);
    Ok(DiffDistParams { r, c, eps: eps_raw.min(0.5), eps_raw, threshold: (1.0 - r * c) / 2.0 })
}

/// Case A iff the average cost exceeds the threshold.
pub fn classify(c_hat: f64, threshold: f64) -> DiffDistCase {
    if c_hat > threshold {
        DiffDistCase::A
    } else {
        DiffDistCase::B
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiffDistOutcome {
    pub case: DiffDistCase,
    pub biased_expert: usize,
    pub c_hat: f64,
    pub verdict: DiffDistCase,
    pub threshold: f64,
}

impl DiffDistOutcome {
    pub fn correct(&self) -> bool {
        self.case == self.verdict
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffDistReport {
    pub params: DiffDistParams,
    pub oracle: String,
    pub outcomes: Vec<DiffDistOutcome>,
    pub accuracy: f64,
}

/// Run `trials` instances, half of each case in shuffled order, using
/// `base.protocol` as the oracle on `(base.n, base.s, base.horizon)`.
pub fn run_diffdist(base: &ExperimentConfig, r: f64, trials: usize) -> Result<DiffDistReport> {
    if trials == 0 {
        return Err(Error::PreconditionViolated("at least one trial is needed".into()));
    }
    let params = diffdist_params(r, base.horizon)?;
    let setup = DayStreams::new(base.seed, 0, 0);
    let mut cases: Vec<DiffDistCase> =
        (0..trials).map(|k| if k < trials / 2 { DiffDistCase::A } else { DiffDistCase::B }).collect();
    cases.shuffle(&mut setup.stream(Role::Harness, 0));
    let mut pick = setup.stream(Role::Harness, 1);
    let biased: Vec<usize> = (0..trials).map(|_| pick.random_range(0..base.n)).collect();

    let configs = cases
        .iter()
        .zip(&biased)
        .map(|(&case, &i)| {
            let mut cfg = base.clone();
            cfg.stream = StreamSpec::diffdist(case, params.eps, ExpertId(i));
            cfg.trials = 1;
            validate_config(cfg).map_err(Error::InvalidConfig)
        })
        .collect::<Result<Vec<_>>>()?;

    let outcomes = configs
        .par_iter()
        .enumerate()
        .map(|(k, cfg)| {
            let trial = run_trial(cfg, k as u64)?;
            let cum = trial.regret.as_ref().map_or(0.0, |r| r.cum_alg_cost);
            let c_hat = cum / cfg.horizon as f64;
            Ok(DiffDistOutcome {
                case: cases[k],
                biased_expert: biased[k],
                c_hat,
                verdict: classify(c_hat, params.threshold),
                threshold: params.threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let accuracy = outcomes.iter().filter(|o| o.correct()).count() as f64 / trials as f64;
    Ok(DiffDistReport { params, oracle: base.protocol.to_string(), outcomes, accuracy })
}
