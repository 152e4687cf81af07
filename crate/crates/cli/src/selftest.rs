//! Fast invariant checks for `dexperts selftest`.

use itertools::Itertools;

use dexperts_core::harness::{ewa_words, run_trial};
use dexperts_core::protocols::{dewa_s_estimate, running_max_updates};
use dexperts_core::{BaseProtocol, DayLocalCosts, DayStreams, ExperimentConfig, ProtocolId, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Gamma normalisation under test; swapped out to prove the check bites.
pub type GammaFn = fn(f64) -> Result<f64>;

fn pivot() -> Check {
    let mut bad = Vec::new();
    for s in 2..=6usize {
        let values: Vec<f64> = (1..=s).map(|v| v as f64).collect();
        let (mut orders, mut total) = (0u64, 0u64);
        for order in values.iter().copied().permutations(s) {
            orders += 1;
            total += 1u64 << running_max_updates(&order);
        }
        if total != (s as u64 + 1) * orders {
            bad.push(s);
        }
    }
    Check { name: "pivot enumeration", pass: bad.is_empty(), detail: format!("E[2^X] = s+1 for s=2..6, failures {bad:?}") }
}

fn unbiased() -> Check {
    let costs = DayLocalCosts::from_rows(0, 4, 3, vec![0.1, 0.2, 0.3, 0.0, 0.0, 0.0, 0.3, 0.3, 0.3, 0.05, 0.0, 0.1])
        .expect("fixed matrix is valid");
    let truth = [0.6, 0.0, 0.9, 0.15];
    let reps = 20_000u64;
    let (mut sum, mut sq) = ([0.0; 4], [0.0; 4]);
    for r in 0..reps {
        let (e, _) = dewa_s_estimate(&costs, 2, 1, &DayStreams::new(17, r, 0)).expect("valid costs");
        for i in 0..4 {
            sum[i] += e.0[i];
            sq[i] += e.0[i] * e.0[i];
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        let mean = sum[i] / reps as f64;
        let se = ((sq[i] / reps as f64 - mean * mean) / reps as f64).sqrt();
        let z = if se > 0.0 { (mean - truth[i]).abs() / se } else if mean == truth[i] { 0.0 } else { f64::INFINITY };
        worst = worst.max(z);
    }
    Check { name: "dewa-s unbiasedness", pass: worst <= 4.0, detail: format!("worst deviation {worst:.2} standard errors") }
}

fn gamma(gamma_norm: GammaFn) -> Check {
    let want = [(2.0, std::f64::consts::PI.sqrt()), (4.0 / 3.0, 3.625_609_908_221_908)];
    let mut detail = Vec::new();
    let mut pass = true;
    for (p, v) in want {
        match gamma_norm(p) {
            Ok(g) => {
                pass &= (g - v).abs() <= 1e-6;
                detail.push(format!("p={p:.4}: {g:.10}"));
            }
            Err(e) => {
                pass = false;
                detail.push(format!("p={p:.4}: {e}"));
            }
        }
    }
    Check { name: "gamma values", pass, detail: detail.join(", ") }
}

fn ledger() -> Check {
    let mut cfg = ExperimentConfig::new(ProtocolId::plain(BaseProtocol::Ewa));
    cfg.horizon = 200;
    let mut exp3 = cfg.clone();
    exp3.protocol = ProtocolId::plain(BaseProtocol::Exp3);
    let words = |c: &ExperimentConfig| run_trial(c, 0).map(|r| r.ledger.total_words);
    let (want_ewa, want_exp3) = (ewa_words(&cfg), 2 * (cfg.s * cfg.horizon) as u64);
    match (words(&cfg), words(&exp3)) {
        (Ok(a), Ok(b)) => Check {
            name: "ledger exactness",
            pass: a == want_ewa && b == want_exp3,
            detail: format!("ewa {a} words (want {want_ewa}), exp3 {b} (want {want_exp3})"),
        },
        (Err(e), _) | (_, Err(e)) => Check { name: "ledger exactness", pass: false, detail: e.to_string() },
    }
}

/// Run every check with the given gamma normalisation.
pub fn run_checks(gamma_norm: GammaFn) -> Vec<Check> {
    vec![pivot(), unbiased(), gamma(gamma_norm), ledger()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_pass_on_the_real_gamma() {
        let checks = run_checks(dexperts_core::gamma_norm);
        assert!(checks.iter().all(|c| c.pass), "{checks:?}");
    }

    #[test]
    fn corrupted_gamma_is_caught() {
        fn off_by_a_bit(p: f64) -> Result<f64> {
            dexperts_core::gamma_norm(p).map(|g| g * 1.001)
        }
        let checks = run_checks(off_by_a_bit);
        let g = checks.iter().find(|c| c.name == "gamma values").unwrap();
        assert!(!g.pass);
        assert!(checks.iter().filter(|c| c.name != "gamma values").all(|c| c.pass));
    }
}
