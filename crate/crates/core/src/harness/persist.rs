use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::json;

use crate::error::{Error, Result};

use super::ExperimentSummary;

/// Write `regret.csv`: header `t,mean_avg_regret,stderr`, one row per day with
/// `t` counted from 1.
pub fn write_regret_csv(summary: &ExperimentSummary, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "t,mean_avg_regret,stderr")?;
        for (t, (m, se)) in summary.mean_regret.iter().zip(&summary.stderr_regret).enumerate() {
            writeln!(out, "{},{m},{se}", t + 1)?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write `regret.csv`, `comm.json` and `config.json` under `out_dir`.
/// `flags` is echoed verbatim into `config.json` when given.
pub fn persist_results(
    summary: &ExperimentSummary,
    out_dir: &Path,
    flags: Option<&BTreeMap<String, String>>,
) -> Result<()> {
    if summary.trials == 0 {
        return Err(Error::Invalid("refusing to persist a result with zero trials".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_regret_csv(summary, &out_dir.join("regret.csv"))?;
    let comm = json!({
        "trials": summary.trials,
        "total_words": summary.ledger.total_words,
        "mean_total_words": summary.mean_total_words,
        "per_kind": summary.ledger.per_kind,
        "ewa_words": super::ewa_words(&summary.config),
        "ewa_ratio": summary.ewa_ratio,
        "memory_checks": summary.memory_checks,
    });
    write_json(&out_dir.join("comm.json"), &comm)?;
    let mut config = json!({
        "config": summary.config,
        "resolved": summary.resolved,
        "seed": summary.config.seed,
        "final_regrets": summary.final_regrets,
    });
    if let Some(flags) = flags {
        config["flags"] = json!(flags);
    }
    write_json(&out_dir.join("config.json"), &config)
}
