//! Privacy spend of a DP-SGD configuration, and the step count a budget allows.

use std::path::{Path, PathBuf};

use dplis_core::accountant::{steps_for_budget, PrivacySpend};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{fmt_f64, write_atomic};

pub const SUMMARY_HEADER: [&str; 7] = ["dataset_size", "q", "noise_multiplier", "steps", "delta", "epsilon", "order"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountantOutput {
    pub dataset_size: usize,
    pub spend: PrivacySpend,
    /// Largest `T` within `target_epsilon`, when one is configured.
    pub steps_for_target: Option<u64>,
}

/// Uses `subset_size` as the dataset size `N`, so `q = batch / N`.
pub fn run_accountant(cfg: &ExperimentConfig) -> Result<AccountantOutput> {
    let n = cfg.subset_size;
    if n == 0 || cfg.batch > n {
        return Err(HarnessError::Invalid("accountant needs 0 < batch <= subset_size".into()));
    }
    let q = cfg.batch as f64 / n as f64;
    let steps_for_target =
        cfg.target_epsilon.map(|e| steps_for_budget(e, cfg.delta, q, cfg.noise_multiplier)).transpose()?;
    let steps = steps_for_target.unwrap_or(cfg.steps);
    Ok(AccountantOutput {
        dataset_size: n,
        spend: PrivacySpend::compute(q, cfg.noise_multiplier, steps, cfg.delta)?,
        steps_for_target,
    })
}

pub fn persist_accountant(out: &AccountantOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let s = &out.spend;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    w.write_record([
        out.dataset_size.to_string(),
        fmt_f64(s.q),
        fmt_f64(s.sigma),
        s.steps.to_string(),
        fmt_f64(s.delta),
        fmt_f64(s.epsilon),
        s.order.map(|o| o.to_string()).unwrap_or_default(),
    ])?;
    let csv = w.into_inner().map_err(|e| HarnessError::Invalid(e.to_string()))?;
    let mut json = serde_json::to_vec_pretty(out)?;
    json.push(b'\n');
    Ok(vec![write_atomic(&dir.join("summary.csv"), &csv)?, write_atomic(&dir.join("runs.json"), &json)?])
}
