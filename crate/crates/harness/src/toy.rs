//! The two-basin toy experiment, both arms paired run by run.

use std::path::{Path, PathBuf};

use dplis_core::landscape::{summarize_toy, toy_run, ToyExperiment, ToyRun, ToySummary};
use dplis_core::RngSeed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::with_pool;
use crate::output::{fmt_f64, write_atomic};

pub const RUNS_HEADER: [&str; 4] = ["run", "theta_x", "theta_y", "loss"];
pub const SUMMARY_HEADER: [&str; 6] =
    ["arm", "runs", "capture_fraction", "median_loss", "p99_loss", "mean_sq_grad_norm"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyOutput {
    pub experiment: ToyExperiment,
    pub vanilla: ToySummary,
    pub smoothed: ToySummary,
    #[serde(skip)]
    pub vanilla_runs: Vec<ToyRun>,
    #[serde(skip)]
    pub smoothed_runs: Vec<ToyRun>,
}

/// Frozen toy settings with the configured master seed.
pub fn toy_experiment(cfg: &ExperimentConfig) -> ToyExperiment {
    let mut exp = ToyExperiment::default();
    exp.dp.seed = RngSeed(cfg.seed);
    exp
}

pub fn run_toy(cfg: &ExperimentConfig) -> Result<ToyOutput> {
    if cfg.toy_runs == 0 {
        return Err(HarnessError::Invalid("toy_runs must be at least 1".into()));
    }
    let exp = toy_experiment(cfg);
    let arm = |smoothing: bool| -> Result<Vec<ToyRun>> {
        with_pool(|| {
            (0..cfg.toy_runs)
                .into_par_iter()
                .map(|i| toy_run(i, &exp, smoothing))
                .collect::<dplis_core::Result<Vec<_>>>()
        })?
        .map_err(Into::into)
    };
    let vanilla_runs = arm(false)?;
    let smoothed_runs = arm(true)?;
    Ok(ToyOutput {
        vanilla: summarize_toy(&vanilla_runs, &exp),
        smoothed: summarize_toy(&smoothed_runs, &exp),
        experiment: exp,
        vanilla_runs,
        smoothed_runs,
    })
}

pub fn runs_csv(runs: &[ToyRun]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RUNS_HEADER)?;
    for r in runs {
        w.write_record([r.run.to_string(), fmt_f64(r.theta[0]), fmt_f64(r.theta[1]), fmt_f64(r.loss)])?;
    }
    w.into_inner().map_err(|e| HarnessError::Invalid(e.to_string()))
}

pub fn summary_csv(out: &ToyOutput) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for (name, s) in [("vanilla", &out.vanilla), ("smoothed", &out.smoothed)] {
        w.write_record([
            name.to_string(),
            s.runs.to_string(),
            fmt_f64(s.capture_fraction),
            fmt_f64(s.median_loss),
            fmt_f64(s.p99_loss),
            fmt_f64(s.mean_sq_grad_norm),
        ])?;
    }
    w.into_inner().map_err(|e| HarnessError::Invalid(e.to_string()))
}

/// Writes `summary.csv`, `runs.json` and one run table per arm.
pub fn persist_toy(out: &ToyOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut json = serde_json::to_vec_pretty(out)?;
    json.push(b'\n');
    Ok(vec![
        write_atomic(&dir.join("summary.csv"), &summary_csv(out)?)?,
        write_atomic(&dir.join("runs.json"), &json)?,
        write_atomic(&dir.join("toy_vanilla.csv"), &runs_csv(&out.vanilla_runs)?)?,
        write_atomic(&dir.join("toy_smoothed.csv"), &runs_csv(&out.smoothed_runs)?)?,
    ])
}
