//! Multi-seed DP-SGD experiments and their persisted results.

use std::io::Write;
use std::path::{Path, PathBuf};

use dplis_core::accountant::{steps_for_budget, PrivacySpend};
use dplis_core::data::Dataset;
use dplis_core::dp::{train, DpSgdConfig, EvalPoint, RunRecord, TrainOptions};
use dplis_core::landscape::{c_eps_sharpness, default_alphas, filter_normalized_slice, SliceRow};
use dplis_core::nn::{MlpObjective, MlpSpec, ParamVector};
use dplis_core::stats::{generalization_gap, median, StabilitySummary};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::datasets::load_task_data;
use crate::error::{HarnessError, Result};
use crate::output::{fmt_f64, write_atomic};

pub const SUMMARY_HEADER: [&str; 8] =
    ["seed", "epsilon", "accuracy", "loss", "best_accuracy", "generalization_gap", "clip_violations", "sharpness"];
pub const SLICE_HEADER: [&str; 3] = ["alpha", "loss", "accuracy"];

/// One seed's outcome. Final parameters are kept in memory only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub run: usize,
    pub seed: u64,
    pub config: DpSgdConfig,
    pub spend: PrivacySpend,
    /// Accuracy of the final iterate; this is the reported figure.
    pub accuracy: f64,
    pub loss: f64,
    /// Best test accuracy among the periodic evaluations, kept for reference.
    pub best_accuracy: f64,
    pub generalization_gap: f64,
    pub clip_violations: u64,
    pub max_clipped_norm: f64,
    pub sharpness: Option<f64>,
    pub evals: Vec<EvalPoint>,
    #[serde(skip)]
    pub params: Option<ParamVector>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub train_size: usize,
    pub test_size: usize,
    pub results: Vec<SeedResult>,
    pub accuracy: Option<StabilitySummary>,
    pub median_sharpness: Option<f64>,
    /// `None` when every seed finished; otherwise the first failure.
    pub failure: Option<String>,
    #[serde(skip)]
    pub slice: Option<Vec<SliceRow>>,
}

impl ExperimentOutput {
    pub fn accuracies(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.accuracy).collect()
    }
}

/// Number of worker threads: `DPLIS_THREADS` if set, otherwise rayon's default.
pub fn worker_threads() -> Option<usize> {
    std::env::var("DPLIS_THREADS").ok()?.parse().ok().filter(|&n| n > 0)
}

/// Runs `f` inside a pool sized by [`worker_threads`].
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_threads() {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| HarnessError::Invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn model_spec(cfg: &ExperimentConfig, data: &Dataset) -> Result<MlpSpec> {
    Ok(MlpSpec::new(data.input_dim(), cfg.hidden_layers(), data.n_classes(), cfg.activation)?)
}

/// DP-SGD settings of run `i`, with `T` from the accountant when a target ε is set.
pub fn dp_config(cfg: &ExperimentConfig, dataset_size: usize, i: usize) -> Result<DpSgdConfig> {
    let mut dp = DpSgdConfig {
        lr: cfg.lr,
        expected_batch: cfg.batch,
        noise_multiplier: cfg.noise_multiplier,
        clip: cfg.clip,
        steps: cfg.steps,
        smoothing_radius: cfg.radius,
        smoothing_samples: cfg.smoothing_samples,
        dataset_size,
        seed: cfg.run_seed(i),
        delta: cfg.delta,
    };
    if let Some(eps) = cfg.target_epsilon {
        dp.steps = steps_for_budget(eps, cfg.delta, dp.sampling_rate(), cfg.noise_multiplier)?;
    }
    dp.validate()?;
    Ok(dp)
}

fn run_seed(
    cfg: &ExperimentConfig,
    spec: &MlpSpec,
    train_set: &Dataset,
    test: &Dataset,
    i: usize,
) -> Result<SeedResult> {
    let dp = dp_config(cfg, train_set.len(), i)?;
    let opts = TrainOptions { eval_every: cfg.eval_every, audit_clipping: cfg.audit_clipping };
    let rec: RunRecord = train(spec, train_set, test, &dp, opts)?;
    let gap = generalization_gap(&rec.final_params, spec, train_set, test)?;
    let sharpness = match cfg.sharpness {
        Some(mut opts) => {
            let n = if cfg.sharpness_subset == 0 { train_set.len() } else { cfg.sharpness_subset.min(train_set.len()) };
            let subset = train_set.take(n);
            let f = MlpObjective::new(spec, &subset)?;
            opts.seed = dp.seed;
            Some(c_eps_sharpness(&f, rec.final_params.values(), &opts)?.c_eps_sharpness)
        }
        None => None,
    };
    Ok(SeedResult {
        run: i,
        seed: dp.seed.0,
        spend: rec.spend,
        accuracy: rec.test_accuracy,
        loss: rec.test_loss,
        best_accuracy: rec.best_accuracy,
        generalization_gap: gap,
        clip_violations: rec.clip_violations,
        max_clipped_norm: rec
            .steps
            .iter()
            .map(|s| s.audited_max_norm.unwrap_or(s.max_clipped_norm))
            .fold(0.0, f64::max),
        sharpness,
        evals: rec.evals,
        params: Some(rec.final_params),
        config: dp,
    })
}

/// Trains `n_seeds` models (seed `i` is `master + i`) and aggregates them.
/// Seed failures do not discard finished seeds; the first one is recorded.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let (train_set, test) = load_task_data(cfg)?;
    let spec = model_spec(cfg, &train_set)?;
    let outcomes: Vec<Result<SeedResult>> =
        with_pool(|| (0..cfg.n_seeds).into_par_iter().map(|i| run_seed(cfg, &spec, &train_set, &test, i)).collect())?;
    let mut results = Vec::new();
    let mut failure = None;
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(e) if failure.is_none() => failure = Some(e.to_string()),
            Err(_) => {}
        }
    }
    let acc: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let sharp: Vec<f64> = results.iter().filter_map(|r| r.sharpness).collect();
    let slice = match (cfg.task, results.first().and_then(|r| r.params.as_ref())) {
        (crate::config::Task::Slice, Some(p)) => {
            Some(filter_normalized_slice(p, &spec, &test, &default_alphas(cfg.slice_points), cfg.run_seed(0))?)
        }
        _ => None,
    };
    Ok(ExperimentOutput {
        config: cfg.clone(),
        train_size: train_set.len(),
        test_size: test.len(),
        accuracy: if acc.is_empty() { None } else { Some(StabilitySummary::from_values(acc)?) },
        median_sharpness: if sharp.is_empty() { None } else { Some(median(&sharp)) },
        results,
        failure,
        slice,
    })
}

pub fn summary_csv(out: &ExperimentOutput) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for r in &out.results {
        w.write_record([
            r.seed.to_string(),
            fmt_f64(r.spend.epsilon),
            fmt_f64(r.accuracy),
            fmt_f64(r.loss),
            fmt_f64(r.best_accuracy),
            fmt_f64(r.generalization_gap),
            r.clip_violations.to_string(),
            r.sharpness.map(fmt_f64).unwrap_or_default(),
        ])?;
    }
    w.into_inner().map_err(|e| HarnessError::Invalid(e.to_string()))
}

pub fn slice_csv(rows: &[SliceRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SLICE_HEADER)?;
    for r in rows {
        w.write_record([fmt_f64(r.alpha), fmt_f64(r.loss), fmt_f64(r.accuracy)])?;
    }
    w.into_inner().map_err(|e| HarnessError::Invalid(e.to_string()))
}

/// Writes `summary.csv`, `runs.json` and, for slices, `slice.csv` into `dir`.
/// A failed experiment also leaves a `FAILED` marker holding the error.
pub fn persist(out: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = vec![write_atomic(&dir.join("summary.csv"), &summary_csv(out)?)?];
    let mut json = serde_json::to_vec_pretty(out)?;
    json.push(b'\n');
    written.push(write_atomic(&dir.join("runs.json"), &json)?);
    if let Some(rows) = &out.slice {
        written.push(write_atomic(&dir.join("slice.csv"), &slice_csv(rows)?)?);
    }
    let marker = dir.join("FAILED");
    match &out.failure {
        Some(msg) => {
            let mut f = std::fs::File::create(&marker).map_err(|e| HarnessError::io(&marker, e))?;
            writeln!(f, "{msg}").map_err(|e| HarnessError::io(&marker, e))?;
        }
        None if marker.exists() => std::fs::remove_file(&marker).map_err(|e| HarnessError::io(&marker, e))?,
        None => {}
    }
    Ok(written)
}

/// Reads `runs.json` back and checks every stored ε against a fresh
/// accountant computation from its `(q, σ, T, δ)`.
pub fn load_runs(path: &Path) -> Result<ExperimentOutput> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let out: ExperimentOutput = serde_json::from_slice(&bytes)?;
    for r in &out.results {
        let s = &r.spend;
        let again = PrivacySpend::compute(s.q, s.sigma, s.steps, s.delta)?;
        if again.epsilon != s.epsilon {
            return Err(HarnessError::SpendMismatch {
                path: path.to_path_buf(),
                stored: s.epsilon,
                recomputed: again.epsilon,
            });
        }
    }
    Ok(out)
}
