//! Teacher ensemble → noisy labels → student, on synthetic blobs.

use std::path::{Path, PathBuf};

use dplis_core::data::{flip_labels, Dataset};
use dplis_core::nn::MlpSpec;
use dplis_core::pate::{
    label_public_data, partition_and_train_teachers, pate_spend, train_student_smoothed, GnMaxConfig, PateSpend,
};
use dplis_core::sgd::{SgdConfig, SgdTrace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::datasets::load_task_data;
use crate::error::{HarnessError, Result};
use crate::experiment::{model_spec, with_pool};
use crate::output::{fmt_f64, write_atomic};

pub const SUMMARY_HEADER: [&str; 8] = [
    "seed",
    "epsilon",
    "queries",
    "labeled",
    "p_correct",
    "student_accuracy",
    "student_best_accuracy",
    "plain_student_accuracy",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PateReport {
    pub seed: u64,
    pub spend: PateSpend,
    pub labeled: usize,
    pub p_correct: f64,
    /// Final-epoch accuracy of the smoothed student (the reported figure).
    pub student_accuracy: f64,
    /// Highest per-epoch accuracy of the smoothed student.
    pub student_best_accuracy: f64,
    /// Final accuracy of a student trained on the same labels without smoothing.
    pub plain_student_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PateOutput {
    pub config: ExperimentConfig,
    pub reports: Vec<PateReport>,
}

pub fn gnmax_config(cfg: &ExperimentConfig) -> GnMaxConfig {
    let p = &cfg.pate;
    GnMaxConfig { threshold: p.threshold, sigma1: p.sigma1, sigma2: p.sigma2, max_queries: p.max_queries }
}

pub fn sgd_config(cfg: &ExperimentConfig, epochs: usize) -> SgdConfig {
    let p = &cfg.pate;
    SgdConfig {
        lr: p.sgd_lr,
        late_lr: p.sgd_lr * 0.1,
        batch_size: p.sgd_batch,
        epochs,
        sigma_smooth: 0.0,
        smoothing_samples: 1,
    }
}

/// Splits the blob test part in half: queries come from the first half,
/// students are scored on the second.
fn public_and_eval(test: &Dataset) -> (Dataset, Dataset) {
    let half = test.len() / 2;
    let a: Vec<usize> = (0..half).collect();
    let b: Vec<usize> = (half..test.len()).collect();
    (test.subset(&a), test.subset(&b))
}

fn run_one(
    cfg: &ExperimentConfig,
    spec: &MlpSpec,
    private: &Dataset,
    public: &Dataset,
    eval: &Dataset,
    i: usize,
) -> Result<PateReport> {
    let seed = cfg.run_seed(i);
    let teachers = partition_and_train_teachers(
        private,
        cfg.pate.teachers,
        spec,
        &sgd_config(cfg, cfg.pate.teacher_epochs),
        seed,
    )?;
    let labeling = label_public_data(&teachers, spec, public, &gnmax_config(cfg), cfg.delta, seed)?;
    let student_cfg = sgd_config(cfg, cfg.pate.student_epochs);
    let (acc, best, plain) = if labeling.labeled.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let (_, smooth) = train_student_smoothed(
            &labeling.labeled,
            Some(eval),
            spec,
            cfg.pate.sigma_smooth,
            cfg.pate.k,
            &student_cfg,
            seed,
        )?;
        let (_, raw) = train_student_smoothed(&labeling.labeled, Some(eval), spec, 0.0, 1, &student_cfg, seed)?;
        let last = |t: &SgdTrace| t.epochs.last().map_or(0.0, |e| e.accuracy);
        (last(&smooth), smooth.best_accuracy(), last(&raw))
    };
    Ok(PateReport {
        seed: seed.0,
        spend: labeling.spend,
        labeled: labeling.labeled.len(),
        p_correct: labeling.p_correct,
        student_accuracy: acc,
        student_best_accuracy: best,
        plain_student_accuracy: plain,
    })
}

pub fn run_pate(cfg: &ExperimentConfig) -> Result<PateOutput> {
    cfg.validate()?;
    let (private, test) = load_task_data(cfg)?;
    let (public, eval) = public_and_eval(&test);
    if cfg.pate.max_queries > public.len() {
        return Err(HarnessError::Invalid(format!(
            "pate_queries {} exceeds the {} public inputs",
            cfg.pate.max_queries,
            public.len()
        )));
    }
    let spec = model_spec(cfg, &private)?;
    let reports = with_pool(|| {
        (0..cfg.n_seeds)
            .into_par_iter()
            .map(|i| run_one(cfg, &spec, &private, &public, &eval, i))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(PateOutput { config: cfg.clone(), reports })
}

/// Recomputes the aggregator spend of a report from its query count.
pub fn verify_spend(cfg: &ExperimentConfig, report: &PateReport) -> Result<bool> {
    let again = pate_spend(&gnmax_config(cfg), report.spend.queries, report.spend.delta)?;
    Ok(again.epsilon == report.spend.epsilon && again.order == report.spend.order)
}

pub fn summary_csv(out: &PateOutput) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for r in &out.reports {
        w.write_record([
            r.seed.to_string(),
            fmt_f64(r.spend.epsilon),
            r.spend.queries.to_string(),
            r.labeled.to_string(),
            fmt_f64(r.p_correct),
            fmt_f64(r.student_accuracy),
            fmt_f64(r.student_best_accuracy),
            fmt_f64(r.plain_student_accuracy),
        ])?;
    }
    w.into_inner().map_err(|e| HarnessError::Invalid(e.to_string()))
}

pub fn persist_pate(out: &PateOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut json = serde_json::to_vec_pretty(out)?;
    json.push(b'\n');
    Ok(vec![write_atomic(&dir.join("summary.csv"), &summary_csv(out)?)?, write_atomic(&dir.join("runs.json"), &json)?])
}

/// Final test accuracies of students trained on blob labels with a `flip_rate`
/// fraction replaced, smoothed and plain, paired by seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelNoiseResult {
    pub flip_rate: f64,
    pub smoothed: Vec<f64>,
    pub plain: Vec<f64>,
}

impl LabelNoiseResult {
    pub fn mean_gap(&self) -> f64 {
        dplis_core::stats::mean(&self.smoothed) - dplis_core::stats::mean(&self.plain)
    }
}

pub fn label_noise_benchmark(cfg: &ExperimentConfig, flip_rate: f64) -> Result<LabelNoiseResult> {
    let mut base = cfg.clone();
    base.flip_rate = 0.0;
    let (train, test) = load_task_data(&base)?;
    let spec = model_spec(cfg, &train)?;
    let student_cfg = sgd_config(cfg, cfg.pate.student_epochs);
    let pairs = with_pool(|| {
        (0..cfg.n_seeds)
            .into_par_iter()
            .map(|i| -> Result<(f64, f64)> {
                let seed = cfg.run_seed(i);
                let noisy = flip_labels(&train, flip_rate, seed)?;
                let (_, smooth) = train_student_smoothed(
                    &noisy,
                    Some(&test),
                    &spec,
                    cfg.pate.sigma_smooth,
                    cfg.pate.k,
                    &student_cfg,
                    seed,
                )?;
                let (_, plain) = train_student_smoothed(&noisy, Some(&test), &spec, 0.0, 1, &student_cfg, seed)?;
                let last = |t: &SgdTrace| t.epochs.last().map_or(0.0, |e| e.accuracy);
                Ok((last(&smooth), last(&plain)))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(LabelNoiseResult {
        flip_rate,
        smoothed: pairs.iter().map(|p| p.0).collect(),
        plain: pairs.iter().map(|p| p.1).collect(),
    })
}
