//! Flat `key = value` experiment files. Blank lines and anything after `#`
//! are ignored; unknown keys are rejected so typos do not pass silently.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use dplis_core::accountant::DEFAULT_DELTA;
use dplis_core::landscape::SharpnessOptions;
use dplis_core::nn::Activation;
use dplis_core::RngSeed;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    MnistMlp,
    SyntheticBlobs,
    Toy,
    Pate,
    Accountant,
    Sharpness,
    Slice,
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "mnist_mlp" => Task::MnistMlp,
            "synthetic_blobs" => Task::SyntheticBlobs,
            "toy" => Task::Toy,
            "pate" => Task::Pate,
            "accountant" => Task::Accountant,
            "sharpness" => Task::Sharpness,
            "slice" => Task::Slice,
            other => return Err(format!("unknown task '{other}'")),
        })
    }
}

/// Data behind the `sharpness` and `slice` tasks; the training tasks imply their own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Blobs,
}

/// Synthetic Gaussian-blob dataset parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobsConfig {
    pub n: usize,
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub scale: f64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        BlobsConfig { n: 12_500, classes: 10, dim: 20, spread: 0.33, scale: 1.0 }
    }
}

/// Teacher ensemble, aggregator and student settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PateConfig {
    pub teachers: usize,
    pub threshold: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub max_queries: usize,
    pub sigma_smooth: f64,
    pub k: usize,
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    pub sgd_lr: f64,
    pub sgd_batch: usize,
}

impl Default for PateConfig {
    fn default() -> Self {
        PateConfig {
            teachers: 50,
            threshold: 30.0,
            sigma1: 15.0,
            sigma2: 5.0,
            max_queries: 1000,
            sigma_smooth: 0.03,
            k: 10,
            teacher_epochs: 20,
            student_epochs: 30,
            sgd_lr: 0.1,
            sgd_batch: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub n_seeds: usize,
    pub out: PathBuf,
    // Model and data.
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    /// Training examples kept (0 = all).
    pub subset_size: usize,
    /// Test examples kept (0 = all).
    pub test_subset: usize,
    /// Hidden widths; unset means 512,128 for MNIST and 32 for blobs.
    pub hidden: Option<Vec<usize>>,
    pub activation: Activation,
    pub blobs: BlobsConfig,
    /// Fraction of training labels replaced by a different class.
    pub flip_rate: f64,
    // DP-SGD.
    pub lr: f64,
    pub batch: usize,
    pub noise_multiplier: f64,
    pub clip: f64,
    /// Step count; ignored when `target_epsilon` is set.
    pub steps: u64,
    pub target_epsilon: Option<f64>,
    pub delta: f64,
    pub radius: f64,
    pub smoothing_samples: usize,
    pub eval_every: u64,
    pub audit_clipping: bool,
    // Diagnostics.
    pub sharpness: Option<SharpnessOptions>,
    /// Training examples used by the sharpness objective (0 = all).
    pub sharpness_subset: usize,
    pub slice_points: usize,
    pub toy_runs: usize,
    pub pate: PateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::MnistMlp,
            seed: 0,
            n_seeds: 1,
            out: PathBuf::from("out"),
            dataset: DatasetKind::Mnist,
            data_dir: PathBuf::from("data/mnist"),
            subset_size: 10_000,
            test_subset: 2000,
            hidden: None,
            activation: Activation::Relu,
            blobs: BlobsConfig::default(),
            flip_rate: 0.0,
            lr: 0.1536,
            batch: 256,
            noise_multiplier: 1.1,
            clip: 1.0,
            steps: 500,
            target_epsilon: None,
            delta: DEFAULT_DELTA,
            radius: 0.0,
            smoothing_samples: 1,
            eval_every: 0,
            audit_clipping: false,
            sharpness: None,
            sharpness_subset: 1000,
            slice_points: 33,
            toy_runs: 1000,
            pate: PateConfig::default(),
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| HarnessError::Config { line, msg: format!("cannot parse '{v}' for {key}") })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(HarnessError::Config { line, msg: format!("expected a boolean for {key}, got '{v}'") }),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_str(&text)?;
        Ok(cfg)
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| HarnessError::Config {
                line: i + 1,
                msg: format!("expected key = value, got '{line}'"),
            })?;
            self.set(i + 1, k.trim(), v.trim())?;
        }
        self.validate()
    }

    fn set(&mut self, n: usize, k: &str, v: &str) -> Result<()> {
        let sharp = || self.sharpness.unwrap_or_default();
        match k {
            "task" => self.task = v.parse().map_err(|msg| HarnessError::Config { line: n, msg })?,
            "seed" => self.seed = parse(n, k, v)?,
            "n_seeds" => self.n_seeds = parse(n, k, v)?,
            "out" => self.out = PathBuf::from(v),
            "dataset" => {
                self.dataset = match v {
                    "mnist" => DatasetKind::Mnist,
                    "blobs" => DatasetKind::Blobs,
                    _ => return Err(HarnessError::Config { line: n, msg: format!("unknown dataset '{v}'") }),
                }
            }
            "data_dir" => self.data_dir = PathBuf::from(v),
            "subset_size" => self.subset_size = parse(n, k, v)?,
            "test_subset" => self.test_subset = parse(n, k, v)?,
            "hidden" => {
                self.hidden = Some(if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|h| parse(n, k, h.trim())).collect::<Result<_>>()?
                })
            }
            "activation" => {
                self.activation = match v {
                    "relu" => Activation::Relu,
                    "tanh" => Activation::Tanh,
                    _ => return Err(HarnessError::Config { line: n, msg: format!("unknown activation '{v}'") }),
                }
            }
            "blobs_n" => self.blobs.n = parse(n, k, v)?,
            "blobs_classes" => self.blobs.classes = parse(n, k, v)?,
            "blobs_dim" => self.blobs.dim = parse(n, k, v)?,
            "blobs_spread" => self.blobs.spread = parse(n, k, v)?,
            "blobs_scale" => self.blobs.scale = parse(n, k, v)?,
            "flip_rate" => self.flip_rate = parse(n, k, v)?,
            "lr" => self.lr = parse(n, k, v)?,
            "batch" => self.batch = parse(n, k, v)?,
            "noise_multiplier" => self.noise_multiplier = parse(n, k, v)?,
            "clip" => self.clip = parse(n, k, v)?,
            "steps" => self.steps = parse(n, k, v)?,
            "target_epsilon" => self.target_epsilon = if v == "none" { None } else { Some(parse(n, k, v)?) },
            "delta" => self.delta = parse(n, k, v)?,
            "radius" => self.radius = parse(n, k, v)?,
            "smoothing_samples" => self.smoothing_samples = parse(n, k, v)?,
            "eval_every" => self.eval_every = parse(n, k, v)?,
            "audit_clipping" => self.audit_clipping = parse_bool(n, k, v)?,
            "sharpness" => self.sharpness = parse_bool(n, k, v)?.then(sharp),
            "sharpness_epsilon" => self.sharpness = Some(SharpnessOptions { epsilon: parse(n, k, v)?, ..sharp() }),
            "sharpness_restarts" => self.sharpness = Some(SharpnessOptions { restarts: parse(n, k, v)?, ..sharp() }),
            "sharpness_iterations" => {
                self.sharpness = Some(SharpnessOptions { iterations: parse(n, k, v)?, ..sharp() })
            }
            "sharpness_subset" => self.sharpness_subset = parse(n, k, v)?,
            "slice_points" => self.slice_points = parse(n, k, v)?,
            "toy_runs" => self.toy_runs = parse(n, k, v)?,
            "pate_teachers" => self.pate.teachers = parse(n, k, v)?,
            "pate_threshold" => self.pate.threshold = parse(n, k, v)?,
            "pate_sigma1" => self.pate.sigma1 = parse(n, k, v)?,
            "pate_sigma2" => self.pate.sigma2 = parse(n, k, v)?,
            "pate_queries" => self.pate.max_queries = parse(n, k, v)?,
            "student_sigma_smooth" => self.pate.sigma_smooth = parse(n, k, v)?,
            "student_k" => self.pate.k = parse(n, k, v)?,
            "teacher_epochs" => self.pate.teacher_epochs = parse(n, k, v)?,
            "student_epochs" => self.pate.student_epochs = parse(n, k, v)?,
            "sgd_lr" => self.pate.sgd_lr = parse(n, k, v)?,
            "sgd_batch" => self.pate.sgd_batch = parse(n, k, v)?,
            _ => return Err(HarnessError::Config { line: n, msg: format!("unknown key '{k}'") }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Invalid(m.to_string()));
        if self.n_seeds == 0 {
            return bad("n_seeds must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.flip_rate) {
            return bad("flip_rate must lie in [0, 1]");
        }
        if let Some(e) = self.target_epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return bad("target_epsilon must be positive");
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if self.batch == 0 || self.smoothing_samples == 0 {
            return bad("batch and smoothing_samples must be positive");
        }
        if let Some(s) = self.sharpness {
            if !(s.epsilon > 0.0) {
                return bad("sharpness_epsilon must be positive");
            }
        }
        Ok(())
    }

    /// Dataset actually used by the task.
    pub fn dataset_kind(&self) -> DatasetKind {
        match self.task {
            Task::MnistMlp => DatasetKind::Mnist,
            Task::SyntheticBlobs | Task::Pate => DatasetKind::Blobs,
            _ => self.dataset,
        }
    }

    pub fn hidden_layers(&self) -> Vec<usize> {
        match (&self.hidden, self.dataset_kind()) {
            (Some(h), _) => h.clone(),
            (None, DatasetKind::Mnist) => vec![512, 128],
            (None, DatasetKind::Blobs) => vec![32],
        }
    }

    /// Master seed of run `i`.
    pub fn run_seed(&self, i: usize) -> RngSeed {
        RngSeed(self.seed).offset(i as u64)
    }
}
