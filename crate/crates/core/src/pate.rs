//! Teacher ensembles, the Confident-GNMax aggregator and smoothed students.
//!
//! Privacy is charged per query with data-independent Gaussian-mechanism RDP:
//! the threshold test has sensitivity 1 (one teacher changes the top count by
//! at most one) and the noisy argmax sees a vote vector whose `ℓ₂` change is
//! at most `√2` (one count down, one up). Every query is charged, abstentions
//! included.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::accountant::{compose_and_convert, default_orders, RdpCurve};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::nn::{self, init_params, MlpSpec, ParamVector};
use crate::rng::{Purpose, RngSeed, Stream};
use crate::sgd::{train_sgd, train_sgd_tracked, SgdConfig, SgdTrace};

/// Vote counts of the teachers for one query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteHistogram {
    counts: Vec<u32>,
}

impl VoteHistogram {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(invalid("a vote histogram needs at least one class"));
        }
        Ok(VoteHistogram { counts })
    }

    /// Histogram of `predictions` over `classes` classes.
    pub fn from_predictions(predictions: &[usize], classes: usize) -> Result<Self> {
        let mut counts = vec![0u32; classes];
        for &p in predictions {
            *counts.get_mut(p).ok_or_else(|| invalid("prediction outside the class range"))? += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// Class with the most votes; ties go to the lowest index.
    pub fn plurality(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnMaxConfig {
    pub threshold: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub max_queries: usize,
}

impl GnMaxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) || !self.threshold.is_finite() {
            return Err(invalid("Confident-GNMax needs positive noise scales and a finite threshold"));
        }
        Ok(())
    }
}

/// Contiguous near-equal shards of `0..n`; the first `n % parts` shards get one extra item.
pub fn shard_ranges(n: usize, parts: usize) -> Result<Vec<core::ops::Range<usize>>> {
    if parts == 0 {
        return Err(invalid("need at least one shard"));
    }
    let (base, extra) = (n / parts, n % parts);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let len = base + usize::from(i < extra);
        if len == 0 {
            return Err(Error::EmptyShard { index: i });
        }
        out.push(start..start + len);
        start += len;
    }
    Ok(out)
}

/// Trains one teacher per disjoint shard with plain SGD. Teacher `t` uses
/// seed `seed + t` for its initialization and batch order.
pub fn partition_and_train_teachers(
    data: &Dataset,
    n_teachers: usize,
    spec: &MlpSpec,
    cfg: &SgdConfig,
    seed: RngSeed,
) -> Result<Vec<ParamVector>> {
    shard_ranges(data.len(), n_teachers)?
        .into_iter()
        .enumerate()
        .map(|(t, range)| train_teacher(data, range, spec, cfg, seed.offset(t as u64)))
        .collect()
}

/// Trains the teacher for one shard.
pub fn train_teacher(
    data: &Dataset,
    range: core::ops::Range<usize>,
    spec: &MlpSpec,
    cfg: &SgdConfig,
    seed: RngSeed,
) -> Result<ParamVector> {
    let idx: Vec<usize> = range.collect();
    let shard = data.subset(&idx);
    train_sgd(spec, &shard, init_params(spec, seed), cfg, seed)
}

/// Vote histogram of the ensemble for every input of `queries`.
pub fn teacher_votes(teachers: &[ParamVector], spec: &MlpSpec, queries: &Dataset) -> Result<Vec<VoteHistogram>> {
    let mut counts = vec![vec![0u32; spec.output_dim]; queries.len()];
    for t in teachers {
        let logits = nn::logits(t, spec, &queries.as_batch())?;
        for (row, c) in logits.rows().zip(&mut counts) {
            c[nn::argmax(row)] += 1;
        }
    }
    counts.into_iter().map(VoteHistogram::new).collect()
}

/// Confident-GNMax: answers with the noisy argmax when the noisy top count
/// clears the threshold, otherwise abstains (`None`).
pub fn confident_gnmax(votes: &VoteHistogram, cfg: &GnMaxConfig, stream: &mut Stream) -> Option<usize> {
    let top = votes.counts[votes.plurality()] as f64;
    if top + cfg.sigma1 * stream.normal() < cfg.threshold {
        return None;
    }
    let noisy: Vec<f64> = votes.counts.iter().map(|&c| c as f64 + cfg.sigma2 * stream.normal()).collect();
    Some(nn::argmax(&noisy))
}

/// `(ε, δ)` charged for a number of aggregator queries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PateSpend {
    pub epsilon: f64,
    pub delta: f64,
    pub queries: usize,
    pub order: Option<u32>,
}

/// Spend of `queries` Confident-GNMax answers on the default order grid.
pub fn pate_spend(cfg: &GnMaxConfig, queries: usize, delta: f64) -> Result<PateSpend> {
    cfg.validate()?;
    if queries == 0 {
        return Ok(PateSpend { epsilon: 0.0, delta, queries, order: None });
    }
    let orders = default_orders();
    let per_query = RdpCurve::gaussian(cfg.sigma1, 1.0, &orders)?.add(&RdpCurve::gaussian(
        cfg.sigma2,
        libm::sqrt(2.0),
        &orders,
    )?)?;
    let c = compose_and_convert(&per_query, queries as u64, delta)?;
    Ok(PateSpend { epsilon: c.epsilon, delta, queries, order: Some(c.order) })
}

/// Public inputs the aggregator agreed to label.
#[derive(Clone, Debug, PartialEq)]
pub struct Labeling {
    /// Indices into the public set of the answered queries.
    pub indices: Vec<usize>,
    /// The labeled subset (inputs with aggregator labels).
    pub labeled: Dataset,
    /// Fraction of answered labels that agree with the public set's own labels.
    pub p_correct: f64,
    pub queries: usize,
    pub spend: PateSpend,
}

/// Queries the aggregator on the first `max_queries` public inputs. Query `i`
/// draws its noise from stream `(Aggregator, i)`.
pub fn label_public_data(
    teachers: &[ParamVector],
    spec: &MlpSpec,
    public: &Dataset,
    cfg: &GnMaxConfig,
    delta: f64,
    seed: RngSeed,
) -> Result<Labeling> {
    cfg.validate()?;
    if cfg.max_queries > public.len() {
        return Err(invalid("max_queries exceeds the public set"));
    }
    let idx: Vec<usize> = (0..cfg.max_queries).collect();
    let queried = public.subset(&idx);
    let votes = if idx.is_empty() { Vec::new() } else { teacher_votes(teachers, spec, &queried)? };
    let (mut indices, mut labels) = (Vec::new(), Vec::new());
    for (i, v) in votes.iter().enumerate() {
        if let Some(label) = confident_gnmax(v, cfg, &mut seed.stream(Purpose::Aggregator, i as u64, 0, 0)) {
            indices.push(i);
            labels.push(label);
        }
    }
    let correct = indices.iter().zip(&labels).filter(|(&i, &l)| public.labels()[i] == l).count();
    let p_correct = if indices.is_empty() { 0.0 } else { correct as f64 / indices.len() as f64 };
    let labeled = public.subset(&indices).with_labels(labels)?;
    Ok(Labeling {
        indices,
        labeled,
        p_correct,
        queries: cfg.max_queries,
        spend: pate_spend(cfg, cfg.max_queries, delta)?,
    })
}

/// Plain SGD on the loss averaged over `k` Gaussian perturbations of scale
/// `sigma_smooth`; no DP noise, since the labels already paid for privacy.
/// With a test set, per-epoch accuracy is recorded in the returned trace.
#[allow(clippy::too_many_arguments)]
pub fn train_student_smoothed(
    labeled: &Dataset,
    test: Option<&Dataset>,
    spec: &MlpSpec,
    sigma_smooth: f64,
    k: usize,
    cfg: &SgdConfig,
    seed: RngSeed,
) -> Result<(ParamVector, SgdTrace)> {
    if labeled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 {
        return Err(invalid("need at least one smoothing sample"));
    }
    let cfg = SgdConfig { sigma_smooth, smoothing_samples: k, ..cfg.clone() };
    train_sgd_tracked(spec, labeled, test, init_params(spec, seed), &cfg, seed)
}
