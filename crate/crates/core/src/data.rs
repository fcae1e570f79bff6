//! In-memory labelled datasets and the synthetic Gaussian-blob benchmark.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::Batch;
use crate::rng::{Purpose, RngSeed};

/// Row-major features with integer class labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    input_dim: usize,
    n_classes: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, input_dim: usize, n_classes: usize) -> Result<Self> {
        if input_dim == 0 || inputs.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch {
                what: "dataset inputs",
                expected: labels.len() * input_dim,
                got: inputs.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::DimensionMismatch { what: "label index", expected: n_classes, got: bad });
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset inputs"));
        }
        Ok(Dataset { input_dim, n_classes, inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn as_batch(&self) -> Batch<'_> {
        Batch { inputs: &self.inputs, labels: &self.labels, input_dim: self.input_dim }
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        Dataset { input_dim: self.input_dim, n_classes: self.n_classes, inputs, labels }
    }

    /// First `n` rows (or all of them when `n` is 0 or exceeds the size).
    pub fn take(&self, n: usize) -> Dataset {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        let idx: Vec<usize> = (0..n).collect();
        self.subset(&idx)
    }

    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(self.inputs.clone(), labels, self.input_dim, self.n_classes)
    }

    /// Class frequencies.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Replaces a `rate` fraction of labels (chosen uniformly, without replacement)
/// by a uniformly drawn *different* class.
pub fn flip_labels(data: &Dataset, rate: f64, seed: RngSeed) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(invalid("flip rate must lie in [0, 1]"));
    }
    let n = data.len();
    let k = data.n_classes();
    let mut labels = data.labels().to_vec();
    if k < 2 {
        return Ok(data.clone());
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut stream = seed.stream(Purpose::LabelFlip, 0, 0, 0);
    stream.shuffle(&mut order);
    let n_flip = libm::round(rate * n as f64) as usize;
    for &i in &order[..n_flip] {
        let shift = 1 + stream.below(k - 1);
        labels[i] = (labels[i] + shift) % k;
    }
    data.with_labels(labels)
}

/// Gaussian blobs around the vertices of a scaled simplex.
///
/// Class `c` is centred at `scale·e_c` in `dim` dimensions (`dim ≥ classes`),
/// with isotropic noise of standard deviation `spread`. Samples are assigned
/// to classes round-robin, shuffled, and split 80/20 into train/test.
pub fn synthesize_blobs(
    n: usize,
    classes: usize,
    dim: usize,
    spread: f64,
    seed: RngSeed,
) -> Result<(Dataset, Dataset)> {
    synthesize_blobs_scaled(n, classes, dim, spread, 1.0, seed)
}

pub fn synthesize_blobs_scaled(
    n: usize,
    classes: usize,
    dim: usize,
    spread: f64,
    scale: f64,
    seed: RngSeed,
) -> Result<(Dataset, Dataset)> {
    if classes == 0 || n < classes {
        return Err(invalid("need at least one sample per class"));
    }
    if dim < classes {
        return Err(invalid("blob dimension must be at least the number of classes"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(invalid("spread must be finite and non-negative"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    seed.stream(Purpose::Dataset, 0, 0, 0).shuffle(&mut order);
    let mut inputs = vec![0.0; n * dim];
    let mut labels = vec![0; n];
    for (row, &i) in order.iter().enumerate() {
        let class = i % classes;
        labels[row] = class;
        let x = &mut inputs[row * dim..(row + 1) * dim];
        seed.stream(Purpose::Dataset, 1, i as u64, 0).fill_normal(spread, x);
        x[class] += scale;
    }
    let all = Dataset::new(inputs, labels, dim, classes)?;
    let n_train = (n * 4) / 5;
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..n).collect();
    Ok((all.subset(&train_idx), all.subset(&test_idx)))
}
