//! Plain (non-private) mini-batch SGD, optionally on a Gaussian-smoothed loss.
//!
//! Used for teacher and student models, which get their privacy from the
//! aggregation step rather than from noisy gradients.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::nn::{self, Evaluation, MlpSpec, ParamVector};
use crate::rng::{Purpose, RngSeed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    /// Learning rate used for the second half of training.
    pub late_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Standard deviation of the parameter perturbation; 0 trains the raw loss.
    pub sigma_smooth: f64,
    /// Perturbations averaged per step when `sigma_smooth > 0`.
    pub smoothing_samples: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lr: 0.1, late_lr: 0.1, batch_size: 32, epochs: 10, sigma_smooth: 0.0, smoothing_samples: 1 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.late_lr > 0.0) || self.batch_size == 0 || self.smoothing_samples == 0 {
            return Err(invalid("SGD needs positive learning rates, batch size and smoothing sample count"));
        }
        if !(self.sigma_smooth >= 0.0 && self.sigma_smooth.is_finite()) {
            return Err(invalid("sigma_smooth must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Per-epoch test metrics recorded by [`train_sgd_tracked`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdTrace {
    pub epochs: Vec<Evaluation>,
}

impl SgdTrace {
    pub fn best_accuracy(&self) -> f64 {
        self.epochs.iter().map(|e| e.accuracy).fold(0.0, f64::max)
    }
}

/// Trains from `init` with shuffled mini-batches.
///
/// With `sigma_smooth > 0` every step descends the average gradient at
/// `θ + N(0, σ²I)` over `smoothing_samples` fresh perturbations, i.e. an
/// unbiased gradient of the smoothed loss.
pub fn train_sgd(
    spec: &MlpSpec,
    data: &Dataset,
    init: ParamVector,
    cfg: &SgdConfig,
    seed: RngSeed,
) -> Result<ParamVector> {
    train_sgd_tracked(spec, data, None, init, cfg, seed).map(|(p, _)| p)
}

pub fn train_sgd_tracked(
    spec: &MlpSpec,
    data: &Dataset,
    test: Option<&Dataset>,
    init: ParamVector,
    cfg: &SgdConfig,
    seed: RngSeed,
) -> Result<(ParamVector, SgdTrace)> {
    cfg.validate()?;
    spec.check_params(&init)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut params = init;
    let mut trace = SgdTrace { epochs: Vec::new() };
    let n = data.len();
    let dim = params.len();
    let smoothing = cfg.sigma_smooth > 0.0;
    let k = if smoothing { cfg.smoothing_samples } else { 1 };
    let mut perturbed = vec![0.0; dim];
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let lr = if 2 * epoch < cfg.epochs { cfg.lr } else { cfg.late_lr };
        let mut order: Vec<usize> = (0..n).collect();
        seed.stream(Purpose::Shuffle, epoch as u64, 0, 0).shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch_data = data.subset(chunk);
            let batch = batch_data.as_batch();
            let mut update = vec![0.0; dim];
            for j in 0..k {
                let (_, g) = if smoothing {
                    perturbed.copy_from_slice(params.values());
                    seed.stream(Purpose::Smoothing, step, 0, j as u64).add_normal(cfg.sigma_smooth, &mut perturbed);
                    nn::mean_loss_gradient(&params.with_values(perturbed.clone()), spec, &batch)?
                } else {
                    nn::mean_loss_gradient(&params, spec, &batch)?
                };
                crate::linalg::axpy(1.0 / k as f64, &g, &mut update);
            }
            crate::linalg::axpy(-lr, &update, params.values_mut());
            if !params.is_finite() {
                return Err(Error::NonFiniteParameters { step: step as usize });
            }
            step += 1;
        }
        if let Some(test) = test {
            trace.epochs.push(nn::evaluate(&params, spec, test)?);
        }
    }
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthesize_blobs;
    use crate::nn::{init_params, Activation};

    #[test]
    fn linear_model_separates_noiseless_blobs() {
        let (train, test) = synthesize_blobs(200, 4, 4, 0.0, RngSeed(3)).unwrap();
        let spec = MlpSpec::new(4, vec![], 4, Activation::Relu).unwrap();
        let cfg = SgdConfig { lr: 0.5, late_lr: 0.5, batch_size: 16, epochs: 20, ..SgdConfig::default() };
        let p = train_sgd(&spec, &train, init_params(&spec, RngSeed(1)), &cfg, RngSeed(2)).unwrap();
        assert_eq!(nn::evaluate(&p, &spec, &test).unwrap().accuracy, 1.0);
    }

    #[test]
    fn zero_smoothing_matches_plain_sgd() {
        let (train, _) = synthesize_blobs(60, 3, 3, 0.5, RngSeed(3)).unwrap();
        let spec = MlpSpec::new(3, vec![5], 3, Activation::Tanh).unwrap();
        let init = init_params(&spec, RngSeed(1));
        let plain = SgdConfig { epochs: 3, ..SgdConfig::default() };
        let zero = SgdConfig { sigma_smooth: 0.0, smoothing_samples: 10, ..plain.clone() };
        let a = train_sgd(&spec, &train, init.clone(), &plain, RngSeed(4)).unwrap();
        let b = train_sgd(&spec, &train, init, &zero, RngSeed(4)).unwrap();
        assert_eq!(a, b);
    }
}
