//! Summaries over repeated runs.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, MlpSpec, ParamVector};

/// Spread of one metric across seeds. `std` uses the population denominator `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl StabilitySummary {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(StabilitySummary { values, mean, std: libm::sqrt(var), min, max })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.min, self.max)
    }
}

/// Mean test loss minus mean train loss.
pub fn generalization_gap(params: &ParamVector, spec: &MlpSpec, train: &Dataset, test: &Dataset) -> Result<f64> {
    let train_eval = nn::evaluate(params, spec, train)?;
    let test_eval = nn::evaluate(params, spec, test)?;
    Ok(test_eval.mean_loss - train_eval.mean_loss)
}

/// Linear-interpolation quantile (`q` in `[0, 1]`) of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn single_value_has_zero_spread() {
        let s = StabilitySummary::from_values(vec![0.93]).unwrap();
        assert_eq!(s.std, 0.0);
        assert_eq!(s.range(), (0.93, 0.93));
    }

    #[test]
    fn population_std() {
        let s = StabilitySummary::from_values(vec![1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert!(StabilitySummary::from_values(vec![]).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(median(&v), 2.5);
        assert!((quantile(&v, 0.99) - 3.97).abs() < 1e-12);
    }
}
