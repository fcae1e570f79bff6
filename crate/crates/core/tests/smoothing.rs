//! The smoothed per-sample gradient of the MLP engine samples the perturbed
//! network implicitly. Its law must match explicit parameter perturbation.

use dplis_core::data::Dataset;
use dplis_core::dp::{smoothed_gradient, smoothed_per_sample_gradient, DpSgdConfig, Smoothing};
use dplis_core::nn::{init_params, Activation, MlpObjective, MlpSpec};
use dplis_core::rng::RngSeed;

fn moments(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let dim = samples[0].len();
    let mut mean = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for s in samples {
        for k in 0..dim {
            mean[k] += s[k] / n;
            sq[k] += s[k] * s[k] / n;
        }
    }
    (mean, sq)
}

fn sample_var(samples: &[Vec<f64>], k: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = samples.len() as f64;
    let m = samples.iter().map(|s| f(s[k])).sum::<f64>() / n;
    samples.iter().map(|s| (f(s[k]) - m).powi(2)).sum::<f64>() / (n - 1.0)
}

fn check(activation: Activation, scale: f64) {
    let spec = MlpSpec::new(3, vec![4, 4], 3, activation).unwrap();
    let mut params = init_params(&spec, RngSeed(12));
    for (i, v) in params.values_mut().iter_mut().enumerate() {
        *v += 0.05 * (i as f64 * 0.37).sin();
    }
    let data = Dataset::new(vec![0.9, -0.4, 1.3], vec![1], 3, 3).unwrap();
    let cfg = DpSgdConfig {
        lr: 1.0,
        expected_batch: 1,
        noise_multiplier: 1.0,
        clip: 1.0,
        steps: 1,
        smoothing_radius: scale,
        smoothing_samples: 1,
        dataset_size: 1,
        seed: RngSeed(5),
        delta: 1e-5,
    };
    assert_eq!(cfg.smoothing_scale(), scale);
    let objective = MlpObjective::new(&spec, &data).unwrap();
    let reps = 20_000u64;
    let fast: Vec<Vec<f64>> =
        (0..reps).map(|t| smoothed_per_sample_gradient(&params, &spec, &data, 0, &cfg, t).unwrap()).collect();
    let explicit: Vec<Vec<f64>> = (0..reps)
        .map(|t| {
            let mut g = vec![0.0; params.len()];
            smoothed_gradient(&objective, params.values(), Smoothing::new(scale, 1), RngSeed(6), t, 0, &mut g);
            g
        })
        .collect();
    let (m1, s1) = moments(&fast);
    let (m2, s2) = moments(&explicit);
    let n = reps as f64;
    for k in 0..params.len() {
        let se_mean = ((sample_var(&fast, k, |x| x) + sample_var(&explicit, k, |x| x)) / n).sqrt();
        assert!(
            (m1[k] - m2[k]).abs() <= 4.5 * se_mean + 1e-12,
            "{activation:?} mean coord {k}: {} vs {} (se {se_mean})",
            m1[k],
            m2[k]
        );
        let se_sq = ((sample_var(&fast, k, |x| x * x) + sample_var(&explicit, k, |x| x * x)) / n).sqrt();
        assert!(
            (s1[k] - s2[k]).abs() <= 4.5 * se_sq + 1e-12,
            "{activation:?} second moment coord {k}: {} vs {} (se {se_sq})",
            s1[k],
            s2[k]
        );
    }
}

#[test]
fn implicit_perturbation_matches_explicit_tanh() {
    check(Activation::Tanh, 1.0);
}

// The ReLU case is the one with power: dropping either backward correction
// term in the engine makes it fail, while tanh saturates at this scale.
#[test]
fn implicit_perturbation_matches_explicit_relu() {
    check(Activation::Relu, 1.0);
}
