use dplis_core::accountant::PrivacySpend;
use dplis_core::dp::{clip_gradient, dp_sgd_objective, poisson_sample, DpSgdConfig};
use dplis_core::landscape::{estimate_smoothness, smoothed_loss_mc, MonteCarloSmoothed, ToyLandscape};
use dplis_core::objective::Affine;
use dplis_core::rng::{Purpose, RngSeed};
use dplis_core::stats::StabilitySummary;
use proptest::prelude::*;

proptest! {
    #[test]
    fn clipping_bounds_norm_and_keeps_direction(
        g in prop::collection::vec(-1e6f64..1e6, 1..40),
        clip in 1e-4f64..1e3,
    ) {
        let c = clip_gradient(&g, clip).unwrap();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= clip);
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn <= clip {
            prop_assert_eq!(&c, &g);
        } else {
            // Same direction: the cosine is 1 up to rounding.
            let cos = c.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() / (norm * gn);
            prop_assert!(cos > 1.0 - 1e-12);
        }
    }

    #[test]
    fn epsilon_monotone(
        q in 1e-4f64..0.5,
        sigma in 0.5f64..5.0,
        t in 1u64..5000,
    ) {
        let a = PrivacySpend::compute(q, sigma, t, 1e-5).unwrap().epsilon;
        let more_steps = PrivacySpend::compute(q, sigma, t + 1, 1e-5).unwrap().epsilon;
        let more_q = PrivacySpend::compute((q * 1.5).min(1.0), sigma, t, 1e-5).unwrap().epsilon;
        let more_sigma = PrivacySpend::compute(q, sigma * 1.2, t, 1e-5).unwrap().epsilon;
        prop_assert!(more_steps >= a);
        prop_assert!(more_q >= a);
        prop_assert!(more_sigma <= a);
    }

    #[test]
    fn stability_range_is_attained(values in prop::collection::vec(0.0f64..1.0, 1..10)) {
        let s = StabilitySummary::from_values(values.clone()).unwrap();
        prop_assert!(values.contains(&s.min) && values.contains(&s.max));
        prop_assert!(s.std >= 0.0 && s.min <= s.mean && s.mean <= s.max);
    }
}

#[test]
fn poisson_batch_size_statistics() {
    let (n, q) = (10_000usize, 0.5);
    let draws = 100;
    let mean = (0..draws)
        .map(|t| poisson_sample(n, q, &mut RngSeed(17).stream(Purpose::Poisson, t, 0, 0)).len() as f64)
        .sum::<f64>()
        / draws as f64;
    let tol = 4.0 * (n as f64 * q * (1.0 - q) / draws as f64).sqrt();
    assert!((mean - n as f64 * q).abs() < tol, "{mean}");
    let a = poisson_sample(n, q, &mut RngSeed(17).stream(Purpose::Poisson, 3, 0, 0));
    let b = poisson_sample(n, q, &mut RngSeed(17).stream(Purpose::Poisson, 3, 0, 0));
    assert_eq!(a, b);
}

#[test]
fn noise_covariance_with_zero_gradient() {
    // A constant loss leaves only the Gaussian noise: per step the update is
    // −(η/L)·N(0, σ²C²I).
    let f = Affine { slope: vec![0.0; 3], offset: 1.0 };
    let (sigma, clip, batch) = (1.3, 0.7, 4usize);
    let steps = 10_000u64;
    let cfg = DpSgdConfig {
        lr: 1.0,
        expected_batch: batch,
        noise_multiplier: sigma,
        clip,
        steps: 1,
        smoothing_radius: 0.0,
        smoothing_samples: 1,
        dataset_size: batch,
        seed: RngSeed(0),
        delta: 1e-5,
    };
    let mut updates = vec![[0.0f64; 3]; steps as usize];
    for t in 0..steps {
        let c = DpSgdConfig { seed: RngSeed(1000 + t), ..cfg.clone() };
        let out = dp_sgd_objective(&f, vec![0.0; 3], &c).unwrap();
        updates[t as usize] = [out.theta[0], out.theta[1], out.theta[2]];
    }
    let expected = sigma * sigma * clip * clip / (batch * batch) as f64;
    for i in 0..3 {
        for j in 0..3 {
            let cov = updates.iter().map(|u| u[i] * u[j]).sum::<f64>() / steps as f64;
            if i == j {
                assert!((cov - expected).abs() < 0.05 * expected, "var {i}: {cov} vs {expected}");
            } else {
                assert!(cov.abs() < 0.05 * expected, "cov {i}{j}: {cov}");
            }
        }
    }
}

#[test]
fn toy_loss_stays_in_unit_interval() {
    let toy = ToyLandscape::default();
    for i in 0..=400 {
        for j in 0..=400 {
            let p = [-15.0 + 0.125 * i as f64, -15.0 + 0.125 * j as f64];
            let l = toy.loss(p);
            assert!(l > 0.0 && l < 1.0, "{p:?}: {l}");
        }
    }
}

#[test]
fn smoothing_raises_sharp_center_monotonically() {
    let toy = ToyLandscape::default();
    let mut prev = f64::NEG_INFINITY;
    for sigma in [0.0, 1.0, 2.0, 3.0] {
        // Common random numbers: every σ sees the same standard normal draws.
        let mut s = RngSeed(21).stream(Purpose::MonteCarlo, 0, 0, 0);
        let v = smoothed_loss_mc(&toy, &toy.v, sigma, 20_000, &mut s).unwrap();
        assert!(v >= prev, "σ={sigma}: {v} < {prev}");
        prev = v;
    }
}

#[test]
fn smoothed_toy_gradient_lipschitz_shrinks_like_one_over_sigma() {
    let toy = ToyLandscape::default();
    // Pairs near the sharp center, where the raw loss bends the most.
    let l_hat = estimate_smoothness(&toy, &toy.v, 5.0, 20_000, RngSeed(3)).unwrap().lipschitz_fn;
    assert!(l_hat > 0.0);
    for sigma in [1.0, 2.0, 4.0] {
        let smoothed = MonteCarloSmoothed::new(&toy, sigma, 2000, RngSeed(9));
        let beta = estimate_smoothness(&smoothed, &toy.v, 5.0, 200, RngSeed(4)).unwrap().lipschitz_grad;
        assert!(beta <= 1.1 * l_hat / sigma, "σ={sigma}: β̂={beta}, L̂={l_hat}");
    }
}
