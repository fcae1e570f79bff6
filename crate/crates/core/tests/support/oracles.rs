//! Independent reference computations shared by the core tests and the
//! acceptance suite.
#![allow(dead_code)]

use dplis_core::data::Dataset;
use dplis_core::nn::{self, Activation, MlpSpec, ParamVector};
use dplis_core::rng::{Purpose, RngSeed, Stream};

/// Loss of one sample computed with plain loops, independent of the library's GEMM path.
pub fn loop_loss(spec: &MlpSpec, p: &[f64], x: &[f64], y: usize) -> f64 {
    let mut h = x.to_vec();
    let layers = spec.layers();
    for (l, s) in layers.iter().enumerate() {
        let mut z = vec![0.0; s.fan_out];
        for (o, zo) in z.iter_mut().enumerate() {
            let mut acc = p[s.bias_offset + o];
            for i in 0..s.fan_in {
                acc += p[s.weight_offset + o * s.fan_in + i] * h[i];
            }
            *zo = acc;
        }
        h = if l + 1 < layers.len() {
            z.iter()
                .map(|&v| match spec.activation {
                    Activation::Relu => v.max(0.0),
                    Activation::Tanh => v.tanh(),
                })
                .collect()
        } else {
            z
        };
    }
    let m = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + h.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - h[y]
}

/// Smallest |pre-activation| over the hidden layers for one sample.
pub fn min_hidden_preactivation(spec: &MlpSpec, p: &[f64], x: &[f64]) -> f64 {
    let mut h = x.to_vec();
    let layers = spec.layers();
    let mut min = f64::INFINITY;
    for s in &layers[..layers.len() - 1] {
        let z: Vec<f64> = (0..s.fan_out)
            .map(|o| {
                p[s.bias_offset + o] + (0..s.fan_in).map(|i| p[s.weight_offset + o * s.fan_in + i] * h[i]).sum::<f64>()
            })
            .collect();
        min = z.iter().fold(min, |m, v| m.min(v.abs()));
        h = z.iter().map(|v| v.max(0.0)).collect();
    }
    min
}

pub fn random_net(s: &mut Stream, activation: Activation) -> MlpSpec {
    let input = 1 + s.below(5);
    let hidden: Vec<usize> = (0..s.below(3)).map(|_| 1 + s.below(6)).collect();
    let out = 2 + s.below(3);
    MlpSpec::new(input, hidden, out, activation).unwrap()
}

pub fn random_params(spec: &MlpSpec, s: &mut Stream) -> ParamVector {
    let mut p = ParamVector::zeros(spec);
    s.fill_normal(0.8, p.values_mut());
    p
}

pub fn random_batch(spec: &MlpSpec, n: usize, s: &mut Stream) -> Dataset {
    let mut x = vec![0.0; n * spec.input_dim];
    s.fill_normal(1.0, &mut x);
    let y = (0..n).map(|_| s.below(spec.output_dim)).collect();
    Dataset::new(x, y, spec.input_dim, spec.output_dim).unwrap()
}

/// Worst relative error of `per_sample_gradients` against central differences
/// (step `1e-5`) over `nets` random networks of at most 106 parameters.
/// ReLU samples with a kink inside the stencil are skipped. Returns the worst
/// error and the number of samples checked.
pub fn finite_difference_worst(nets: usize, seed: u64) -> (f64, usize) {
    let mut s = RngSeed(seed).stream(Purpose::Test, 0, 0, 0);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for net in 0..nets {
        let act = if net % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let spec = random_net(&mut s, act);
        let params = random_params(&spec, &mut s);
        let data = random_batch(&spec, 3, &mut s);
        let grads = nn::per_sample_gradients(&params, &spec, &data.as_batch()).unwrap();
        for i in 0..data.len() {
            let (x, y) = (data.input(i), data.labels()[i]);
            if act == Activation::Relu && min_hidden_preactivation(&spec, params.values(), x) < 1e-3 {
                continue;
            }
            checked += 1;
            for k in 0..params.len() {
                let mut p = params.values().to_vec();
                p[k] += h;
                let up = loop_loss(&spec, &p, x, y);
                p[k] -= 2.0 * h;
                let down = loop_loss(&spec, &p, x, y);
                let fd = (up - down) / (2.0 * h);
                let g = grads.row(i)[k];
                let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    (worst, checked)
}

/// `D_α(μ ‖ μ₀)` for `μ₀ = N(0, σ²)` and `μ = (1−q)N(0, σ²) + qN(1, σ²)` by the
/// trapezoid rule on a wide, fine grid. Computes `A − 1` directly to avoid
/// cancellation when the divergence is tiny.
pub fn quadrature_rdp(q: f64, sigma: f64, alpha: u32) -> f64 {
    let a = alpha as f64;
    let lo = -40.0 * sigma;
    let hi = a + 40.0 * sigma;
    let step = sigma / 400.0;
    let n = ((hi - lo) / step).ceil() as usize;
    let log_norm = -(sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    // Two accumulations: A − 1 directly (accurate when the divergence is
    // tiny) and ln A as a running log-sum-exp (safe when A overflows).
    let mut excess = 0.0;
    let (mut log_max, mut scaled_sum) = (f64::NEG_INFINITY, 0.0);
    for i in 0..=n {
        let z = lo + i as f64 * step;
        let log_mu0 = log_norm - z * z / (2.0 * sigma * sigma);
        // ratio − 1 = q(e^{(2z−1)/(2σ²)} − 1)
        let r_minus_1 = q * ((2.0 * z - 1.0) / (2.0 * sigma * sigma)).exp_m1();
        let log_pow = a * r_minus_1.ln_1p();
        let w = if i == 0 || i == n { 0.5f64 } else { 1.0 };
        excess += w * if log_pow < 1.0 {
            log_mu0.exp() * log_pow.exp_m1()
        } else {
            (log_mu0 + log_pow).exp() - log_mu0.exp()
        };
        let t = w.ln() + log_mu0 + log_pow;
        if t > log_max {
            scaled_sum = scaled_sum * (log_max - t).exp() + 1.0;
            log_max = t;
        } else {
            scaled_sum += (t - log_max).exp();
        }
    }
    let log_a = log_max + scaled_sum.ln() + step.ln();
    if log_a > 1e-3 {
        log_a / (a - 1.0)
    } else {
        (excess * step).ln_1p() / (a - 1.0)
    }
}
