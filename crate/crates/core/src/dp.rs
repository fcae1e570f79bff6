//! DP-SGD with optional smoothed per-sample gradients.
//!
//! One step samples a Poisson batch, computes each sample's gradient (averaged
//! over `K` Gaussian parameter perturbations when smoothing is on), clips it to
//! norm `C`, sums, adds `N(0, σ²C²I)` and divides by the expected batch size.
//!
//! # Sampling the perturbed gradients
//!
//! A perturbed gradient needs the network evaluated at `θ + s·ν` with `ν`
//! standard normal over every parameter. Drawing `ν` explicitly costs one
//! normal per parameter per sample per draw, which dominates everything else
//! for a wide first layer. The engine instead samples the two quantities the
//! perturbation actually feeds into, with the same joint distribution:
//!
//! - forward: for a layer with input `h`, the weight noise `E` (entries
//!   `N(0, s²)`) only enters through `u = E·h`, whose law is
//!   `N(0, s²‖h‖² I)`;
//! - backward: given `u`, the remaining randomness of `E` is orthogonal to
//!   `h`, so `Eᵀδ = h(uᵀδ)/‖h‖² + (I − hhᵀ/‖h‖²)·z` with
//!   `z ~ N(0, s²‖δ‖² I)` fresh.
//!
//! Bias noise is drawn explicitly. The first layer never needs the backward
//! term. [`smoothed_gradient`] perturbs parameters explicitly and serves as
//! the reference the fast path is tested against.
//!
//! Per-sample norms come from Gram matrices of the per-layer activations and
//! back-propagated errors, so per-sample gradients are never materialized
//! except when a step is audited.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::accountant::{PrivacySpend, DEFAULT_DELTA};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, dot, norm_sq};
use crate::nn::{self, init_params, softmax_xent, MlpSpec, ParamVector};
use crate::objective::Objective;
use crate::rng::{Purpose, RngSeed, Stream};

/// Relative slack applied to Gram-based norms before clipping, so the norm of
/// the materialized clipped gradient never exceeds `C` through rounding.
pub const GRAM_NORM_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpSgdConfig {
    /// Step size η; the update is `θ ← θ − η·g̃`.
    pub lr: f64,
    pub expected_batch: usize,
    pub noise_multiplier: f64,
    pub clip: f64,
    pub steps: u64,
    pub smoothing_radius: f64,
    pub smoothing_samples: usize,
    pub dataset_size: usize,
    pub seed: RngSeed,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl DpSgdConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lr, self.noise_multiplier, self.clip, self.smoothing_radius, self.delta];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("DP-SGD config"));
        }
        if !(self.lr > 0.0) || !(self.clip > 0.0) {
            return Err(invalid("lr and clip must be positive"));
        }
        if self.noise_multiplier < 0.0 || self.smoothing_radius < 0.0 {
            return Err(invalid("noise_multiplier and smoothing_radius must be non-negative"));
        }
        if self.expected_batch == 0 || self.smoothing_samples == 0 || self.dataset_size == 0 {
            return Err(invalid("expected_batch, smoothing_samples and dataset_size must be positive"));
        }
        if self.expected_batch > self.dataset_size {
            return Err(invalid("expected_batch cannot exceed dataset_size"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Poisson inclusion probability `L/N`.
    pub fn sampling_rate(&self) -> f64 {
        self.expected_batch as f64 / self.dataset_size as f64
    }

    /// Standard deviation of the parameter perturbation, `R·(η/L)·σ·C`.
    pub fn smoothing_scale(&self) -> f64 {
        self.smoothing_radius * (self.lr / self.expected_batch as f64) * self.noise_multiplier * self.clip
    }

    /// The smoothing applied by this config, `None` when the scale is zero.
    pub fn smoothing(&self) -> Option<Smoothing> {
        Smoothing::new(self.smoothing_scale(), self.smoothing_samples)
    }

    /// Privacy spent after `steps` steps.
    pub fn spend(&self, steps: u64) -> Result<PrivacySpend> {
        PrivacySpend::compute(self.sampling_rate(), self.noise_multiplier, steps, self.delta)
    }
}

/// Gaussian parameter perturbation averaged over `samples` draws.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Smoothing {
    pub scale: f64,
    pub samples: usize,
}

impl Smoothing {
    /// `None` when `scale == 0`: a zero perturbation makes every draw
    /// identical, so the plain gradient is used and `samples` is ignored.
    pub fn new(scale: f64, samples: usize) -> Option<Smoothing> {
        (scale > 0.0).then_some(Smoothing { scale, samples: samples.max(1) })
    }
}

/// Poisson subsampling: every index in `0..n` is kept independently with probability `q`.
pub fn poisson_sample(n: usize, q: f64, stream: &mut Stream) -> Vec<usize> {
    (0..n).filter(|_| stream.uniform() < q).collect()
}

/// Largest factor `f ≤ 1` with `f·norm ≤ clip` in floating point.
pub fn clip_factor(norm: f64, clip: f64) -> f64 {
    if norm <= clip {
        return 1.0;
    }
    let mut f = clip / norm;
    while f * norm > clip {
        f = next_down(f);
    }
    f
}

fn next_down(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite());
    f64::from_bits(x.to_bits() - 1)
}

/// `g / max(1, ‖g‖/C)`.
pub fn clip_gradient(g: &[f64], clip: f64) -> Result<Vec<f64>> {
    if !(clip > 0.0) {
        return Err(invalid("clip threshold must be positive"));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let norm = linalg::norm(g);
    if norm <= clip {
        return Ok(g.to_vec());
    }
    // Dividing by the norm is exact in more cases than multiplying by its
    // reciprocal; fall back to the guarded factor if rounding overshoots.
    let direct: Vec<f64> = g.iter().map(|v| v * clip / norm).collect();
    if linalg::norm(&direct) <= clip {
        return Ok(direct);
    }
    let mut f = clip_factor(norm, clip);
    loop {
        let scaled: Vec<f64> = g.iter().map(|v| v * f).collect();
        if linalg::norm(&scaled) <= clip {
            return Ok(scaled);
        }
        f = next_down(f);
    }
}

/// Average of `∇f(θ + scale·ν_j)` over `samples` explicit draws, keyed like the
/// MLP engine by `(step, index, j)`. Writes into `out` and returns the mean value.
#[allow(clippy::too_many_arguments)]
pub fn smoothed_gradient<O: Objective + ?Sized>(
    f: &O,
    theta: &[f64],
    smoothing: Option<Smoothing>,
    seed: RngSeed,
    step: u64,
    index: u64,
    out: &mut [f64],
) -> f64 {
    let Some(sm) = smoothing else {
        return f.gradient(theta, out);
    };
    out.fill(0.0);
    let mut point = vec![0.0; theta.len()];
    let mut g = vec![0.0; theta.len()];
    let w = 1.0 / sm.samples as f64;
    let mut value = 0.0;
    for j in 0..sm.samples {
        point.copy_from_slice(theta);
        seed.stream(Purpose::Smoothing, step, index, j as u64).add_normal(sm.scale, &mut point);
        value += w * f.gradient(&point, &mut g);
        linalg::axpy(w, &g, out);
    }
    value
}

/// Per-layer activations and errors of a (possibly smoothed) batch pass.
///
/// Layer 0 is stored per sample with its errors already summed over the
/// smoothing draws; deeper layers hold one row per `(sample, draw)` pair.
struct BatchPass {
    n: usize,
    k: usize,
    inputs: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

/// Offsets of each layer's noise inside one row's normal buffer.
struct NoiseLayout {
    forward: Vec<usize>,
    backward: Vec<usize>,
    total: usize,
}

impl NoiseLayout {
    fn new(spec: &MlpSpec) -> Self {
        let layers = spec.layers();
        let mut offset = 0;
        let mut forward = Vec::with_capacity(layers.len());
        for s in &layers {
            forward.push(offset);
            offset += 2 * s.fan_out;
        }
        let mut backward = vec![0; layers.len()];
        for l in (1..layers.len()).rev() {
            backward[l] = offset;
            offset += layers[l].fan_in;
        }
        NoiseLayout { forward, backward, total: offset }
    }
}

#[allow(clippy::too_many_arguments)]
fn batch_pass(
    params: &[f64],
    spec: &MlpSpec,
    x: &[f64],
    labels: &[usize],
    ids: &[usize],
    smoothing: Option<Smoothing>,
    seed: RngSeed,
    step: u64,
) -> BatchPass {
    let layers = spec.layers();
    let n = labels.len();
    let (k, s) = match smoothing {
        Some(sm) => (sm.samples, sm.scale),
        None => (1, 0.0),
    };
    let rows = n * k;
    let layout = NoiseLayout::new(spec);
    let mut noise = vec![0.0; if s > 0.0 { rows * layout.total } else { 0 }];
    if s > 0.0 {
        for (r, buf) in noise.chunks_exact_mut(layout.total).enumerate() {
            let (i, j) = (r / k, r % k);
            seed.stream(Purpose::Smoothing, step, ids[i] as u64, j as u64).fill_normal(1.0, buf);
        }
    }

    // Forward. `weight_noise[l]` keeps `u = E·h` for the backward correction.
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut weight_noise: Vec<Vec<f64>> = vec![Vec::new(); layers.len()];
    inputs.push(x.to_vec());
    for (l, shape) in layers.iter().enumerate() {
        let fo = shape.fan_out;
        let z = if l == 0 {
            let mut z0 = vec![0.0; n * fo];
            nn::affine(params, shape, x, n, &mut z0);
            if s > 0.0 {
                let mut z = vec![0.0; rows * fo];
                for r in 0..rows {
                    let i = r / k;
                    let hn = linalg::norm(&x[i * shape.fan_in..(i + 1) * shape.fan_in]);
                    let xi = &noise[r * layout.total + layout.forward[0]..][..2 * fo];
                    for (o, zv) in z[r * fo..(r + 1) * fo].iter_mut().enumerate() {
                        *zv = z0[i * fo + o] + s * hn * xi[o] + s * xi[fo + o];
                    }
                }
                z
            } else {
                z0
            }
        } else {
            let h = &inputs[l];
            let mut z = vec![0.0; rows * fo];
            nn::affine(params, shape, h, rows, &mut z);
            if s > 0.0 {
                let mut u = vec![0.0; rows * fo];
                for r in 0..rows {
                    let hn = linalg::norm(&h[r * shape.fan_in..(r + 1) * shape.fan_in]);
                    let xi = &noise[r * layout.total + layout.forward[l]..][..2 * fo];
                    for o in 0..fo {
                        let uv = s * hn * xi[o];
                        u[r * fo + o] = uv;
                        z[r * fo + o] += uv + s * xi[fo + o];
                    }
                }
                weight_noise[l] = u;
            }
            z
        };
        if l + 1 < layers.len() {
            inputs.push(z.iter().map(|&v| spec.activation.apply(v)).collect());
        }
        pre.push(z);
    }

    // Backward.
    let repeated: Vec<usize> = labels.iter().flat_map(|&y| core::iter::repeat(y).take(k)).collect();
    let mut delta = vec![0.0; rows * spec.output_dim];
    softmax_xent(&pre[layers.len() - 1], &repeated, spec.output_dim, &mut delta);
    let mut deltas: Vec<Vec<f64>> = vec![Vec::new(); layers.len()];
    for l in (1..layers.len()).rev() {
        let shape = &layers[l];
        let (fi, fo) = (shape.fan_in, shape.fan_out);
        let mut back = vec![0.0; rows * fi];
        linalg::gemm_nn(rows, fo, fi, &delta, &params[shape.weights()], 0.0, &mut back);
        let h = &inputs[l];
        if s > 0.0 {
            let u = &weight_noise[l];
            for r in 0..rows {
                let hr = &h[r * fi..(r + 1) * fi];
                let dr = &delta[r * fo..(r + 1) * fo];
                let zeta = &noise[r * layout.total + layout.backward[l]..][..fi];
                let zs = s * linalg::norm(dr);
                let br = &mut back[r * fi..(r + 1) * fi];
                let hn2 = norm_sq(hr);
                if hn2 > 0.0 {
                    let hz = zs * dot(hr, zeta);
                    let coef = (dot(&u[r * fo..(r + 1) * fo], dr) - hz) / hn2;
                    for ((b, &hv), &zv) in br.iter_mut().zip(hr).zip(zeta) {
                        *b += zs * zv + coef * hv;
                    }
                } else {
                    linalg::axpy(zs, zeta, br);
                }
            }
        }
        for ((b, &zv), &hv) in back.iter_mut().zip(&pre[l - 1]).zip(h.iter()) {
            *b *= spec.activation.derivative(zv, hv);
        }
        deltas[l] = core::mem::replace(&mut delta, back);
    }
    deltas[0] = if k == 1 {
        delta
    } else {
        let fo = layers[0].fan_out;
        let mut reduced = vec![0.0; n * fo];
        for (r, d) in delta.chunks_exact(fo).enumerate() {
            for (o, &v) in reduced[(r / k) * fo..(r / k + 1) * fo].iter_mut().zip(d) {
                *o += v;
            }
        }
        reduced
    };
    BatchPass { n, k, inputs, deltas }
}

impl BatchPass {
    /// Squared norm of `(1/K)·Σ_j g_ij` for every sample.
    fn sample_sq_norms(&self, spec: &MlpSpec) -> Vec<f64> {
        let layers = spec.layers();
        let (n, k) = (self.n, self.k);
        let mut out = vec![0.0; n];
        let inv_k2 = 1.0 / (k * k) as f64;
        for (l, shape) in layers.iter().enumerate() {
            let (fi, fo) = (shape.fan_in, shape.fan_out);
            let (h, d) = (&self.inputs[l], &self.deltas[l]);
            for (i, acc) in out.iter_mut().enumerate() {
                if l == 0 {
                    *acc += norm_sq(&d[i * fo..(i + 1) * fo]) * (norm_sq(&h[i * fi..(i + 1) * fi]) + 1.0) * inv_k2;
                    continue;
                }
                let mut s = 0.0;
                for a in 0..k {
                    let (ra, da) = (i * k + a, &d[(i * k + a) * fo..(i * k + a + 1) * fo]);
                    for b in 0..k {
                        let rb = i * k + b;
                        let dd = dot(da, &d[rb * fo..(rb + 1) * fo]);
                        let hh = dot(&h[ra * fi..(ra + 1) * fi], &h[rb * fi..(rb + 1) * fi]);
                        s += dd * (hh + 1.0);
                    }
                }
                *acc += s * inv_k2;
            }
        }
        out
    }

    /// `Σ_i w_i·(1/K)·Σ_j g_ij` accumulated into `grad`.
    fn weighted_sum(&self, spec: &MlpSpec, weights: &[f64], grad: &mut [f64]) {
        let k = self.k;
        let inv_k = 1.0 / k as f64;
        for (l, shape) in spec.layers().iter().enumerate() {
            let fo = shape.fan_out;
            let per_row = if l == 0 { 1 } else { k };
            let mut scaled = self.deltas[l].clone();
            for (r, d) in scaled.chunks_exact_mut(fo).enumerate() {
                let w = weights[r / per_row] * inv_k;
                for v in d {
                    *v *= w;
                }
            }
            let rows = scaled.len() / fo;
            linalg::gemm_tn(fo, rows, shape.fan_in, &scaled, &self.inputs[l], 1.0, &mut grad[shape.weights()]);
            let gb = &mut grad[shape.bias()];
            for d in scaled.chunks_exact(fo) {
                for (g, &v) in gb.iter_mut().zip(d) {
                    *g += v;
                }
            }
        }
    }

    /// Materializes `w·(1/K)·Σ_j g_ij` for one sample.
    fn sample_gradient(&self, spec: &MlpSpec, i: usize, w: f64, out: &mut [f64]) {
        out.fill(0.0);
        let k = self.k;
        let scale = w / k as f64;
        for (l, shape) in spec.layers().iter().enumerate() {
            let (fi, fo) = (shape.fan_in, shape.fan_out);
            let row_range = if l == 0 { i..i + 1 } else { i * k..(i + 1) * k };
            for r in row_range {
                let h = &self.inputs[l][r * fi..(r + 1) * fi];
                let d = &self.deltas[l][r * fo..(r + 1) * fo];
                for (o, &dv) in d.iter().enumerate() {
                    let c = scale * dv;
                    let start = shape.weight_offset + o * fi;
                    for (g, &hv) in out[start..start + fi].iter_mut().zip(h) {
                        *g += c * hv;
                    }
                    out[shape.bias_offset + o] += c;
                }
            }
        }
    }
}

fn gather(data: &Dataset, indices: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut x = Vec::with_capacity(indices.len() * data.input_dim());
    let mut y = Vec::with_capacity(indices.len());
    for &i in indices {
        x.extend_from_slice(data.input(i));
        y.push(data.labels()[i]);
    }
    (x, y)
}

/// Smoothed (or plain, when the config's scale is zero) gradient of one
/// sample's loss at `params`, without clipping. Draws are keyed by
/// `(step, index)` exactly as inside [`dp_sgd_step`].
pub fn smoothed_per_sample_gradient(
    params: &ParamVector,
    spec: &MlpSpec,
    data: &Dataset,
    index: usize,
    cfg: &DpSgdConfig,
    step: u64,
) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    spec.check_batch(&data.as_batch())?;
    if index >= data.len() {
        return Err(invalid("sample index out of range"));
    }
    let (x, y) = gather(data, &[index]);
    let pass = batch_pass(params.values(), spec, &x, &y, &[index], cfg.smoothing(), cfg.seed, step);
    let mut g = vec![0.0; params.len()];
    pass.sample_gradient(spec, 0, 1.0, &mut g);
    Ok(g)
}

/// Pre-noise result of clipping and summing a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ClippedSum {
    pub sum: Vec<f64>,
    /// Per-sample norms before clipping.
    pub norms: Vec<f64>,
    /// Per-sample clip factors.
    pub factors: Vec<f64>,
    /// Largest norm among the materialized clipped gradients, when audited.
    pub audited_max_norm: Option<f64>,
    /// Materialized clipped gradients whose norm exceeded `C`.
    pub violations: u64,
}

/// Clips and sums the (optionally smoothed) gradients of `indices`.
#[allow(clippy::too_many_arguments)]
pub fn clipped_gradient_sum(
    params: &ParamVector,
    spec: &MlpSpec,
    data: &Dataset,
    indices: &[usize],
    smoothing: Option<Smoothing>,
    clip: f64,
    seed: RngSeed,
    step: u64,
    audit: bool,
) -> Result<ClippedSum> {
    let mut out = ClippedSum {
        sum: vec![0.0; params.len()],
        norms: Vec::new(),
        factors: Vec::new(),
        audited_max_norm: audit.then_some(0.0),
        violations: 0,
    };
    if indices.is_empty() {
        return Ok(out);
    }
    let (x, y) = gather(data, indices);
    let pass = batch_pass(params.values(), spec, &x, &y, indices, smoothing, seed, step);
    let sq = pass.sample_sq_norms(spec);
    let guarded_clip = clip * (1.0 - GRAM_NORM_SLACK);
    for (pos, &s) in sq.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::NonFiniteGradient { step: step as usize, sample: indices[pos] });
        }
        let norm = libm::sqrt(s);
        out.norms.push(norm);
        out.factors.push(clip_factor(norm, guarded_clip));
    }
    pass.weighted_sum(spec, &out.factors, &mut out.sum);
    if audit {
        let mut g = vec![0.0; params.len()];
        let mut max = 0.0f64;
        for (pos, &f) in out.factors.iter().enumerate() {
            pass.sample_gradient(spec, pos, f, &mut g);
            let norm = linalg::norm(&g);
            max = max.max(norm);
            if norm > clip {
                out.violations += 1;
            }
        }
        out.audited_max_norm = Some(max);
    }
    Ok(out)
}

/// Diagnostics of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub batch_size: usize,
    /// Mean norm of the clipped per-sample gradients, before noise (0 for an empty batch).
    pub mean_clipped_norm: f64,
    pub max_clipped_norm: f64,
    /// Squared norm of the pre-noise update direction `Σ clipped / L`.
    pub update_sq_norm: f64,
    /// Parameter norm after the update.
    pub param_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub audited_max_norm: Option<f64>,
    #[serde(default)]
    pub clip_violations: u64,
}

/// One DP-SGD step. Smoothing is taken from `cfg`; with a zero smoothing
/// scale this is exactly [`vanilla_dp_sgd_step`].
pub fn dp_sgd_step(
    params: &ParamVector,
    spec: &MlpSpec,
    data: &Dataset,
    cfg: &DpSgdConfig,
    step: u64,
    audit: bool,
) -> Result<(ParamVector, StepStats)> {
    step_with(params, spec, data, cfg, cfg.smoothing(), step, audit)
}

/// One step of plain DP-SGD, ignoring the config's smoothing settings.
pub fn vanilla_dp_sgd_step(
    params: &ParamVector,
    spec: &MlpSpec,
    data: &Dataset,
    cfg: &DpSgdConfig,
    step: u64,
) -> Result<(ParamVector, StepStats)> {
    step_with(params, spec, data, cfg, None, step, false)
}

fn step_with(
    params: &ParamVector,
    spec: &MlpSpec,
    data: &Dataset,
    cfg: &DpSgdConfig,
    smoothing: Option<Smoothing>,
    step: u64,
    audit: bool,
) -> Result<(ParamVector, StepStats)> {
    cfg.validate()?;
    spec.check_params(params)?;
    if data.len() != cfg.dataset_size {
        return Err(Error::DimensionMismatch { what: "dataset size", expected: cfg.dataset_size, got: data.len() });
    }
    let indices = poisson_sample(data.len(), cfg.sampling_rate(), &mut cfg.seed.stream(Purpose::Poisson, step, 0, 0));
    let clipped = clipped_gradient_sum(params, spec, data, &indices, smoothing, cfg.clip, cfg.seed, step, audit)?;
    let inv_l = 1.0 / cfg.expected_batch as f64;
    let update_sq_norm = norm_sq(&clipped.sum) * inv_l * inv_l;

    let mut next = params.clone();
    let mut noise = cfg.seed.stream(Purpose::GradientNoise, step, 0, 0);
    let noise_std = cfg.noise_multiplier * cfg.clip;
    for (p, &g) in next.values_mut().iter_mut().zip(&clipped.sum) {
        let noisy = (g + noise_std * noise.normal()) * inv_l;
        *p -= cfg.lr * noisy;
    }
    if !next.is_finite() {
        return Err(Error::NonFiniteParameters { step: step as usize });
    }
    let clipped_norms: Vec<f64> = clipped.norms.iter().zip(&clipped.factors).map(|(n, f)| n * f).collect();
    let stats = StepStats {
        step,
        batch_size: indices.len(),
        mean_clipped_norm: if clipped_norms.is_empty() {
            0.0
        } else {
            clipped_norms.iter().sum::<f64>() / clipped_norms.len() as f64
        },
        max_clipped_norm: clipped_norms.iter().copied().fold(0.0, f64::max),
        update_sq_norm,
        param_norm: next.norm(),
        audited_max_norm: clipped.audited_max_norm,
        clip_violations: clipped.violations,
    };
    Ok((next, stats))
}

/// Test-set metrics at one point of training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub accuracy: f64,
    pub loss: f64,
}

/// Everything recorded about one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: RngSeed,
    pub config: DpSgdConfig,
    pub steps: Vec<StepStats>,
    pub evals: Vec<EvalPoint>,
    pub final_params: ParamVector,
    pub test_accuracy: f64,
    pub test_loss: f64,
    /// Highest accuracy among the recorded evaluations (including the final one).
    pub best_accuracy: f64,
    pub spend: PrivacySpend,
    /// `(1/T)·Σ_t ‖Σ clipped / L‖²`, the observable tracked in place of the
    /// full-data gradient norm.
    pub mean_update_sq_norm: f64,
    pub clip_violations: u64,
}

/// Knobs that affect what is recorded, not what is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainOptions {
    /// Evaluate on the test set every this many steps; 0 evaluates only at the end.
    pub eval_every: u64,
    /// Materialize every clipped per-sample gradient and check its norm.
    pub audit_clipping: bool,
}

/// Iterates DP-SGD steps from a given starting point.
pub struct DpSgdTrainer<'a> {
    spec: &'a MlpSpec,
    data: &'a Dataset,
    cfg: DpSgdConfig,
    params: ParamVector,
    next_step: u64,
    audit: bool,
}

impl<'a> DpSgdTrainer<'a> {
    pub fn new(spec: &'a MlpSpec, data: &'a Dataset, cfg: DpSgdConfig, init: ParamVector) -> Result<Self> {
        cfg.validate()?;
        spec.check_params(&init)?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(DpSgdTrainer { spec, data, cfg, params: init, next_step: 0, audit: false })
    }

    pub fn audit_clipping(mut self, on: bool) -> Self {
        self.audit = on;
        self
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn steps_done(&self) -> u64 {
        self.next_step
    }

    pub fn step(&mut self) -> Result<StepStats> {
        let (next, stats) = dp_sgd_step(&self.params, self.spec, self.data, &self.cfg, self.next_step, self.audit)?;
        self.params = next;
        self.next_step += 1;
        Ok(stats)
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }
}

/// Trains from the seed's Glorot initialization for `cfg.steps` steps.
pub fn train(
    spec: &MlpSpec,
    train: &Dataset,
    test: &Dataset,
    cfg: &DpSgdConfig,
    opts: TrainOptions,
) -> Result<RunRecord> {
    train_from(spec, train, test, cfg, init_params(spec, cfg.seed), opts)
}

pub fn train_from(
    spec: &MlpSpec,
    train: &Dataset,
    test: &Dataset,
    cfg: &DpSgdConfig,
    init: ParamVector,
    opts: TrainOptions,
) -> Result<RunRecord> {
    let spend = cfg.spend(cfg.steps)?;
    let mut trainer = DpSgdTrainer::new(spec, train, cfg.clone(), init)?.audit_clipping(opts.audit_clipping);
    let mut steps = Vec::with_capacity(cfg.steps as usize);
    let mut evals = Vec::new();
    for t in 0..cfg.steps {
        steps.push(trainer.step()?);
        let done = t + 1;
        if opts.eval_every > 0 && done % opts.eval_every == 0 && done != cfg.steps {
            let e = nn::evaluate(trainer.params(), spec, test)?;
            evals.push(EvalPoint { step: done, accuracy: e.accuracy, loss: e.mean_loss });
        }
    }
    let final_params = trainer.into_params();
    let e = nn::evaluate(&final_params, spec, test)?;
    evals.push(EvalPoint { step: cfg.steps, accuracy: e.accuracy, loss: e.mean_loss });
    let mean_update_sq_norm =
        if steps.is_empty() { 0.0 } else { steps.iter().map(|s| s.update_sq_norm).sum::<f64>() / steps.len() as f64 };
    Ok(RunRecord {
        seed: cfg.seed,
        config: cfg.clone(),
        clip_violations: steps.iter().map(|s| s.clip_violations).sum(),
        best_accuracy: evals.iter().map(|e| e.accuracy).fold(0.0, f64::max),
        steps,
        evals,
        final_params,
        test_accuracy: e.accuracy,
        test_loss: e.mean_loss,
        spend,
        mean_update_sq_norm,
    })
}

/// Outcome of DP-SGD on a data-free objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveRun {
    pub theta: Vec<f64>,
    pub loss: f64,
    /// `(1/T)·Σ_t ‖∇f(θ_t)‖²` of the unsmoothed objective.
    pub mean_sq_grad_norm: f64,
}

/// DP-SGD on an objective that plays the role of a single record's loss.
///
/// Every step uses that record (inclusion probability 1), so the update is
/// `θ ← θ − (η/L)·(clip(g) + N(0, σ²C²I))` with `g` the smoothed gradient.
pub fn dp_sgd_objective<O: Objective + ?Sized>(f: &O, init: Vec<f64>, cfg: &DpSgdConfig) -> Result<ObjectiveRun> {
    cfg.validate()?;
    if init.len() != f.dim() {
        return Err(Error::DimensionMismatch { what: "objective start point", expected: f.dim(), got: init.len() });
    }
    let smoothing = cfg.smoothing();
    let mut theta = init;
    let mut g = vec![0.0; theta.len()];
    let mut plain = vec![0.0; theta.len()];
    let mut sq_sum = 0.0;
    let step_size = cfg.lr / cfg.expected_batch as f64;
    let noise_std = cfg.noise_multiplier * cfg.clip;
    for t in 0..cfg.steps {
        f.gradient(&theta, &mut plain);
        sq_sum += norm_sq(&plain);
        smoothed_gradient(f, &theta, smoothing, cfg.seed, t, 0, &mut g);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { step: t as usize, sample: 0 });
        }
        let factor = clip_factor(linalg::norm(&g), cfg.clip);
        let mut noise = cfg.seed.stream(Purpose::GradientNoise, t, 0, 0);
        for (p, &gv) in theta.iter_mut().zip(&g) {
            *p -= step_size * (factor * gv + noise_std * noise.normal());
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParameters { step: t as usize });
        }
    }
    let loss = f.value(&theta);
    let mean_sq_grad_norm = if cfg.steps == 0 { 0.0 } else { sq_sum / cfg.steps as f64 };
    Ok(ObjectiveRun { theta, loss, mean_sq_grad_norm })
}
