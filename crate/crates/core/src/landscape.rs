//! Loss-landscape tools: the two-basin toy objective, Monte Carlo smoothing,
//! multi-run DP-SGD on the toy, `(C_ε; A)`-sharpness with `A = I`,
//! filter-normalized slices and empirical smoothness estimates.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dp::{self, DpSgdConfig};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::nn::{self, MlpSpec, ParamVector};
use crate::objective::Objective;
use crate::rng::{Purpose, RngSeed, Stream};
use crate::stats;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Two radially symmetric basins blended by distance-based soft weights.
///
/// `L(θ) = F_u(θ)·w_u(θ) + F_v(θ)·w_v(θ)` with
/// `F_u = S(r_u/5 − 5/r_u)` (wide basin around `u`),
/// `F_v = S(2r_v/5 − 5/(2r_v))` (narrow basin around `v`) and
/// `w_x = e^{−r_x/2} / (e^{−r_u/2} + e^{−r_v/2})`. Each `F` is defined as 0 at its center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyLandscape {
    pub u: [f64; 2],
    pub v: [f64; 2],
}

impl Default for ToyLandscape {
    fn default() -> Self {
        ToyLandscape { u: [0.0, 0.0], v: [10.0, 0.0] }
    }
}

/// Value and derivative w.r.t. `r` of `S(a·r − b/r)`.
fn radial(r: f64, a: f64, b: f64) -> (f64, f64) {
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let s = sigmoid(a * r - b / r);
    (s, s * (1.0 - s) * (a + b / (r * r)))
}

impl ToyLandscape {
    pub fn new(u: [f64; 2], v: [f64; 2]) -> Result<Self> {
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("toy centers"));
        }
        if u == v {
            return Err(invalid("toy centers must differ"));
        }
        Ok(ToyLandscape { u, v })
    }

    pub fn separation(&self) -> f64 {
        libm::hypot(self.u[0] - self.v[0], self.u[1] - self.v[1])
    }

    pub fn loss(&self, theta: [f64; 2]) -> f64 {
        self.eval(theta, None)
    }

    pub fn gradient(&self, theta: [f64; 2]) -> [f64; 2] {
        let mut g = [0.0; 2];
        self.eval(theta, Some(&mut g));
        g
    }

    fn eval(&self, t: [f64; 2], grad: Option<&mut [f64; 2]>) -> f64 {
        let du = [t[0] - self.u[0], t[1] - self.u[1]];
        let dv = [t[0] - self.v[0], t[1] - self.v[1]];
        let (ru, rv) = (libm::hypot(du[0], du[1]), libm::hypot(dv[0], dv[1]));
        let (fu, dfu) = radial(ru, 0.2, 5.0);
        let (fv, dfv) = radial(rv, 0.4, 2.5);
        // w_u = S((r_v − r_u)/2), computed without exponentials of large distances.
        let wu = sigmoid((rv - ru) / 2.0);
        let wv = 1.0 - wu;
        if let Some(g) = grad {
            let unit = |d: [f64; 2], r: f64| if r > 0.0 { [d[0] / r, d[1] / r] } else { [0.0, 0.0] };
            let (eu, ev) = (unit(du, ru), unit(dv, rv));
            let dwu = wu * (1.0 - wu) * 0.5;
            for c in 0..2 {
                g[c] = dfu * wu * eu[c] + dfv * wv * ev[c] + (fu - fv) * dwu * (ev[c] - eu[c]);
            }
        }
        fu * wu + fv * wv
    }
}

impl Objective for ToyLandscape {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.loss([x[0], x[1]])
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let mut g = [0.0; 2];
        let v = self.eval([x[0], x[1]], Some(&mut g));
        out.copy_from_slice(&g);
        v
    }
}

/// Monte Carlo estimate of `E[f(θ + Δ)]`, `Δ ~ N(0, σ²I)`.
pub fn smoothed_loss_mc<O: Objective + ?Sized>(
    f: &O,
    theta: &[f64],
    sigma: f64,
    n_mc: usize,
    stream: &mut Stream,
) -> Result<f64> {
    if n_mc == 0 {
        return Err(invalid("n_mc must be at least 1"));
    }
    if sigma == 0.0 {
        return Ok(f.value(theta));
    }
    let mut point = vec![0.0; theta.len()];
    let mut sum = 0.0;
    for _ in 0..n_mc {
        point.copy_from_slice(theta);
        stream.add_normal(sigma, &mut point);
        sum += f.value(&point);
    }
    Ok(sum / n_mc as f64)
}

/// `f` averaged over a fixed set of Gaussian offsets (common random numbers),
/// so that differences between points reflect the function, not the draws.
pub struct MonteCarloSmoothed<'a, O: Objective + ?Sized> {
    f: &'a O,
    offsets: Vec<Vec<f64>>,
}

impl<'a, O: Objective + ?Sized> MonteCarloSmoothed<'a, O> {
    pub fn new(f: &'a O, sigma: f64, n_mc: usize, seed: RngSeed) -> Self {
        let mut s = seed.stream(Purpose::MonteCarlo, 0, 0, 0);
        let offsets = (0..n_mc.max(1))
            .map(|_| {
                let mut d = vec![0.0; f.dim()];
                s.fill_normal(sigma, &mut d);
                d
            })
            .collect();
        MonteCarloSmoothed { f, offsets }
    }
}

impl<O: Objective + ?Sized> Objective for MonteCarloSmoothed<'_, O> {
    fn dim(&self) -> usize {
        self.f.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut p = vec![0.0; x.len()];
        let mut sum = 0.0;
        for d in &self.offsets {
            for ((pv, xv), dv) in p.iter_mut().zip(x).zip(d) {
                *pv = xv + dv;
            }
            sum += self.f.value(&p);
        }
        sum / self.offsets.len() as f64
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let mut p = vec![0.0; x.len()];
        let mut g = vec![0.0; x.len()];
        out.fill(0.0);
        let w = 1.0 / self.offsets.len() as f64;
        let mut sum = 0.0;
        for d in &self.offsets {
            for ((pv, xv), dv) in p.iter_mut().zip(x).zip(d) {
                *pv = xv + dv;
            }
            sum += self.f.gradient(&p, &mut g);
            linalg::axpy(w, &g, out);
        }
        sum * w
    }
}

/// Settings of the multi-run toy experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyExperiment {
    pub landscape: ToyLandscape,
    /// DP-SGD settings; `expected_batch = dataset_size = 1` makes the toy loss
    /// a single record sampled every step.
    pub dp: DpSgdConfig,
    /// Initial iterates are uniform over `[x0, x1] × [y0, y1]`.
    pub init_box: [f64; 4],
    /// A final iterate within this distance of `u` counts as captured by the flat basin.
    pub capture_radius: f64,
}

impl Default for ToyExperiment {
    fn default() -> Self {
        ToyExperiment {
            landscape: ToyLandscape::default(),
            dp: DpSgdConfig {
                lr: 2.0,
                expected_batch: 1,
                noise_multiplier: 3.0,
                clip: 0.05,
                steps: 2000,
                smoothing_radius: 10.0,
                smoothing_samples: 8,
                dataset_size: 1,
                seed: RngSeed(1),
                delta: crate::accountant::DEFAULT_DELTA,
            },
            init_box: [-8.0, 18.0, -10.0, 10.0],
            capture_radius: 7.5,
        }
    }
}

/// Final state of one toy run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRun {
    pub run: usize,
    pub theta: [f64; 2],
    pub loss: f64,
    pub mean_sq_grad_norm: f64,
}

/// Runs `n_runs` independent DP-SGD trajectories on the toy loss.
///
/// Run `i` uses seed `dp.seed + i` for both its start point and its noise, so
/// the smoothed and unsmoothed arms are paired run by run.
pub fn run_toy_experiment(n_runs: usize, exp: &ToyExperiment, smoothing: bool) -> Result<Vec<ToyRun>> {
    if n_runs == 0 {
        return Err(invalid("n_runs must be at least 1"));
    }
    let [x0, x1, y0, y1] = exp.init_box;
    if !(x0 < x1 && y0 < y1) {
        return Err(invalid("init box must have positive extent"));
    }
    (0..n_runs).map(|i| toy_run(i, exp, smoothing)).collect()
}

/// One run of [`run_toy_experiment`].
pub fn toy_run(i: usize, exp: &ToyExperiment, smoothing: bool) -> Result<ToyRun> {
    let [x0, x1, y0, y1] = exp.init_box;
    let mut cfg = exp.dp.clone();
    cfg.seed = exp.dp.seed.offset(i as u64);
    if !smoothing {
        cfg.smoothing_radius = 0.0;
    }
    let mut s = cfg.seed.stream(Purpose::ToyInit, 0, 0, 0);
    let init = vec![s.uniform_in(x0, x1), s.uniform_in(y0, y1)];
    let out = dp::dp_sgd_objective(&exp.landscape, init, &cfg)?;
    Ok(ToyRun { run: i, theta: [out.theta[0], out.theta[1]], loss: out.loss, mean_sq_grad_norm: out.mean_sq_grad_norm })
}

/// Aggregate view of a set of toy runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub runs: usize,
    pub capture_fraction: f64,
    pub median_loss: f64,
    pub p99_loss: f64,
    pub mean_sq_grad_norm: f64,
}

pub fn summarize_toy(runs: &[ToyRun], exp: &ToyExperiment) -> ToySummary {
    let u = exp.landscape.u;
    let captured =
        runs.iter().filter(|r| libm::hypot(r.theta[0] - u[0], r.theta[1] - u[1]) < exp.capture_radius).count();
    let losses: Vec<f64> = runs.iter().map(|r| r.loss).collect();
    ToySummary {
        runs: runs.len(),
        capture_fraction: captured as f64 / runs.len() as f64,
        median_loss: stats::median(&losses),
        p99_loss: stats::quantile(&losses, 0.99),
        mean_sq_grad_norm: stats::mean(&runs.iter().map(|r| r.mean_sq_grad_norm).collect::<Vec<_>>()),
    }
}

/// Settings of the sharpness maximizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessOptions {
    pub epsilon: f64,
    pub restarts: usize,
    pub iterations: usize,
    pub seed: RngSeed,
}

impl Default for SharpnessOptions {
    fn default() -> Self {
        SharpnessOptions { epsilon: 0.0045, restarts: 10, iterations: 100, seed: RngSeed(0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessReport {
    /// The larger of the ascent and (for 2-D objectives) grid values.
    pub c_eps_sharpness: f64,
    pub ascent_sharpness: f64,
    /// Dense-grid value, computed only for 2-D objectives.
    pub grid_sharpness: Option<f64>,
    pub epsilon_box: f64,
    pub restarts: usize,
    /// Offset `y` attaining the best ascent value.
    pub best_offset: Vec<f64>,
    pub base_loss: f64,
    pub max_loss: f64,
}

/// Points per axis of the grid search used for 2-D objectives.
pub const SHARPNESS_GRID_POINTS: usize = 201;

fn sharpness_value(max_loss: f64, base: f64) -> f64 {
    (max_loss - base) / (1.0 + base) * 100.0
}

/// `(C_ε; I)`-sharpness: `100·(max_{y∈C_ε} f(θ+y) − f(θ)) / (1 + f(θ))` with
/// `C_ε = {y : |y_i| ≤ ε(|θ_i| + 1)}`.
///
/// The maximum is approximated by projected gradient ascent,
/// `y ← clamp(y + (ε/10)·∇f(θ + y))`, for `iterations` steps per restart.
/// Restart 0 starts at `y = 0`, the others at uniform points of the box, and
/// every visited point counts, so the value is never negative. Two-dimensional
/// objectives are also searched on a dense grid and the larger value is reported.
pub fn c_eps_sharpness<O: Objective + ?Sized>(
    f: &O,
    theta: &[f64],
    opts: &SharpnessOptions,
) -> Result<SharpnessReport> {
    if !(opts.epsilon > 0.0) {
        return Err(invalid("sharpness epsilon must be positive"));
    }
    if theta.len() != f.dim() {
        return Err(Error::DimensionMismatch { what: "sharpness point", expected: f.dim(), got: theta.len() });
    }
    let base = f.value(theta);
    if !base.is_finite() {
        return Err(Error::NonFinite("loss at the sharpness center"));
    }
    let half: Vec<f64> = theta.iter().map(|t| opts.epsilon * (libm::fabs(*t) + 1.0)).collect();
    let step = opts.epsilon / 10.0;
    let mut best = base;
    let mut best_y = vec![0.0; theta.len()];
    let mut y = vec![0.0; theta.len()];
    let mut point = vec![0.0; theta.len()];
    let mut g = vec![0.0; theta.len()];
    for r in 0..opts.restarts.max(1) {
        if r == 0 {
            y.fill(0.0);
        } else {
            let mut s = opts.seed.stream(Purpose::SharpnessRestart, r as u64, 0, 0);
            for (yv, h) in y.iter_mut().zip(&half) {
                *yv = s.uniform_in(-h, *h);
            }
        }
        for it in 0..=opts.iterations {
            for ((p, t), yv) in point.iter_mut().zip(theta).zip(&y) {
                *p = t + yv;
            }
            let value = f.gradient(&point, &mut g);
            if value > best {
                best = value;
                best_y.copy_from_slice(&y);
            }
            if it == opts.iterations {
                break;
            }
            for ((yv, gv), h) in y.iter_mut().zip(&g).zip(&half) {
                *yv = (*yv + step * gv).clamp(-h, *h);
            }
        }
    }
    let ascent = sharpness_value(best, base);
    let grid = if theta.len() == 2 {
        Some(grid_sharpness_2d(f, [theta[0], theta[1]], opts.epsilon, SHARPNESS_GRID_POINTS)?.0)
    } else {
        None
    };
    let reported = grid.map_or(ascent, |g| g.max(ascent));
    Ok(SharpnessReport {
        c_eps_sharpness: reported,
        ascent_sharpness: ascent,
        grid_sharpness: grid,
        epsilon_box: opts.epsilon,
        restarts: opts.restarts.max(1),
        best_offset: best_y,
        base_loss: base,
        max_loss: base + reported / 100.0 * (1.0 + base),
    })
}

/// Dense-grid sharpness for two-dimensional objectives: the maximum over a
/// `points × points` grid spanning the box. Returns the sharpness value and
/// the grid's half cell diagonal, the resolution of the search.
pub fn grid_sharpness_2d<O: Objective + ?Sized>(
    f: &O,
    theta: [f64; 2],
    epsilon: f64,
    points: usize,
) -> Result<(f64, f64)> {
    if f.dim() != 2 || points < 2 {
        return Err(invalid("grid sharpness needs a 2-D objective and at least 2 points per axis"));
    }
    let base = f.value(&theta);
    let half = [epsilon * (libm::fabs(theta[0]) + 1.0), epsilon * (libm::fabs(theta[1]) + 1.0)];
    let mut best = base;
    let step = |c: usize, i: usize| -half[c] + 2.0 * half[c] * i as f64 / (points - 1) as f64;
    for i in 0..points {
        for j in 0..points {
            let v = f.value(&[theta[0] + step(0, i), theta[1] + step(1, j)]);
            best = best.max(v);
        }
    }
    let cell = [2.0 * half[0] / (points - 1) as f64, 2.0 * half[1] / (points - 1) as f64];
    Ok((sharpness_value(best, base), 0.5 * libm::hypot(cell[0], cell[1])))
}

/// One row of a filter-normalized slice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub alpha: f64,
    pub loss: f64,
    pub accuracy: f64,
}

/// Gaussian direction with every filter (weight row plus its bias) rescaled
/// to the norm of the matching filter of `params`. Filters whose parameters
/// are all zero are left unscaled.
pub fn filter_normalized_direction(params: &ParamVector, seed: RngSeed) -> Vec<f64> {
    let mut d = vec![0.0; params.len()];
    seed.stream(Purpose::SliceDirection, 0, 0, 0).fill_normal(1.0, &mut d);
    for filter in params.filters() {
        let target = filter.norm(params.values());
        let current = filter.norm(&d);
        if target > 0.0 && current > 0.0 {
            let s = target / current;
            for i in filter.indices() {
                d[i] *= s;
            }
        }
    }
    d
}

/// Loss and accuracy along `θ + α·d` for a filter-normalized direction `d`.
/// Rows come back sorted by `α`.
pub fn filter_normalized_slice(
    params: &ParamVector,
    spec: &MlpSpec,
    data: &Dataset,
    alphas: &[f64],
    seed: RngSeed,
) -> Result<Vec<SliceRow>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if alphas.iter().any(|a| !(-0.8..=0.8).contains(a)) {
        return Err(invalid("slice offsets must lie in [-0.8, 0.8]"));
    }
    spec.check_params(params)?;
    let d = filter_normalized_direction(params, seed);
    let mut sorted = alphas.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();
    sorted
        .into_iter()
        .map(|alpha| {
            let values = params.values().iter().zip(&d).map(|(p, dv)| p + alpha * dv).collect();
            let e = nn::evaluate(&params.with_values(values), spec, data)?;
            Ok(SliceRow { alpha, loss: e.mean_loss, accuracy: e.accuracy })
        })
        .collect()
}

/// `n` evenly spaced offsets from `-0.8` to `0.8`.
pub fn default_alphas(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| -0.8 + 1.6 * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessEstimate {
    /// `max ‖∇f(x) − ∇f(y)‖ / ‖x − y‖` over the sampled pairs.
    pub lipschitz_grad: f64,
    /// `max |f(x) − f(y)| / ‖x − y‖` over the sampled pairs.
    pub lipschitz_fn: f64,
    pub pairs: usize,
}

fn uniform_in_ball(center: &[f64], radius: f64, s: &mut Stream) -> Vec<f64> {
    let mut d = vec![0.0; center.len()];
    s.fill_normal(1.0, &mut d);
    let n = linalg::norm(&d);
    let r = radius * libm::pow(s.uniform(), 1.0 / center.len() as f64);
    center.iter().zip(&d).map(|(c, dv)| c + r * dv / n).collect()
}

/// Empirical Lipschitz constants of `f` and `∇f` from pairs drawn
/// independently and uniformly in the ball `B(center, radius)`.
pub fn estimate_smoothness<O: Objective + ?Sized>(
    f: &O,
    center: &[f64],
    radius: f64,
    n_pairs: usize,
    seed: RngSeed,
) -> Result<SmoothnessEstimate> {
    if n_pairs == 0 || !(radius > 0.0) {
        return Err(invalid("smoothness estimation needs n_pairs >= 1 and a positive radius"));
    }
    if center.len() != f.dim() {
        return Err(Error::DimensionMismatch { what: "smoothness center", expected: f.dim(), got: center.len() });
    }
    let mut s = seed.stream(Purpose::SmoothnessPairs, 0, 0, 0);
    let (mut gx, mut gy) = (vec![0.0; center.len()], vec![0.0; center.len()]);
    let mut est = SmoothnessEstimate { lipschitz_grad: 0.0, lipschitz_fn: 0.0, pairs: n_pairs };
    for _ in 0..n_pairs {
        let x = uniform_in_ball(center, radius, &mut s);
        let y = uniform_in_ball(center, radius, &mut s);
        let dist = libm::sqrt(x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum());
        if dist == 0.0 {
            continue;
        }
        let fx = f.gradient(&x, &mut gx);
        let fy = f.gradient(&y, &mut gy);
        let dg = libm::sqrt(gx.iter().zip(&gy).map(|(a, b)| (a - b) * (a - b)).sum());
        est.lipschitz_grad = est.lipschitz_grad.max(dg / dist);
        est.lipschitz_fn = est.lipschitz_fn.max(libm::fabs(fx - fy) / dist);
    }
    Ok(est)
}
