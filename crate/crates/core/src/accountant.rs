//! Privacy accounting.
//!
//! Three tools are offered: the classical Gaussian-mechanism calibration, the
//! advanced composition theorem, and Rényi-DP (RDP) accounting for the
//! Poisson-subsampled Gaussian mechanism. RDP values are tracked on a grid of
//! integer orders, composed additively over steps and converted to `(ε, δ)`
//! with the standard `ε = min_α [T·ε_RDP(α) + ln(1/δ)/(α − 1)]` bound.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default δ used by training runs.
pub const DEFAULT_DELTA: f64 = 1e-5;

/// Default order grid: `2..=64` followed by `128, 256, 512`.
pub fn default_orders() -> Vec<u32> {
    (2..=64).chain([128, 256, 512]).collect()
}

/// Noise scale of the Gaussian mechanism from the closed-form bound
/// `σ ≥ √(2 ln(1.25/δ))·Δ₂/ε`, valid for `0 < ε < 1`.
pub fn gaussian_sigma_for(epsilon: f64, delta: f64, l2_sensitivity: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid("the Gaussian calibration bound only holds for 0 < epsilon < 1"));
    }
    if !(delta > 0.0 && delta < 1.0) || !(l2_sensitivity > 0.0 && l2_sensitivity.is_finite()) {
        return Err(invalid("delta must lie in (0, 1) and sensitivity must be positive"));
    }
    Ok(libm::sqrt(2.0 * libm::log(1.25 / delta)) * l2_sensitivity / epsilon)
}

/// Advanced composition of `k` adaptive `(ε, δ)` mechanisms.
///
/// Returns `(ε′, kδ + δ′)` with `ε′ = √(2k ln(1/δ′))·ε + k·ε·(e^ε − 1)`.
pub fn advanced_composition(epsilon: f64, delta: f64, delta_prime: f64, k: u64) -> Result<(f64, f64)> {
    if !(epsilon >= 0.0 && delta >= 0.0) || !(delta_prime > 0.0 && delta_prime < 1.0) || k == 0 {
        return Err(invalid("advanced composition needs eps, delta >= 0, delta' in (0, 1) and k >= 1"));
    }
    let k_f = k as f64;
    let eps = libm::sqrt(2.0 * k_f * libm::log(1.0 / delta_prime)) * epsilon + k_f * epsilon * libm::expm1(epsilon);
    Ok((eps, k_f * delta + delta_prime))
}

/// RDP of the plain Gaussian mechanism at order `alpha`: `α·Δ²/(2σ²)`.
pub fn gaussian_rdp(sigma: f64, l2_sensitivity: f64, alpha: u32) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::UnboundedPrivacy { q: 1.0 });
    }
    Ok(alpha as f64 * l2_sensitivity * l2_sensitivity / (2.0 * sigma * sigma))
}

/// RDP at integer order `alpha ≥ 2` of the Poisson-subsampled Gaussian
/// mechanism with sampling rate `q` and noise multiplier `sigma`.
///
/// Uses the binomial expansion
/// `A_α = Σ_k C(α,k)·(1−q)^(α−k)·q^k·exp((k² − k)/(2σ²))`, summed in the log
/// domain, and returns `ln(A_α)/(α − 1)`.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: u32) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid("sampling rate must lie in [0, 1]"));
    }
    if alpha < 2 {
        return Err(invalid("RDP orders must be integers >= 2"));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::UnboundedPrivacy { q });
    }
    if q == 1.0 {
        return Ok(alpha as f64 / (2.0 * sigma * sigma));
    }
    let a = alpha as f64;
    let (ln_q, ln_1mq) = (libm::log(q), libm::log1p(-q));
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let mut terms = Vec::with_capacity(alpha as usize + 1);
    let mut ln_binom = 0.0;
    for k in 0..=alpha {
        if k > 0 {
            ln_binom += libm::log((alpha - k + 1) as f64) - libm::log(k as f64);
        }
        let kf = k as f64;
        terms.push(ln_binom + (a - kf) * ln_1mq + kf * ln_q + (kf * kf - kf) * inv_two_var);
    }
    Ok((log_sum_exp(&terms) / (a - 1.0)).max(0.0))
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(terms.iter().map(|&t| libm::exp(t - m)).sum::<f64>())
}

/// RDP values over a grid of integer orders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    orders: Vec<u32>,
    values: Vec<f64>,
}

impl RdpCurve {
    pub fn new(orders: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if orders.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if orders.len() != values.len() {
            return Err(Error::DimensionMismatch {
                what: "RDP curve values",
                expected: orders.len(),
                got: values.len(),
            });
        }
        if orders[0] < 2 || orders.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("RDP orders must be strictly increasing integers >= 2"));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("RDP values must be non-negative"));
        }
        Ok(RdpCurve { orders, values })
    }

    /// Per-step curve of the subsampled Gaussian mechanism.
    pub fn subsampled_gaussian(q: f64, sigma: f64, orders: &[u32]) -> Result<Self> {
        let values = orders.iter().map(|&a| rdp_subsampled_gaussian(q, sigma, a)).collect::<Result<Vec<_>>>()?;
        Self::new(orders.to_vec(), values)
    }

    /// Curve of one Gaussian mechanism with the given sensitivity.
    pub fn gaussian(sigma: f64, l2_sensitivity: f64, orders: &[u32]) -> Result<Self> {
        let values = orders.iter().map(|&a| gaussian_rdp(sigma, l2_sensitivity, a)).collect::<Result<Vec<_>>>()?;
        Self::new(orders.to_vec(), values)
    }

    pub fn zero(orders: &[u32]) -> Result<Self> {
        Self::new(orders.to_vec(), alloc::vec![0.0; orders.len()])
    }

    pub fn orders(&self) -> &[u32] {
        &self.orders
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The curve of `steps` sequential uses (RDP composes additively).
    pub fn compose(&self, steps: u64) -> RdpCurve {
        let t = steps as f64;
        RdpCurve { orders: self.orders.clone(), values: self.values.iter().map(|v| t * v).collect() }
    }

    /// Order-wise sum with a curve on the same grid.
    pub fn add(&self, other: &RdpCurve) -> Result<RdpCurve> {
        if self.orders != other.orders {
            return Err(invalid("cannot add RDP curves on different order grids"));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(RdpCurve { orders: self.orders.clone(), values })
    }

    /// Converts the curve (already composed) to ε at the given δ.
    pub fn to_epsilon(&self, delta: f64) -> Result<Conversion> {
        compose_and_convert(self, 1, delta)
    }
}

/// Result of an RDP to `(ε, δ)` conversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conversion {
    pub epsilon: f64,
    /// The grid order attaining the minimum.
    pub order: u32,
}

/// `ε = min_α [T·ε_RDP(α) + ln(1/δ)/(α − 1)]` over the curve's grid.
pub fn compose_and_convert(curve: &RdpCurve, steps: u64, delta: f64) -> Result<Conversion> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta must lie in (0, 1)"));
    }
    if curve.orders.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let t = steps as f64;
    let ln_inv_delta = libm::log(1.0 / delta);
    let mut best = Conversion { epsilon: f64::INFINITY, order: curve.orders[0] };
    for (&a, &v) in curve.orders.iter().zip(&curve.values) {
        let eps = t * v + ln_inv_delta / (a as f64 - 1.0);
        if eps < best.epsilon {
            best = Conversion { epsilon: eps, order: a };
        }
    }
    Ok(best)
}

/// Privacy spent by `steps` iterations of the subsampled Gaussian mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpend {
    pub epsilon: f64,
    pub delta: f64,
    pub sigma: f64,
    pub q: f64,
    pub steps: u64,
    /// Order attaining the conversion minimum; `None` when no step was taken.
    pub order: Option<u32>,
}

impl PrivacySpend {
    /// Spend on the default order grid.
    pub fn compute(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<Self> {
        Self::compute_on(q, sigma, steps, delta, &default_orders())
    }

    pub fn compute_on(q: f64, sigma: f64, steps: u64, delta: f64, orders: &[u32]) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        if orders.is_empty() {
            return Err(Error::EmptyGrid);
        }
        // No mechanism has run, so nothing is spent; the conversion's
        // ln(1/δ)/(α − 1) floor is an artifact of the bound, not a cost.
        if steps == 0 {
            return Ok(PrivacySpend { epsilon: 0.0, delta, sigma, q, steps, order: None });
        }
        let curve = RdpCurve::subsampled_gaussian(q, sigma, orders)?;
        let c = compose_and_convert(&curve, steps, delta)?;
        Ok(PrivacySpend { epsilon: c.epsilon, delta, sigma, q, steps, order: Some(c.order) })
    }
}

/// Largest `T` whose spend stays within `epsilon_target`.
///
/// Exponential search brackets the answer and binary search pins it down;
/// exact because the spend is nondecreasing in `T`. Returns `u64::MAX` when
/// the per-step curve is identically zero.
pub fn steps_for_budget(epsilon_target: f64, delta: f64, q: f64, sigma: f64) -> Result<u64> {
    let curve = RdpCurve::subsampled_gaussian(q, sigma, &default_orders())?;
    let spend = |t: u64| compose_and_convert(&curve, t, delta).map(|c| c.epsilon);
    let floor = spend(0)?;
    if !(epsilon_target >= floor) {
        return Err(Error::BudgetBelowFloor { target: epsilon_target, floor });
    }
    if curve.values.iter().all(|&v| v == 0.0) {
        return Ok(u64::MAX);
    }
    let mut lo = 0u64;
    let mut hi = 1u64;
    while spend(hi)? <= epsilon_target {
        lo = hi;
        hi = match hi.checked_mul(2) {
            Some(h) => h,
            None => return Ok(u64::MAX),
        };
    }
    // Invariant: spend(lo) <= target < spend(hi).
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if spend(mid)? <= epsilon_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
