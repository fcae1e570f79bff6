//! Differentiable scalar objectives over flat parameter vectors.

use alloc::vec::Vec;

pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Writes `∇f(x)` into `out` and returns `f(x)`.
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> f64;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> f64 {
        (**self).gradient(x, out)
    }
}

/// `f(x) = ½‖x‖²`
#[derive(Clone, Copy, Debug)]
pub struct HalfSquaredNorm {
    pub dim: usize,
}

impl Objective for HalfSquaredNorm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * crate::linalg::norm_sq(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> f64 {
        out.copy_from_slice(x);
        self.value(x)
    }
}

/// `f(x) = a·x + b`
#[derive(Clone, Debug)]
pub struct Affine {
    pub slope: Vec<f64>,
    pub offset: f64,
}

impl Objective for Affine {
    fn dim(&self) -> usize {
        self.slope.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        crate::linalg::dot(&self.slope, x) + self.offset
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> f64 {
        out.copy_from_slice(&self.slope);
        self.value(x)
    }
}
