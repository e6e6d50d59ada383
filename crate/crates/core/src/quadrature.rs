//! Product (kernel-exact) quadrature for memory convolutions.
//!
//! A convolution `int_0^{t_j} F(s) phi(t_j - s) ds` is approximated by
//! integrating `F` exactly against the piecewise-linear interpolant of `phi`
//! on the uniform grid `s_m = m * dt`. The kernel is never sampled pointwise,
//! which keeps the rule accurate for kernels that are steep or unbounded near
//! `s = 0`.

use crate::error::{domain, Result};
use crate::kernel::KernelSpec;

/// A lag function `F(s) = sum_i coef_i P_{order_i}(shift_i + s) + constant`,
/// built from shifted primitives of one kernel.
#[derive(Clone, Debug)]
pub struct LagKernel<'a> {
    kernel: &'a KernelSpec,
    terms: Vec<(f64, i32, f64)>,
    constant: f64,
    transient_only: bool,
}

impl<'a> LagKernel<'a> {
    pub fn new(kernel: &'a KernelSpec) -> Self {
        Self {
            kernel,
            terms: Vec::new(),
            constant: 0.0,
            transient_only: false,
        }
    }

    pub fn with_term(mut self, coef: f64, order: i32, shift: f64) -> Self {
        self.terms.push((coef, order, shift));
        self
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    /// `dG/dt(eps + s)`.
    pub fn g_dot(kernel: &'a KernelSpec, eps: f64) -> Self {
        Self::new(kernel).with_term(1.0, -1, eps)
    }

    /// `d2G/dt2(eps + s)`.
    pub fn g_ddot(kernel: &'a KernelSpec, eps: f64) -> Self {
        Self::new(kernel).with_term(1.0, -2, eps)
    }

    /// `G(eps + s)`.
    pub fn g(kernel: &'a KernelSpec, eps: f64) -> Self {
        Self::new(kernel).with_term(1.0, 0, eps)
    }

    /// `K^eps(s) = K(eps + s) - K(eps)`; reduces to `K` for `eps = 0`.
    pub fn integrated(kernel: &'a KernelSpec, eps: f64) -> Result<Self> {
        let k_eps = kernel.integrated(eps)?;
        Ok(Self::new(kernel).with_term(1.0, 1, eps).with_constant(-k_eps))
    }

    /// `K^eps(s) - K(s)`. The equilibrium part of `G` drops out of this
    /// difference, so only the transient atoms are integrated; for a constant
    /// kernel every weight is exactly zero.
    pub fn integrated_difference(kernel: &'a KernelSpec, eps: f64) -> Result<Self> {
        let k_eps = kernel.primitive_of(1, eps, true)?;
        Ok(Self {
            kernel,
            terms: vec![(1.0, 1, eps), (-1.0, 1, 0.0)],
            constant: -k_eps,
            transient_only: true,
        })
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        let mut v = self.constant;
        for &(coef, order, shift) in &self.terms {
            v += coef * self.kernel.primitive_of(order, shift + s, self.transient_only)?;
        }
        Ok(v)
    }

    /// `(int_a^{a+delta} F, int_a^{a+delta} F(s) (s - a) ds)`.
    pub fn moments(&self, a: f64, delta: f64) -> Result<(f64, f64)> {
        let mut m0 = self.constant * delta;
        let mut m1 = self.constant * delta * delta / 2.0;
        for &(coef, order, shift) in &self.terms {
            let (i0, i1) = self.kernel.moments_of(order, shift + a, delta, self.transient_only)?;
            m0 += coef * i0;
            m1 += coef * i1;
        }
        Ok((m0, m1))
    }

    /// Hat-function weights on `n_intervals` consecutive lag intervals.
    pub fn hat_weights(&self, step: f64, n_intervals: usize) -> Result<HatWeights> {
        if !(step > 0.0) {
            return domain(format!("quadrature step must be > 0 (got {step})"));
        }
        let mut left = Vec::with_capacity(n_intervals);
        let mut right = Vec::with_capacity(n_intervals);
        for m in 0..n_intervals {
            let (i0, i1) = self.moments(m as f64 * step, step)?;
            right.push(i1 / step);
            left.push(i0 - i1 / step);
        }
        Ok(HatWeights { step, left, right })
    }
}

/// Per-interval weights of the product trapezoid rule.
///
/// On lag interval `[s_m, s_{m+1}]` the rule contributes
/// `left[m] * phi(s_m) + right[m] * phi(s_{m+1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct HatWeights {
    pub step: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl HatWeights {
    pub fn n_intervals(&self) -> usize {
        self.left.len()
    }

    /// Weight on lag node `l` (`phi(s_l)`) for a convolution over `j` intervals.
    #[inline]
    pub fn lag_weight(&self, j: usize, l: usize) -> f64 {
        debug_assert!(l <= j && j <= self.left.len());
        let mut w = 0.0;
        if l < j {
            w += self.left[l];
        }
        if l > 0 {
            w += self.right[l - 1];
        }
        w
    }

    /// All lag weights `c_0 ..= c_j` for a convolution over `j` intervals.
    pub fn lag_weights(&self, j: usize) -> Vec<f64> {
        (0..=j).map(|l| self.lag_weight(j, l)).collect()
    }

    /// Applies the rule to node values `phi(s_0), ..., phi(s_j)`.
    pub fn apply(&self, phi: &[f64]) -> f64 {
        let j = phi.len().saturating_sub(1);
        (0..j)
            .map(|m| self.left[m] * phi[m] + self.right[m] * phi[m + 1])
            .sum()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Golub-Welsch free, via
/// Newton iteration on the Legendre recurrence).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
