//! Space-time forcing `f(x, t)` as a sum of separable terms.
//!
//! Each temporal profile provides its value and the closed-form double
//! integral `int_0^t dtau int_0^tau f = int_0^t (t - xi) f(xi) dxi` needed by
//! the integral formulation.

use serde::{Deserialize, Serialize};

use crate::domain::{FieldExpr, Grid};
use crate::error::Result;
use crate::kernel::KernelSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeProfile {
    Constant {
        value: f64,
    },
    /// `sin(omega t + phase)`.
    Sine {
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `sum_k coeffs[k] t^k`.
    Polynomial {
        coeffs: Vec<f64>,
    },
    /// Temporal factor of the forcing that makes
    /// `u*(x, t) = S(x) (1 + t^2)` an exact solution when `-lap S = lambda S`:
    /// `2 + lambda (G(eps + t) - 2 t K(eps) + 2 (P2(eps + t) - P2(eps)))`.
    Manufactured {
        lambda: f64,
    },
}

/// Kernel data a temporal profile may depend on.
#[derive(Clone, Copy, Debug)]
pub struct ForcingContext<'a> {
    pub kernel: &'a KernelSpec,
    pub eps: f64,
}

impl TimeProfile {
    pub fn value(&self, t: f64, ctx: ForcingContext<'_>) -> Result<f64> {
        Ok(match self {
            TimeProfile::Constant { value } => *value,
            TimeProfile::Sine { omega, phase } => (omega * t + phase).sin(),
            TimeProfile::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c),
            TimeProfile::Manufactured { lambda } => {
                let k = ctx.kernel;
                let e = ctx.eps;
                let p2_shift = if t == 0.0 { 0.0 } else { k.moments(1, e, t)?.0 };
                2.0 + lambda * (k.g(e + t)? - 2.0 * t * k.integrated(e)? + 2.0 * p2_shift)
            }
        })
    }

    /// `int_0^t (t - xi) f(xi) dxi` in closed form.
    pub fn double_integral(&self, t: f64, ctx: ForcingContext<'_>) -> Result<f64> {
        Ok(match self {
            TimeProfile::Constant { value } => value * t * t / 2.0,
            TimeProfile::Sine { omega, phase } => {
                if *omega == 0.0 {
                    phase.sin() * t * t / 2.0
                } else {
                    t * phase.cos() / omega - ((omega * t + phase).sin() - phase.sin()) / (omega * omega)
                }
            }
            TimeProfile::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * t.powi(k as i32 + 2) / ((k + 1) * (k + 2)) as f64)
                .sum(),
            TimeProfile::Manufactured { lambda } => {
                if t == 0.0 {
                    return Ok(0.0);
                }
                let k = ctx.kernel;
                let e = ctx.eps;
                // int_0^t (t - xi) P_j(e + xi) dxi = P_{j+2}(e+t) - P_{j+2}(e) - t P_{j+1}(e)
                let conv = |order: i32| -> Result<f64> {
                    Ok(k.moments(order + 1, e, t)?.0 - t * k.primitive(order + 1, e)?)
                };
                let g_part = conv(0)?;
                let p2_part = conv(2)? - k.primitive(2, e)? * t * t / 2.0;
                t * t + lambda * (g_part - 2.0 * k.integrated(e)? * t.powi(3) / 6.0 + 2.0 * p2_part)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcingTerm {
    pub space: FieldExpr,
    pub time: TimeProfile,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Forcing {
    pub terms: Vec<ForcingTerm>,
}

impl Forcing {
    pub fn zero() -> Self {
        Forcing { terms: Vec::new() }
    }

    pub fn separable(space: FieldExpr, time: TimeProfile) -> Self {
        Forcing {
            terms: vec![ForcingTerm { space, time }],
        }
    }

    /// Forcing for the manufactured solution `u* = amplitude * S(x) (1 + t^2)`
    /// with `S` a sine product; see [`manufactured_solution`].
    pub fn manufactured(grid: &Grid, amplitude: f64, modes: [u32; 3]) -> Self {
        let space = FieldExpr::sin_mode(amplitude, modes);
        let lambda = space.sin_eigenvalue(grid).unwrap_or(0.0);
        Forcing::separable(space, TimeProfile::Manufactured { lambda })
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.space.is_zero())
    }

    pub fn plus(mut self, other: Forcing) -> Self {
        self.terms.extend(other.terms);
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        for t in &mut self.terms {
            t.time = match std::mem::replace(&mut t.time, TimeProfile::Constant { value: 0.0 }) {
                TimeProfile::Constant { value } => TimeProfile::Constant { value: value * factor },
                TimeProfile::Polynomial { coeffs } => TimeProfile::Polynomial {
                    coeffs: coeffs.into_iter().map(|c| c * factor).collect(),
                },
                other => {
                    t.space = scale_expr(&t.space, factor);
                    other
                }
            };
        }
        self
    }
}

pub(crate) fn scale_expr(e: &FieldExpr, f: f64) -> FieldExpr {
    match e.clone() {
        FieldExpr::Zero => FieldExpr::Zero,
        FieldExpr::Constant { value } => FieldExpr::Constant { value: value * f },
        FieldExpr::SinPiProduct { amplitude, modes } => FieldExpr::SinPiProduct {
            amplitude: amplitude * f,
            modes,
        },
        FieldExpr::Parabola { amplitude } => FieldExpr::Parabola { amplitude: amplitude * f },
        FieldExpr::Bump {
            amplitude,
            center,
            radius,
        } => FieldExpr::Bump {
            amplitude: amplitude * f,
            center,
            radius,
        },
    }
}

/// `u*(x, t) = amplitude * prod sin(k pi x / L) * (1 + t^2)`.
pub fn manufactured_solution(grid: &Grid, amplitude: f64, modes: [u32; 3], t: f64) -> Vec<f64> {
    let s = FieldExpr::sin_mode(amplitude, modes);
    (0..grid.len())
        .map(|i| s.eval(grid, grid.coords(i)) * (1.0 + t * t))
        .collect()
}

/// Pre-sampled spatial shapes of a forcing on one grid.
#[derive(Clone, Debug)]
pub(crate) struct ForcingSampler {
    shapes: Vec<Vec<f64>>,
    profiles: Vec<TimeProfile>,
    len: usize,
}

impl ForcingSampler {
    pub(crate) fn new(forcing: &Forcing, grid: &Grid) -> Self {
        let terms: Vec<&ForcingTerm> = forcing.terms.iter().filter(|t| !t.space.is_zero()).collect();
        ForcingSampler {
            shapes: terms
                .iter()
                .map(|t| (0..grid.len()).map(|i| t.space.eval(grid, grid.coords(i))).collect())
                .collect(),
            profiles: terms.iter().map(|t| t.time.clone()).collect(),
            len: grid.len(),
        }
    }

    /// `f(., t)` written into `out`.
    pub(crate) fn sample_into(&self, t: f64, ctx: ForcingContext<'_>, out: &mut [f64]) -> Result<()> {
        self.combine(out, |p| p.value(t, ctx))
    }

    /// `int_0^t (t - xi) f(., xi) dxi` written into `out`.
    pub(crate) fn double_integral_into(&self, t: f64, ctx: ForcingContext<'_>, out: &mut [f64]) -> Result<()> {
        self.combine(out, |p| p.double_integral(t, ctx))
    }

    pub(crate) fn sample(&self, t: f64, ctx: ForcingContext<'_>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len];
        self.sample_into(t, ctx, &mut out)?;
        Ok(out)
    }

    fn combine(&self, out: &mut [f64], coef: impl Fn(&TimeProfile) -> Result<f64>) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (shape, profile) in self.shapes.iter().zip(&self.profiles) {
            let c = coef(profile)?;
            for (o, s) in out.iter_mut().zip(shape) {
                *o += c * s;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre;
    use approx::assert_relative_eq;

    fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64, pieces: usize) -> f64 {
        let (x, w) = gauss_legendre(10);
        let h = (b - a) / pieces as f64;
        let mut s = 0.0;
        for p in 0..pieces {
            let lo = a + p as f64 * h;
            for (xi, wi) in x.iter().zip(&w) {
                s += wi * h / 2.0 * f(lo + h / 2.0 * (xi + 1.0));
            }
        }
        s
    }

    #[test]
    fn double_integrals_match_quadrature() {
        let k = KernelSpec::prony(0.3, &[(1.0, 0.5), (0.4, 3.0)]).unwrap();
        let ctx = ForcingContext { kernel: &k, eps: 0.05 };
        let profiles = [
            TimeProfile::Constant { value: 1.5 },
            TimeProfile::Sine { omega: 3.0, phase: 0.4 },
            TimeProfile::Polynomial { coeffs: vec![1.0, -2.0, 0.5] },
            TimeProfile::Manufactured { lambda: 9.8 },
        ];
        for p in &profiles {
            for t in [0.3, 1.7] {
                let oracle = quad(|xi| (t - xi) * p.value(xi, ctx).unwrap(), 0.0, t, 40);
                assert_relative_eq!(p.double_integral(t, ctx).unwrap(), oracle, max_relative = 1e-11);
            }
        }
    }

    #[test]
    fn manufactured_profile_balances_the_equation() {
        // f = u*_tt - G(eps) lap u* - int_0^t G'(eps + t - tau) lap u*(tau) dtau
        // with lap u* = -lambda S (1 + tau^2); checked by direct quadrature.
        for k in [
            KernelSpec::prony(0.5, &[(0.5, 2.0), (1.0, 0.1)]).unwrap(),
            KernelSpec::power_law(1.0, 0.5).unwrap(),
            KernelSpec::constant(2.0).unwrap(),
        ] {
            let eps = 0.05;
            let lambda = 4.0;
            let ctx = ForcingContext { kernel: &k, eps };
            for t in [0.0, 0.4, 1.3] {
                let memory = if t == 0.0 {
                    0.0
                } else {
                    quad(|tau| k.g_dot(eps + t - tau).unwrap() * (1.0 + tau * tau), 0.0, t, 400)
                };
                let oracle = 2.0 + lambda * k.g(eps).unwrap() * (1.0 + t * t) + lambda * memory;
                let got = TimeProfile::Manufactured { lambda }.value(t, ctx).unwrap();
                assert_relative_eq!(got, oracle, max_relative = 1e-9);
            }
        }
    }
}
