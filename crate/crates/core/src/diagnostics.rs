//! Post-processing of trajectories: the energy balance, its decay under zero
//! forcing, the a priori Gronwall bound, and residuals of the weak (integral)
//! formulation against smooth test functions.
//!
//! With `w(s) = grad u(t) - grad u(t - s)` and `G^eps(t) = G(eps + t)`, smooth
//! solutions of the integro-differential problem satisfy
//!
//! ```text
//! d/dt [ 1/2 |u_t|^2 + 1/2 G^eps(t) |grad u|^2 - 1/2 int_0^t G'^eps(s) |w(s)|^2 ds ]
//!     = (f, u_t) + 1/2 G'^eps(t) |grad u(t)|^2 - 1/2 int_0^t G''^eps(s) |w(s)|^2 ds
//! ```
//!
//! The ledger evaluates every term on the discrete trajectory and reports the
//! mismatch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{edge_gradient, gradient_energy, inner, laplacian_into, FieldExpr, Grid};
use crate::error::{domain, Result};
use crate::forcing::{ForcingContext, ForcingSampler, TimeProfile};
use crate::kernel::KernelSpec;
use crate::quadrature::LagKernel;
use crate::solver::{run_integrodiff, ProblemSpec, TrajectorySolution};

/// Energy terms at one time level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyLevel {
    pub t: f64,
    /// `1/2 |u_t|^2`.
    pub kinetic: f64,
    /// `1/2 G^eps(t) |grad u(t)|^2`.
    pub elastic: f64,
    /// `-1/2 int_0^t G'^eps(s) |w(s)|^2 ds`, nonnegative for admissible kernels.
    pub memory: f64,
    /// `1/2 G'^eps(t) |grad u(t)|^2`.
    pub dissipation_instant: f64,
    /// `-1/2 int_0^t G''^eps(s) |w(s)|^2 ds`.
    pub dissipation_history: f64,
    /// `(f, u_t)`.
    pub forcing_power: f64,
    /// Kinetic + elastic + memory.
    pub stored: f64,
    /// Centered-difference mismatch of the balance; `None` where the centered
    /// stencil would reach a one-sided velocity.
    pub residual: Option<f64>,
}

impl EnergyLevel {
    pub fn has_nan(&self) -> bool {
        [
            self.kinetic,
            self.elastic,
            self.memory,
            self.dissipation_instant,
            self.dissipation_history,
            self.forcing_power,
            self.stored,
        ]
        .iter()
        .any(|v| v.is_nan())
            || self.residual.is_some_and(f64::is_nan)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub dt: f64,
    pub h: f64,
    pub levels: Vec<EnergyLevel>,
}

impl EnergyLedger {
    /// Largest `|residual|` over the levels where it is defined.
    pub fn max_residual(&self) -> f64 {
        self.levels
            .iter()
            .filter_map(|l| l.residual)
            .fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn max_stored(&self) -> f64 {
        self.levels.iter().fold(0.0, |m, l| m.max(l.stored))
    }

    /// Indices of levels carrying a NaN term.
    pub fn nan_levels(&self) -> Vec<usize> {
        self.levels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.has_nan())
            .map(|(j, _)| j)
            .collect()
    }
}

/// Evaluates the energy balance along a trajectory, using the kernel, `eps`
/// and forcing recorded in its spec.
pub fn energy_ledger(traj: &TrajectorySolution) -> Result<EnergyLedger> {
    let spec = traj.spec();
    let grid = *traj.grid();
    let n_levels = traj.n_levels();
    let steps = n_levels - 1;
    let dt = traj.dt();
    let eps = spec.eps;
    let kernel = &spec.kernel;
    let ctx = ForcingContext { kernel, eps };
    let vol = grid.cell_volume();

    let grads: Vec<Vec<f64>> = traj.levels().par_iter().map(|u| edge_gradient(&grid, u)).collect();
    let w_dot = LagKernel::g_dot(kernel, eps).hat_weights(dt, steps)?;
    let w_ddot = LagKernel::g_ddot(kernel, eps).hat_weights(dt, steps)?;
    let sampler = ForcingSampler::new(&spec.forcing, &grid);

    let raw: Vec<Result<EnergyLevel>> = (0..n_levels)
        .into_par_iter()
        .map(|j| {
            let t = j as f64 * dt;
            let gj = &grads[j];
            let grad_sq = gradient_energy(&grid, gj);
            let phi: Vec<f64> = (0..=j)
                .map(|m| {
                    let past = &grads[j - m];
                    gj.iter().zip(past).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * vol
                })
                .collect();
            let v = traj.velocity(j);
            let f = sampler.sample(t, ctx)?;
            let kinetic = 0.5 * inner(&grid, &v, &v);
            let elastic = 0.5 * kernel.g(eps + t)? * grad_sq;
            let memory = -0.5 * w_dot.apply(&phi);
            Ok(EnergyLevel {
                t,
                kinetic,
                elastic,
                memory,
                dissipation_instant: 0.5 * kernel.g_dot(eps + t)? * grad_sq,
                dissipation_history: -0.5 * w_ddot.apply(&phi),
                forcing_power: inner(&grid, &f, &v),
                stored: kinetic + elastic + memory,
                residual: None,
            })
        })
        .collect();
    let mut levels = raw.into_iter().collect::<Result<Vec<_>>>()?;
    for j in 2..n_levels.saturating_sub(2) {
        let rate = (levels[j + 1].stored - levels[j - 1].stored) / (2.0 * dt);
        let l = &levels[j];
        levels[j].residual = Some(rate - (l.forcing_power + l.dissipation_instant + l.dissipation_history));
    }
    Ok(EnergyLedger {
        dt,
        h: grid.min_spacing(),
        levels,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub pass: bool,
    /// First level `j` with `S_{j+1} - S_j > tolerance * max S`.
    pub first_violation: Option<usize>,
    /// Largest increment relative to `max S`.
    pub max_relative_increase: f64,
    pub tolerance: f64,
}

/// `C (dt^2 + h^2)`.
pub fn decay_tolerance(c: f64, dt: f64, h: f64) -> f64 {
    c * (dt * dt + h * h)
}

/// Checks that the stored energy is nonincreasing up to `tolerance` (relative
/// to its maximum). Levels with one-sided velocities are skipped.
pub fn check_energy_decay(ledger: &EnergyLedger, tolerance: f64) -> DecayReport {
    let scale = ledger.max_stored().max(f64::MIN_POSITIVE);
    let n = ledger.levels.len();
    let mut worst = 0.0f64;
    let mut first = None;
    for j in 1..n.saturating_sub(2) {
        let rel = (ledger.levels[j + 1].stored - ledger.levels[j].stored) / scale;
        if rel.is_nan() || rel > tolerance {
            first.get_or_insert(j);
        }
        worst = worst.max(rel);
    }
    DecayReport {
        pass: first.is_none(),
        first_violation: first,
        max_relative_increase: worst,
        tolerance,
    }
}

/// Safety factor applied to the measured drift of the reference run.
pub const DECAY_SAFETY: f64 = 2.0;

/// Calibrates the drift constant `C` of [`decay_tolerance`]: the same grid,
/// step and data are run with the memoryless kernel `G(eps)` and its largest
/// relative energy increase is divided by `dt^2 + h^2`.
pub fn calibrate_decay_constant(spec: &ProblemSpec) -> Result<f64> {
    let g0 = spec.instantaneous_modulus()?;
    let mut reference = spec.clone();
    reference.kernel = KernelSpec::constant(g0)?;
    reference.forcing = crate::forcing::Forcing::zero();
    let traj = run_integrodiff(&reference)?;
    let ledger = energy_ledger(&traj)?;
    let drift = check_energy_decay(&ledger, f64::INFINITY).max_relative_increase.max(0.0);
    let h = spec.grid.min_spacing();
    Ok(DECAY_SAFETY * drift / (spec.dt * spec.dt + h * h))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `max{1 / G(T + 1), 1}`.
    pub gamma: f64,
    /// `1/2 |f|_{L2(Q)}^2 + 1/2 |u1|^2 + 1/2 G(eps) |grad u0|^2`.
    pub data_constant: f64,
    /// `gamma e^T data_constant`.
    pub bound: f64,
    /// Per level `1/2 |grad u|^2 + 1/2 |u_t|^2`.
    pub energies: Vec<f64>,
    pub max_ratio: f64,
    pub worst_level: usize,
    pub violations: usize,
}

impl BoundReport {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// `max{1 / |G(T + 1)|, 1}`.
pub fn gronwall_gamma(kernel: &KernelSpec, t_final: f64) -> Result<f64> {
    Ok((1.0 / kernel.g(t_final + 1.0)?.abs()).max(1.0))
}

/// Checks `1/2 |grad u|^2 + 1/2 |u_t|^2 <= gamma e^T C` at every level.
///
/// `C` carries the initial elastic energy `1/2 G(eps) |grad u0|^2` in addition
/// to the forcing and velocity terms, so the bound also covers runs started
/// from nonzero displacement.
pub fn check_energy_bound(traj: &TrajectorySolution) -> Result<BoundReport> {
    let spec = traj.spec();
    if spec.eps > 1.0 {
        return domain(format!(
            "the energy bound needs eps <= 1 so that G(t + eps) >= G(T + 1) (got eps = {})",
            spec.eps
        ));
    }
    let grid = *traj.grid();
    let t_final = traj.time(traj.n_levels() - 1);
    let gamma = gronwall_gamma(&spec.kernel, t_final)?;
    let ctx = ForcingContext {
        kernel: &spec.kernel,
        eps: spec.eps,
    };
    let sampler = ForcingSampler::new(&spec.forcing, &grid);
    let f_sq = (0..traj.n_levels())
        .map(|j| sampler.sample(traj.time(j), ctx).map(|f| inner(&grid, &f, &f)))
        .collect::<Result<Vec<_>>>()?;
    let f_norm_sq = crate::domain::spacetime_norm_sq(traj.dt(), f_sq.into_iter());
    let u1 = traj.velocity(0);
    let grad0 = edge_gradient(&grid, traj.level(0));
    let data_constant = 0.5 * f_norm_sq
        + 0.5 * inner(&grid, &u1, &u1)
        + 0.5 * spec.instantaneous_modulus()? * gradient_energy(&grid, &grad0);
    let bound = gamma * t_final.exp() * data_constant;

    let energies: Vec<f64> = (0..traj.n_levels())
        .into_par_iter()
        .map(|j| {
            let v = traj.velocity(j);
            let g = edge_gradient(&grid, traj.level(j));
            0.5 * gradient_energy(&grid, &g) + 0.5 * inner(&grid, &v, &v)
        })
        .collect();
    let mut max_ratio = 0.0;
    let mut worst_level = 0;
    let mut violations = 0;
    for (j, &e) in energies.iter().enumerate() {
        let ratio = if bound > 0.0 {
            e / bound
        } else if e == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if !(ratio <= 1.0) {
            violations += 1;
        }
        if ratio > max_ratio || ratio.is_nan() {
            max_ratio = ratio;
            worst_level = j;
        }
    }
    Ok(BoundReport {
        gamma,
        data_constant,
        bound,
        energies,
        max_ratio,
        worst_level,
        violations,
    })
}

/// Separable test function `v(x, t) = space(x) * time(t)`; `space` must vanish
/// on the boundary and have a closed-form Laplacian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub space: FieldExpr,
    pub time: TimeProfile,
}

impl TestFunction {
    pub fn new(space: FieldExpr, time: TimeProfile) -> Self {
        TestFunction { space, time }
    }

    /// `factor * v`, applied through the spatial factor.
    pub fn scaled(&self, factor: f64) -> Self {
        TestFunction {
            space: crate::forcing::scale_expr(&self.space, factor),
            time: self.time.clone(),
        }
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        if !self.space.vanishes_on_boundary(grid) {
            return domain(format!("test function {:?} does not vanish on the boundary", self.space));
        }
        if self.space.laplacian_at(grid, [0.5; 3]).is_none() {
            return domain(format!("test function {:?} has no closed-form Laplacian", self.space));
        }
        Ok(())
    }

    fn sample(&self, grid: &Grid) -> (Vec<f64>, Vec<f64>) {
        let v = (0..grid.len()).map(|i| self.space.eval(grid, grid.coords(i))).collect();
        let lap = (0..grid.len())
            .map(|i| self.space.laplacian_at(grid, grid.coords(i)).unwrap_or(0.0))
            .collect();
        (v, lap)
    }
}

/// Sine modes 1..=3 along the first axis (unit modes on any other axis) times
/// the temporal profiles `1`, `t` and `sin(pi t)`.
pub fn standard_battery() -> Vec<TestFunction> {
    let mut out = Vec::new();
    for k in 1..=3u32 {
        for time in [
            TimeProfile::Constant { value: 1.0 },
            TimeProfile::Polynomial { coeffs: vec![0.0, 1.0] },
            TimeProfile::Sine {
                omega: std::f64::consts::PI,
                phase: 0.0,
            },
        ] {
            out.push(TestFunction::new(FieldExpr::sin_mode(1.0, [k, 1, 1]), time));
        }
    }
    out
}

/// Residual of the integral formulation tested against one `v`, with the
/// Laplacian applied to the discrete solution (`on_solution`) or moved onto
/// the test function by parts (`on_test`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    pub on_solution: f64,
    pub on_test: f64,
}

/// `int_Q v [u - int_0^t K^eps(t - tau) lap u(tau) dtau - t u1 - u0 - int int f]`
/// for every test function, the convolution taken with product-trapezoid
/// weights of `K^eps`.
pub fn weak_residual(traj: &TrajectorySolution, battery: &[TestFunction]) -> Result<Vec<WeakResidual>> {
    let spec = traj.spec();
    let grid = *traj.grid();
    for v in battery {
        v.check(&grid)?;
    }
    let n = grid.len();
    let steps = traj.n_levels() - 1;
    let dt = traj.dt();
    let ctx = ForcingContext {
        kernel: &spec.kernel,
        eps: spec.eps,
    };
    let weights = LagKernel::integrated(&spec.kernel, spec.eps)?.hat_weights(dt, steps)?;
    let sampler = ForcingSampler::new(&spec.forcing, &grid);
    let u0 = traj.level(0);
    let u1 = traj.velocity(0);

    // Per level: remainder u - u0 - t u1 - F2(t), the convolution, and its Laplacian.
    type LevelTerms = (Vec<f64>, Vec<f64>, Vec<f64>);
    let per_level: Vec<Result<LevelTerms>> = (0..=steps)
        .into_par_iter()
        .map(|j| {
            let t = j as f64 * dt;
            let mut conv = vec![0.0; n];
            for l in 0..=j {
                let c = weights.lag_weight(j, l);
                for (acc, u) in conv.iter_mut().zip(traj.level(j - l)) {
                    *acc += c * u;
                }
            }
            let mut lap_conv = vec![0.0; n];
            laplacian_into(&grid, &conv, &mut lap_conv);
            let mut rest = vec![0.0; n];
            sampler.double_integral_into(t, ctx, &mut rest)?;
            let u = traj.level(j);
            for i in 0..n {
                rest[i] = u[i] - u0[i] - t * u1[i] - rest[i];
            }
            Ok((rest, conv, lap_conv))
        })
        .collect();
    let per_level = per_level.into_iter().collect::<Result<Vec<_>>>()?;

    battery
        .iter()
        .map(|v| {
            let (shape, lap_shape) = v.sample(&grid);
            let mut a = Vec::with_capacity(steps + 1);
            let mut b = Vec::with_capacity(steps + 1);
            for (j, (rest, conv, lap_conv)) in per_level.iter().enumerate() {
                let theta = v.time.value(j as f64 * dt, ctx)?;
                let base = inner(&grid, &shape, rest);
                a.push(theta * (base - inner(&grid, &shape, lap_conv)));
                b.push(theta * (base - inner(&grid, &lap_shape, conv)));
            }
            Ok(WeakResidual {
                on_solution: trapezoid(dt, &a),
                on_test: trapezoid(dt, &b),
            })
        })
        .collect()
}

pub(crate) fn trapezoid(dt: f64, values: &[f64]) -> f64 {
    let n = values.len();
    values
        .iter()
        .enumerate()
        .map(|(j, v)| if j == 0 || j + 1 == n { 0.5 * v } else { *v })
        .sum::<f64>()
        * dt
}

/// Measured order `log2(coarse / fine)` of a halving study.
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}
