//! Time integration of the regularized problem in both formulations, and the
//! Boltzmann stress evaluation.
//!
//! * Integro-differential form (explicit leapfrog):
//!   `u_tt = G(eps) lap u + int_0^t G'(eps + t - tau) lap u(tau) dtau + f`.
//! * Integral (Volterra) form:
//!   `u(t) = int_0^t K^eps(t - tau) lap u(tau) dtau + u1 t + u0 + int_0^t (t - xi) f(xi) dxi`.
//!
//! Both memory terms use product quadrature ([`crate::quadrature`]) and keep
//! the full history unless a truncation window is configured.

use serde::{Deserialize, Serialize};

use crate::domain::{laplacian_into, Field, FieldExpr, Grid};
use crate::error::{domain, Error, Result};
use crate::forcing::{Forcing, ForcingContext, ForcingSampler};
use crate::kernel::KernelSpec;
use crate::quadrature::{HatWeights, LagKernel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    IntegroDifferential,
    IntegralVolterra,
}

/// Fixed-point resolution of the self-term of the Volterra march.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    /// Iterations are stopped once the update is below
    /// `tolerance * max(|u|_inf, 1e-300)`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tolerance: 1e-14,
            max_iterations: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kernel: KernelSpec,
    pub eps: f64,
    pub grid: Grid,
    pub t_final: f64,
    pub dt: f64,
    pub u0: FieldExpr,
    pub u1: FieldExpr,
    pub forcing: Forcing,
    pub formulation: Formulation,
    /// Upper bound on `dt sqrt(dim G^eps(0)) / h` for the explicit scheme.
    pub cfl_limit: f64,
    /// Optional memory truncation, in time steps. `None` keeps the full history.
    pub memory_window: Option<usize>,
    pub fixed_point: FixedPointOptions,
}

impl ProblemSpec {
    /// A spec with zero data, zero forcing and the integro-differential form.
    pub fn new(kernel: KernelSpec, eps: f64, grid: Grid, t_final: f64, dt: f64) -> Self {
        ProblemSpec {
            kernel,
            eps,
            grid,
            t_final,
            dt,
            u0: FieldExpr::Zero,
            u1: FieldExpr::Zero,
            forcing: Forcing::zero(),
            formulation: Formulation::IntegroDifferential,
            cfl_limit: 1.0,
            memory_window: None,
            fixed_point: FixedPointOptions::default(),
        }
    }

    pub fn with_data(mut self, u0: FieldExpr, u1: FieldExpr, forcing: Forcing) -> Self {
        self.u0 = u0;
        self.u1 = u1;
        self.forcing = forcing;
        self
    }

    pub fn with_formulation(mut self, formulation: Formulation) -> Self {
        self.formulation = formulation;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    /// Number of time steps `T / dt`.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// `G(eps)`, the instantaneous modulus of the regularized problem.
    pub fn instantaneous_modulus(&self) -> Result<f64> {
        self.kernel.g(self.eps)
    }

    /// `dt sqrt(dim G^eps(0)) / h_min`.
    pub fn cfl_number(&self) -> Result<f64> {
        let g0 = self.instantaneous_modulus()?;
        Ok(self.dt * (self.grid.dim() as f64 * g0).sqrt() / self.grid.min_spacing())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return domain(format!("dt must be > 0 (got {})", self.dt));
        }
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return domain(format!("T must be > 0 (got {})", self.t_final));
        }
        let ratio = self.t_final / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return domain(format!("T / dt must be a positive integer (got {ratio})"));
        }
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return domain(format!("eps must be >= 0 (got {})", self.eps));
        }
        match self.formulation {
            Formulation::IntegroDifferential => {
                if self.eps == 0.0 && self.kernel.is_singular() {
                    return domain("the integro-differential form needs eps > 0 for a singular kernel");
                }
                let cfl = self.cfl_number()?;
                if cfl > self.cfl_limit {
                    return Err(Error::Cfl {
                        dt: self.dt,
                        max_dt: max_stable_dt(&self.kernel, self.eps, &self.grid, self.cfl_limit)?,
                        cfl,
                        limit: self.cfl_limit,
                    });
                }
            }
            Formulation::IntegralVolterra => {}
        }
        if self.cfl_limit > 1.0 || !(self.cfl_limit > 0.0) {
            return domain(format!("CFL limit must lie in (0, 1] (got {})", self.cfl_limit));
        }
        Ok(())
    }

    /// Stable hash of the full spec (FNV-1a over its JSON encoding).
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        let mut h: u64 = 0xcbf29ce484222325;
        for b in json.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }

    fn forcing_context(&self) -> ForcingContext<'_> {
        ForcingContext {
            kernel: &self.kernel,
            eps: self.eps,
        }
    }
}

/// Largest `dt` with `dt sqrt(dim G^eps(0)) / h_min <= cfl`.
pub fn max_stable_dt(kernel: &KernelSpec, eps: f64, grid: &Grid, cfl: f64) -> Result<f64> {
    let g0 = kernel.g(eps)?;
    Ok(cfl * grid.min_spacing() / (grid.dim() as f64 * g0).sqrt())
}

/// Largest `dt <= max_dt` that divides `t_final` into an integer number of steps.
pub fn fitted_dt(t_final: f64, max_dt: f64) -> f64 {
    let n = (t_final / max_dt - 1e-9).ceil().max(1.0);
    t_final / n
}

/// Full time history `u(t_j)`, `t_j = j dt`, of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySolution {
    spec: ProblemSpec,
    spec_hash: String,
    levels: Vec<Vec<f64>>,
}

impl TrajectorySolution {
    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn spec_hash(&self) -> &str {
        &self.spec_hash
    }

    pub fn grid(&self) -> &Grid {
        &self.spec.grid
    }

    pub fn dt(&self) -> f64 {
        self.spec.dt
    }

    pub fn eps(&self) -> f64 {
        self.spec.eps
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.spec.dt
    }

    pub fn level(&self, j: usize) -> &[f64] {
        &self.levels[j]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn field(&self, j: usize) -> Field {
        Field::from_values(self.spec.grid, self.levels[j].clone())
            .expect("trajectory levels are finite and sized to the grid")
    }

    /// `u_t` estimate: the prescribed `u1` at `j = 0`, centered differences
    /// inside, a backward difference at the last level.
    pub fn velocity(&self, j: usize) -> Vec<f64> {
        let n = self.levels.len();
        let dt = self.spec.dt;
        if j == 0 {
            let g = self.spec.grid;
            return (0..g.len()).map(|i| self.spec.u1.eval(&g, g.coords(i))).collect();
        }
        if j + 1 < n {
            self.levels[j + 1]
                .iter()
                .zip(&self.levels[j - 1])
                .map(|(a, b)| (a - b) / (2.0 * dt))
                .collect()
        } else {
            self.levels[j]
                .iter()
                .zip(&self.levels[j - 1])
                .map(|(a, b)| (a - b) / dt)
                .collect()
        }
    }

    /// `L2(Q)` norm: midpoint in space, trapezoid in time.
    pub fn l2_spacetime(&self) -> f64 {
        crate::domain::l2_spacetime(self)
    }

    /// `L2(Q)` distance to another trajectory on the same space-time grid.
    pub fn l2_distance(&self, other: &TrajectorySolution) -> Result<f64> {
        self.check_compatible(other)?;
        let g = self.grid();
        let sq = self.levels.iter().zip(&other.levels).map(|(a, b)| {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * g.cell_volume()
        });
        Ok(crate::domain::spacetime_norm_sq(self.dt(), sq).sqrt())
    }

    /// `L2(Q)` distance to a reference given level by level.
    pub fn l2_distance_to(&self, reference: impl Fn(usize, f64) -> Vec<f64>) -> f64 {
        let g = self.grid();
        let sq: Vec<f64> = (0..self.n_levels())
            .map(|j| {
                let r = reference(j, self.time(j));
                self.levels[j].iter().zip(&r).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * g.cell_volume()
            })
            .collect();
        crate::domain::spacetime_norm_sq(self.dt(), sq.into_iter()).sqrt()
    }

    /// Max-norm distance to a reference over all levels.
    pub fn max_error(&self, reference: impl Fn(usize, f64) -> Vec<f64>) -> f64 {
        (0..self.n_levels())
            .map(|j| {
                let r = reference(j, self.time(j));
                self.levels[j].iter().zip(&r).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_compatible(&self, other: &TrajectorySolution) -> Result<()> {
        if self.grid() != other.grid() {
            return Err(Error::GridMismatch("trajectories live on different grids".into()));
        }
        if self.n_levels() != other.n_levels() || (self.dt() - other.dt()).abs() > 1e-15 * self.dt() {
            return Err(Error::GridMismatch("trajectories live on different time grids".into()));
        }
        Ok(())
    }

    #[doc(hidden)]
    pub fn from_levels(spec: ProblemSpec, levels: Vec<Vec<f64>>) -> Self {
        TrajectorySolution {
            spec_hash: spec.hash_hex(),
            spec,
            levels,
        }
    }
}

/// Runs whichever formulation the problem selects.
pub fn run(spec: &ProblemSpec) -> Result<TrajectorySolution> {
    match spec.formulation {
        Formulation::IntegroDifferential => run_integrodiff(spec),
        Formulation::IntegralVolterra => run_integral_volterra(spec),
    }
}

/// Memory weights of the integro-differential scheme: product-trapezoid
/// weights of `G'(eps + s)` over `n_steps` lag intervals.
pub fn memory_weights(kernel: &KernelSpec, eps: f64, dt: f64, n_steps: usize) -> Result<HatWeights> {
    LagKernel::g_dot(kernel, eps).hat_weights(dt, n_steps)
}

/// One explicit step of the integro-differential scheme:
/// `u^{j+1} = 2 u^j - u^{j-1} + dt^2 [G(eps) lap u^j + Q^j + f^j]` with
/// `Q^j = lap sum_l c_l u^{j-l}` the product-quadrature memory term.
///
/// `history` holds `u^0 ..= u^j` with `j >= 1`.
pub fn step_integrodiff(
    grid: &Grid,
    history: &[Vec<f64>],
    weights: &HatWeights,
    g_eps: f64,
    forcing: &[f64],
    dt: f64,
    memory_window: Option<usize>,
) -> Result<Vec<f64>> {
    if history.len() < 2 {
        return Err(Error::Internal(format!(
            "leapfrog step needs two levels, got {}",
            history.len()
        )));
    }
    let j = history.len() - 1;
    if weights.n_intervals() < j {
        return Err(Error::Internal(format!(
            "memory weights cover {} steps, history has {j}",
            weights.n_intervals()
        )));
    }
    let n = grid.len();
    if history.iter().any(|h| h.len() != n) || forcing.len() != n {
        return Err(Error::Internal("history length does not match the grid".into()));
    }
    let current = &history[j];
    let previous = &history[j - 1];
    let mut lap = vec![0.0; n];
    laplacian_into(grid, current, &mut lap);

    let depth = memory_window.map_or(j, |w| w.min(j));
    let mut combo = vec![0.0; n];
    for l in 0..=depth {
        let c = weights.lag_weight(j, l);
        if c != 0.0 {
            for (acc, u) in combo.iter_mut().zip(&history[j - l]) {
                *acc += c * u;
            }
        }
    }
    let mut memory = vec![0.0; n];
    laplacian_into(grid, &combo, &mut memory);

    let dt2 = dt * dt;
    Ok((0..n)
        .map(|i| 2.0 * current[i] - previous[i] + dt2 * (g_eps * lap[i] + memory[i] + forcing[i]))
        .collect())
}

/// Integro-differential run with the second-order Taylor start
/// `u^1 = u0 + dt u1 + dt^2/2 (G(eps) lap u0 + f^0)`.
pub fn run_integrodiff(spec: &ProblemSpec) -> Result<TrajectorySolution> {
    if spec.formulation != Formulation::IntegroDifferential {
        return domain("run_integrodiff needs the integro-differential formulation");
    }
    spec.validate()?;
    let grid = spec.grid;
    let n = grid.len();
    let steps = spec.steps();
    let dt = spec.dt;
    let g_eps = spec.instantaneous_modulus()?;
    let ctx = spec.forcing_context();
    let weights = memory_weights(&spec.kernel, spec.eps, dt, steps)?;
    let sampler = ForcingSampler::new(&spec.forcing, &grid);
    let mut f = vec![0.0; n];

    let u0 = Field::from_expr(grid, &spec.u0).into_values();
    let u1 = Field::from_expr(grid, &spec.u1).into_values();
    let mut lap0 = vec![0.0; n];
    laplacian_into(&grid, &u0, &mut lap0);
    sampler.sample_into(0.0, ctx, &mut f)?;
    let first: Vec<f64> = (0..n)
        .map(|i| u0[i] + dt * u1[i] + 0.5 * dt * dt * (g_eps * lap0[i] + f[i]))
        .collect();

    let mut levels = Vec::with_capacity(steps + 1);
    levels.push(u0);
    levels.push(first);
    check_finite(&levels[1], 1)?;
    for j in 1..steps {
        sampler.sample_into(j as f64 * dt, ctx, &mut f)?;
        let next = step_integrodiff(&grid, &levels, &weights, g_eps, &f, dt, spec.memory_window)?;
        check_finite(&next, j + 1)?;
        levels.push(next);
    }
    levels.truncate(steps + 1);
    Ok(TrajectorySolution::from_levels(spec.clone(), levels))
}

/// Product-trapezoid weights of `K^eps` for the Volterra march.
pub fn volterra_weights(kernel: &KernelSpec, eps: f64, dt: f64, n_steps: usize) -> Result<HatWeights> {
    LagKernel::integrated(kernel, eps)?.hat_weights(dt, n_steps)
}

/// Time marching of the integral formulation.
///
/// The self-weight of the current level is `int_0^dt K^eps(s)(1 - s/dt) ds`,
/// of size `G(eps) dt^2 / 6` rather than zero, so `u^j = R^j + w_0 lap u^j` is
/// resolved by fixed-point iteration from the predictor `u^{j-1}`. The
/// iteration contracts when `w_0 * sum 4/h^2 < 1`, which is checked upfront.
/// Because `w_0` grows faster than `dt`, dividing `dt` by that factor always
/// restores contraction; the abort message suggests exactly that step.
pub fn run_integral_volterra(spec: &ProblemSpec) -> Result<TrajectorySolution> {
    if spec.formulation != Formulation::IntegralVolterra {
        return domain("run_integral_volterra needs the integral formulation");
    }
    spec.validate()?;
    let grid = spec.grid;
    let n = grid.len();
    let steps = spec.steps();
    let dt = spec.dt;
    let ctx = spec.forcing_context();
    let weights = volterra_weights(&spec.kernel, spec.eps, dt, steps)?;
    let self_weight = weights.lag_weight(1, 0);
    let contraction = self_weight * grid.laplacian_spectral_bound();
    if contraction >= 1.0 {
        return Err(Error::SolverAbort {
            step: 0,
            reason: format!(
                "fixed-point contraction factor {contraction:.3} >= 1; reduce dt below {:e}",
                dt / contraction
            ),
        });
    }
    let sampler = ForcingSampler::new(&spec.forcing, &grid);
    let u0 = Field::from_expr(grid, &spec.u0).into_values();
    let u1 = Field::from_expr(grid, &spec.u1).into_values();

    let mut levels: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    levels.push(u0.clone());
    let mut known = vec![0.0; n];
    let mut combo = vec![0.0; n];
    let mut lap = vec![0.0; n];
    let opts = spec.fixed_point;
    for j in 1..=steps {
        let t = j as f64 * dt;
        // R^j = u0 + t u1 + F2(t) + lap sum_{l >= 1} c_l u^{j-l}
        sampler.double_integral_into(t, ctx, &mut known)?;
        combo.iter_mut().for_each(|c| *c = 0.0);
        let depth = spec.memory_window.map_or(j, |w| w.min(j));
        for l in 1..=depth {
            let c = weights.lag_weight(j, l);
            for (acc, u) in combo.iter_mut().zip(&levels[j - l]) {
                *acc += c * u;
            }
        }
        laplacian_into(&grid, &combo, &mut lap);
        for i in 0..n {
            known[i] += u0[i] + t * u1[i] + lap[i];
        }
        let w0 = weights.lag_weight(j, 0);
        let mut x = levels[j - 1].clone();
        let mut last_update = f64::INFINITY;
        let mut growth = 0;
        let mut converged = false;
        for _ in 0..opts.max_iterations.max(1) {
            laplacian_into(&grid, &x, &mut lap);
            let mut update = 0.0f64;
            let mut scale = 0.0f64;
            for i in 0..n {
                let v = known[i] + w0 * lap[i];
                update = update.max((v - x[i]).abs());
                scale = scale.max(v.abs());
                x[i] = v;
            }
            if !update.is_finite() {
                return Err(Error::SolverAbort {
                    step: j,
                    reason: "non-finite value in fixed-point correction".into(),
                });
            }
            if update <= opts.tolerance * scale.max(1e-300) {
                converged = true;
                break;
            }
            if update > last_update {
                growth += 1;
                if growth >= 3 {
                    return Err(Error::SolverAbort {
                        step: j,
                        reason: format!("fixed-point correction diverges (update {update:e})"),
                    });
                }
            } else {
                growth = 0;
            }
            last_update = update;
        }
        if !converged && opts.max_iterations > 1 {
            return Err(Error::SolverAbort {
                step: j,
                reason: format!("fixed-point correction did not converge in {} iterations", opts.max_iterations),
            });
        }
        check_finite(&x, j)?;
        levels.push(x);
    }
    Ok(TrajectorySolution::from_levels(spec.clone(), levels))
}

/// Runs the scalar pipeline once per displacement component.
pub fn run_componentwise(spec: &ProblemSpec, components: &[(FieldExpr, FieldExpr, Forcing)]) -> Result<Vec<TrajectorySolution>> {
    components
        .iter()
        .map(|(u0, u1, f)| run(&spec.clone().with_data(u0.clone(), u1.clone(), f.clone())))
        .collect()
}

fn check_finite(level: &[f64], step: usize) -> Result<()> {
    if let Some(v) = level.iter().find(|v| !v.is_finite()) {
        return Err(Error::SolverAbort {
            step,
            reason: format!("non-finite value {v} (overflow)"),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Constitutive stress

/// Uniformly sampled strain history `E(t_k)`, `t_k = k dt`, with a constant
/// value before `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrainHistory {
    pub dt: f64,
    pub samples: Vec<f64>,
    pub past_value: f64,
}

impl StrainHistory {
    pub fn from_fn(dt: f64, t_end: f64, past_value: f64, e: impl Fn(f64) -> f64) -> Self {
        let n = (t_end / dt).round() as usize;
        StrainHistory {
            dt,
            samples: (0..=n).map(|k| e(k as f64 * dt)).collect(),
            past_value,
        }
    }

    pub fn t_end(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.dt
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressForm {
    /// `T = G0 E(t) + int_0^inf G'(tau) E(t - tau) dtau`; needs finite `G0`.
    Relaxation,
    /// `T = G(inf) E_past + G(t) (E(0) - E_past) + int_0^t G(t - s) E'(s) ds`;
    /// valid for singular kernels.
    Integrated,
}

/// Stress at the last sample time of `history`; exact for piecewise-linear
/// histories.
pub fn compute_stress(kernel: &KernelSpec, history: &StrainHistory, form: StressForm) -> Result<f64> {
    if history.samples.is_empty() || !(history.dt > 0.0) {
        return domain("strain history needs at least one sample and dt > 0");
    }
    let dt = history.dt;
    let e = &history.samples;
    let n = e.len() - 1;
    let t = history.t_end();
    let g_inf = kernel.g_infinity();
    match form {
        StressForm::Relaxation => {
            let g0 = kernel.g_zero().ok_or_else(|| {
                Error::Domain("G0 is undefined for a singular kernel; use the integrated stress form".into())
            })?;
            let mut stress = g0 * e[n];
            if n > 0 {
                let w = LagKernel::g_dot(kernel, 0.0).hat_weights(dt, n)?;
                let phi: Vec<f64> = (0..=n).map(|m| e[n - m]).collect();
                stress += w.apply(&phi);
                stress += (g_inf - kernel.g(t)?) * history.past_value;
            }
            Ok(stress)
        }
        StressForm::Integrated => {
            let jump = e[0] - history.past_value;
            let mut stress = g_inf * history.past_value;
            if jump != 0.0 {
                stress += kernel.g(t)? * jump;
            }
            for k in 0..n {
                let slope = (e[k + 1] - e[k]) / dt;
                if slope != 0.0 {
                    // int_{t_k}^{t_k+1} G(t - s) ds
                    let x = (n - k - 1) as f64 * dt;
                    stress += slope * kernel.moments(0, x, dt)?.0;
                }
            }
            Ok(stress)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn prony() -> KernelSpec {
        KernelSpec::prony(0.5, &[(0.5, 2.0), (1.0, 0.3)]).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let g = Grid::line(1.0, 20).unwrap();
        for form in [Formulation::IntegroDifferential, Formulation::IntegralVolterra] {
            let spec = ProblemSpec::new(prony(), 0.05, g, 0.5, 0.01).with_formulation(form);
            let traj = run(&spec).unwrap();
            assert_eq!(traj.n_levels(), 51);
            assert!(traj.levels().iter().flatten().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn cfl_violation_is_refused() {
        let g = Grid::line(1.0, 99).unwrap();
        let spec = ProblemSpec::new(KernelSpec::constant(1.0).unwrap(), 0.0, g, 1.0, 0.1);
        match run_integrodiff(&spec) {
            Err(Error::Cfl { max_dt, .. }) => assert_relative_eq!(max_dt, 0.01, epsilon = 1e-15),
            other => panic!("expected CFL error, got {other:?}"),
        }
    }

    #[test]
    fn non_integer_step_count_is_refused() {
        let g = Grid::line(1.0, 9).unwrap();
        let spec = ProblemSpec::new(prony(), 0.1, g, 1.0, 0.03);
        assert!(matches!(spec.validate(), Err(Error::Domain(_))));
    }

    #[test]
    fn singular_kernel_needs_positive_eps_in_integrodiff_form() {
        let g = Grid::line(1.0, 9).unwrap();
        let spec = ProblemSpec::new(KernelSpec::power_law(1.0, 0.5).unwrap(), 0.0, g, 0.1, 0.01);
        assert!(spec.validate().is_err());
        let volterra = spec.with_formulation(Formulation::IntegralVolterra);
        assert!(volterra.validate().is_ok());
    }

    #[test]
    fn step_rejects_short_history() {
        let g = Grid::line(1.0, 5).unwrap();
        let w = memory_weights(&prony(), 0.1, 0.01, 3).unwrap();
        let r = step_integrodiff(&g, &[vec![0.0; 5]], &w, 1.0, &[0.0; 5], 0.01, None);
        assert!(matches!(r, Err(Error::Internal(_))));
        let r = step_integrodiff(&g, &vec![vec![0.0; 5]; 6], &w, 1.0, &[0.0; 5], 0.01, None);
        assert!(matches!(r, Err(Error::Internal(_))));
    }

    #[test]
    fn volterra_double_integral_of_unit_forcing() {
        // with a kernel that is nearly zero, u(t) = t^2 / 2
        let g = Grid::line(1.0, 9).unwrap();
        let k = KernelSpec::constant(1e-300).unwrap();
        let spec = ProblemSpec::new(k, 0.0, g, 1.0, 0.1)
            .with_data(
                FieldExpr::Zero,
                FieldExpr::Zero,
                Forcing::separable(
                    FieldExpr::Constant { value: 1.0 },
                    crate::forcing::TimeProfile::Constant { value: 1.0 },
                ),
            )
            .with_formulation(Formulation::IntegralVolterra);
        let traj = run(&spec).unwrap();
        for j in 0..traj.n_levels() {
            let t = traj.time(j);
            for &v in traj.level(j) {
                assert_relative_eq!(v, t * t / 2.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn stress_relaxation_and_equilibrium() {
        let k = prony();
        let e0 = 2.0;
        for t_end in [0.5, 3.0] {
            let step = StrainHistory::from_fn(0.01, t_end, 0.0, |_| e0);
            for form in [StressForm::Relaxation, StressForm::Integrated] {
                let s = compute_stress(&k, &step, form).unwrap();
                assert_relative_eq!(s, k.g(t_end).unwrap() * e0, epsilon = 1e-12);
            }
            let forever = StrainHistory::from_fn(0.01, t_end, e0, |_| e0);
            for form in [StressForm::Relaxation, StressForm::Integrated] {
                let s = compute_stress(&k, &forever, form).unwrap();
                assert_relative_eq!(s, k.g_infinity() * e0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ramp_strain_gives_integrated_kernel() {
        let k = KernelSpec::prony(0.0, &[(1.0, 1.0)]).unwrap();
        for t in [0.3, 2.0] {
            let ramp = StrainHistory::from_fn(0.05, t, 0.0, |s| s);
            let oracle = 1.0 - (-t).exp();
            for form in [StressForm::Relaxation, StressForm::Integrated] {
                assert_relative_eq!(compute_stress(&k, &ramp, form).unwrap(), oracle, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn singular_kernel_refuses_relaxation_form() {
        let k = KernelSpec::power_law(1.0, 0.5).unwrap();
        let step = StrainHistory::from_fn(0.01, 1.0, 0.0, |_| 1.0);
        assert!(matches!(compute_stress(&k, &step, StressForm::Relaxation), Err(Error::Domain(_))));
        let s = compute_stress(&k, &step, StressForm::Integrated).unwrap();
        assert_relative_eq!(s, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn fitted_dt_divides_horizon() {
        assert_eq!(fitted_dt(1.0, 0.0025), 1.0 / 400.0);
        let dt = fitted_dt(1.0, 0.003);
        assert!(dt <= 0.003 && ((1.0 / dt) - (1.0 / dt).round()).abs() < 1e-9);
    }
}
