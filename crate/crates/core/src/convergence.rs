//! The epsilon-regularization study: solve a geometric sequence of translated
//! problems on one shared space-time grid and measure how fast successive
//! solutions approach each other in `L2(Q)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{trapezoid, TestFunction};
use crate::domain::inner;
use crate::error::{domain, Error, Result};
use crate::forcing::ForcingContext;
use crate::quadrature::LagKernel;
use crate::solver::{max_stable_dt, run, Formulation, ProblemSpec, TrajectorySolution};

/// `eps_h = eps0 * ratio^h` for `h = 0..=count`.
pub fn eps_schedule(eps0: f64, ratio: f64, count: usize) -> Result<Vec<f64>> {
    if !(eps0 > 0.0) || !eps0.is_finite() {
        return domain(format!("eps0 must be > 0 (got {eps0})"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return domain(format!("ratio must lie in (0, 1) (got {ratio})"));
    }
    Ok((0..=count).map(|h| eps0 * ratio.powi(h as i32)).collect())
}

/// Runs `count + 1` problems that differ only in `eps`, in parallel.
///
/// The time step of `base` is shared by every run, so it has to satisfy the
/// stability limit of the smallest `eps`, where `G(eps)` is largest. This is
/// checked before any run starts.
pub fn run_eps_sequence(base: &ProblemSpec, eps0: f64, ratio: f64, count: usize) -> Result<Vec<TrajectorySolution>> {
    let schedule = eps_schedule(eps0, ratio, count)?;
    if base.formulation == Formulation::IntegroDifferential {
        let smallest = *schedule.last().expect("schedule is nonempty");
        let max_dt = max_stable_dt(&base.kernel, smallest, &base.grid, base.cfl_limit)?;
        if base.dt > max_dt {
            return Err(Error::Cfl {
                dt: base.dt,
                max_dt,
                cfl: base.dt / max_dt * base.cfl_limit,
                limit: base.cfl_limit,
            });
        }
    }
    schedule
        .par_iter()
        .map(|&eps| run(&base.clone().with_eps(eps)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub eps: Vec<f64>,
    /// `d_h = |u^{eps_h} - u^{eps_{h+1}}|_{L2(Q)}`.
    pub distances: Vec<f64>,
    /// `|u^{eps_h} - u^{eps_H}|_{L2(Q)}` against the finest run.
    pub tail_distances: Vec<f64>,
    /// Least-squares slope of `log d_h` against `log eps_h`.
    pub rate: f64,
    /// `sup_s |K^{eps_h}(s) - K(s)| = K(eps_h)`.
    pub kernel_sup_bounds: Vec<f64>,
    pub monotone: bool,
    /// First `h >= 1` with `d_h >= d_{h-1}`.
    pub first_non_monotone: Option<usize>,
    pub tolerance: f64,
    pub pass: bool,
}

/// Builds the Cauchy-sequence report. Passes iff the distances decrease
/// strictly and the last one is below `tolerance`.
pub fn cauchy_report(trajs: &[TrajectorySolution], tolerance: f64) -> Result<ConvergenceReport> {
    if trajs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "a Cauchy report needs at least 3 trajectories, got {}",
            trajs.len()
        )));
    }
    let eps: Vec<f64> = trajs.iter().map(|t| t.eps()).collect();
    if eps.windows(2).any(|w| !(w[1] < w[0])) {
        return domain("eps values must be strictly decreasing");
    }
    for t in &trajs[1..] {
        trajs[0].check_compatible(t)?;
    }
    let distances = trajs
        .windows(2)
        .map(|w| w[0].l2_distance(&w[1]))
        .collect::<Result<Vec<_>>>()?;
    let finest = trajs.last().expect("nonempty");
    let tail_distances = trajs
        .iter()
        .map(|t| t.l2_distance(finest))
        .collect::<Result<Vec<_>>>()?;
    let kernel = &trajs[0].spec().kernel;
    let kernel_sup_bounds = eps.iter().map(|&e| kernel.integrated(e)).collect::<Result<Vec<_>>>()?;
    let first_non_monotone = distances.windows(2).position(|w| !(w[1] < w[0])).map(|h| h + 1);
    let monotone = first_non_monotone.is_none();
    let rate = fit_rate(&eps[..distances.len()], &distances);
    let last = *distances.last().expect("at least two distances");
    Ok(ConvergenceReport {
        pass: monotone && last <= tolerance,
        eps,
        distances,
        tail_distances,
        rate,
        kernel_sup_bounds,
        monotone,
        first_non_monotone,
        tolerance,
    })
}

/// Least-squares slope of `log y` against `log x` over the positive pairs;
/// `NaN` when fewer than two remain.
pub fn fit_rate(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// One kernel-difference residual and its majorant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaResidual {
    pub eps: f64,
    pub test_index: usize,
    /// `int_Q lap v * int_0^t (K^eps - K)(s) u(t - s) ds`.
    pub residual: f64,
    /// `M * C * |Omega| * T * max(1, T/2) * sup|K^eps - K|` with
    /// `M = max |lap v|` and `C = max |u|` over the space-time samples.
    pub majorant: f64,
}

impl LemmaResidual {
    pub fn within_majorant(&self) -> bool {
        self.residual.abs() <= self.majorant
    }
}

/// Evaluates the kernel-difference term for every trajectory and test
/// function, next to its majorant.
///
/// The inner convolution uses product-trapezoid weights of `K^eps - K`
/// against the piecewise-linear interpolant of `u`. Those weights are
/// integrals of the kernel difference against nonnegative hat functions that
/// sum to one, so the discrete value obeys the same bound as the continuous
/// one. The factor `T * max(1, T/2)` dominates the `T^2 / 2` that the time
/// integration of `t * sup|K^eps - K|` produces.
pub fn convergence_lemma_check(trajs: &[TrajectorySolution], battery: &[TestFunction]) -> Result<Vec<LemmaResidual>> {
    let mut out = Vec::new();
    for traj in trajs {
        let spec = traj.spec();
        let grid = *traj.grid();
        for v in battery {
            if !v.space.vanishes_on_boundary(&grid) {
                return domain(format!("test function {:?} does not vanish on the boundary", v.space));
            }
        }
        let steps = traj.n_levels() - 1;
        let dt = traj.dt();
        let t_final = dt * steps as f64;
        let eps = spec.eps;
        let weights = LagKernel::integrated_difference(&spec.kernel, eps)?.hat_weights(dt, steps)?;
        let sup = spec.kernel.integrated(eps)?;
        let n = grid.len();
        let convs: Vec<Vec<f64>> = (0..=steps)
            .into_par_iter()
            .map(|j| {
                let mut conv = vec![0.0; n];
                for l in 0..=j {
                    let c = weights.lag_weight(j, l);
                    for (acc, u) in conv.iter_mut().zip(traj.level(j - l)) {
                        *acc += c * u;
                    }
                }
                conv
            })
            .collect();
        let u_max = traj
            .levels()
            .iter()
            .flatten()
            .fold(0.0f64, |m, u| m.max(u.abs()));
        let ctx = ForcingContext {
            kernel: &spec.kernel,
            eps,
        };
        for (k, v) in battery.iter().enumerate() {
            let lap: Vec<f64> = (0..n)
                .map(|i| v.space.laplacian_at(&grid, grid.coords(i)).unwrap_or(0.0))
                .collect();
            let lap_max = lap.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let mut theta_max = 0.0f64;
            let mut samples = Vec::with_capacity(steps + 1);
            for (j, conv) in convs.iter().enumerate() {
                let theta = v.time.value(j as f64 * dt, ctx)?;
                theta_max = theta_max.max(theta.abs());
                samples.push(theta * inner(&grid, &lap, conv));
            }
            let m = lap_max * theta_max;
            out.push(LemmaResidual {
                eps,
                test_index: k,
                residual: trapezoid(dt, &samples),
                majorant: m * u_max * grid.measure() * t_final * (t_final / 2.0).max(1.0) * sup,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::standard_battery;
    use crate::domain::{FieldExpr, Grid};
    use crate::forcing::Forcing;
    use crate::kernel::KernelSpec;
    use approx::assert_relative_eq;

    fn base(kernel: KernelSpec) -> ProblemSpec {
        let g = Grid::line(1.0, 29).unwrap();
        ProblemSpec::new(kernel, 0.1, g, 0.5, 0.005).with_data(
            FieldExpr::sin_mode(1.0, [1, 1, 1]),
            FieldExpr::Zero,
            Forcing::zero(),
        )
    }

    #[test]
    fn schedule_is_geometric() {
        let s = eps_schedule(0.1, 0.5, 3).unwrap();
        assert_eq!(s, vec![0.1, 0.05, 0.025, 0.0125]);
        assert!(eps_schedule(0.1, 1.0, 3).is_err());
        assert!(eps_schedule(0.0, 0.5, 3).is_err());
    }

    #[test]
    fn constant_kernel_sequence_is_identical() {
        let trajs = run_eps_sequence(&base(KernelSpec::constant(1.0).unwrap()), 0.1, 0.5, 3).unwrap();
        let report = cauchy_report(&trajs, 1e-12).unwrap();
        assert!(report.distances.iter().all(|&d| d == 0.0));
        let lemma = convergence_lemma_check(&trajs, &standard_battery()).unwrap();
        assert!(lemma.iter().all(|r| r.residual == 0.0));
    }

    #[test]
    fn too_few_trajectories() {
        let trajs = run_eps_sequence(&base(KernelSpec::constant(1.0).unwrap()), 0.1, 0.5, 1).unwrap();
        assert!(matches!(cauchy_report(&trajs, 1.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn cfl_precheck_names_required_step() {
        let k = KernelSpec::power_law(1.0, 0.5).unwrap();
        let spec = base(k.clone()).with_dt(0.01);
        match run_eps_sequence(&spec, 0.1, 0.5, 6) {
            Err(Error::Cfl { max_dt, .. }) => {
                let expected = spec.grid.min_spacing() / k.g(0.1 * 0.5f64.powi(6)).unwrap().sqrt();
                assert_relative_eq!(max_dt, expected, max_relative = 1e-14);
            }
            other => panic!("expected CFL error, got {other:?}"),
        }
    }

    #[test]
    fn rate_fit_recovers_power() {
        let x = [0.1, 0.05, 0.025, 0.0125];
        let y: Vec<f64> = x.iter().map(|e: &f64| 3.0 * e.powf(0.7)).collect();
        assert_relative_eq!(fit_rate(&x, &y), 0.7, epsilon = 1e-12);
    }
}
