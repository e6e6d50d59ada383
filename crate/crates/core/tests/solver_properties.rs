use approx::assert_relative_eq;
use memvisco_core::domain::laplacian_into;
use memvisco_core::forcing::{manufactured_solution, ForcingTerm};
use memvisco_core::quadrature::LagKernel;
use memvisco_core::solver::{fitted_dt, max_stable_dt, run, Formulation, ProblemSpec};
use memvisco_core::{Field, FieldExpr, Forcing, Grid, KernelSpec, TimeProfile};
use proptest::prelude::*;
use std::f64::consts::PI;

fn spec_on(kernel: KernelSpec, eps: f64, n: usize, t: f64, cfl: f64) -> ProblemSpec {
    let g = Grid::line(1.0, n).unwrap();
    let dt = fitted_dt(t, max_stable_dt(&kernel, eps, &g, cfl).unwrap());
    ProblemSpec::new(kernel, eps, g, t, dt)
}

fn prony() -> KernelSpec {
    KernelSpec::prony(0.5, &[(0.5, 1.0), (1.0, 0.2)]).unwrap()
}

#[test]
fn elastic_reduction_is_exact_leapfrog() {
    let g0 = 1.3;
    let spec = spec_on(KernelSpec::constant(g0).unwrap(), 0.2, 31, 0.7, 0.8).with_data(
        FieldExpr::Bump {
            amplitude: 1.0,
            center: [0.4; 3],
            radius: 0.3,
        },
        FieldExpr::sin_mode(0.5, [2, 1, 1]),
        Forcing::zero(),
    );
    let traj = run(&spec).unwrap();
    // plain leapfrog for u_tt = g0 lap u, same startup
    let g = spec.grid;
    let n = g.len();
    let dt = spec.dt;
    let u0 = Field::from_expr(g, &spec.u0).into_values();
    let u1 = Field::from_expr(g, &spec.u1).into_values();
    let mut lap = vec![0.0; n];
    laplacian_into(&g, &u0, &mut lap);
    let mut prev = u0.clone();
    let mut cur: Vec<f64> = (0..n).map(|i| u0[i] + dt * u1[i] + 0.5 * dt * dt * (g0 * lap[i])).collect();
    assert_eq!(traj.level(1), &cur[..]);
    for j in 1..traj.n_levels() - 1 {
        laplacian_into(&g, &cur, &mut lap);
        let next: Vec<f64> = (0..n)
            .map(|i| 2.0 * cur[i] - prev[i] + dt * dt * (g0 * lap[i] + 0.0))
            .collect();
        assert_eq!(traj.level(j + 1), &next[..], "level {}", j + 1);
        prev = cur;
        cur = next;
    }
}

#[test]
fn elastic_standing_wave_converges_at_second_order() {
    let mut errors = Vec::new();
    for n in [49, 99] {
        let spec = spec_on(KernelSpec::constant(1.0).unwrap(), 0.0, n, 1.0, 0.5).with_data(
            FieldExpr::sin_mode(1.0, [1, 1, 1]),
            FieldExpr::Zero,
            Forcing::zero(),
        );
        let traj = run(&spec).unwrap();
        let g = spec.grid;
        errors.push(traj.max_error(|_, t| {
            (0..g.len()).map(|i| (PI * g.coords(i)[0]).sin() * (PI * t).cos()).collect()
        }));
    }
    assert!(errors[0] / errors[1] > 3.5, "{errors:?}");
}

#[test]
fn manufactured_solution_both_formulations() {
    for form in [Formulation::IntegroDifferential, Formulation::IntegralVolterra] {
        let mut errors = Vec::new();
        for n in [19, 39, 79] {
            let g = Grid::line(1.0, n).unwrap();
            let spec = spec_on(prony(), 0.05, n, 1.0, 0.5)
                .with_data(FieldExpr::sin_mode(1.0, [1, 1, 1]), FieldExpr::Zero, Forcing::manufactured(&g, 1.0, [1, 1, 1]))
                .with_formulation(form);
            let traj = run(&spec).unwrap();
            errors.push(traj.l2_distance_to(|_, t| manufactured_solution(&g, 1.0, [1, 1, 1], t)));
        }
        for w in errors.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.8, "{form:?}: {errors:?}");
        }
    }
}

#[test]
fn memory_weights_telescope() {
    for k in [prony(), KernelSpec::power_law(1.0, 0.5).unwrap()] {
        let eps = 0.05;
        let dt = 0.01;
        let w = LagKernel::g_dot(&k, eps).hat_weights(dt, 100).unwrap();
        for j in [1, 10, 100] {
            let total: f64 = w.lag_weights(j).iter().sum();
            let increment = k.g(eps + j as f64 * dt).unwrap() - k.g(eps).unwrap();
            assert_relative_eq!(total, increment, epsilon = 1e-12);
        }
    }
}

#[test]
fn cross_formulation_distance_is_second_order_in_dt() {
    for k in [prony(), KernelSpec::power_law(1.0, 0.5).unwrap()] {
        let g = Grid::line(1.0, 29).unwrap();
        let dt0 = fitted_dt(0.5, max_stable_dt(&k, 0.05, &g, 0.5).unwrap());
        let mut d = Vec::new();
        for lvl in 0..3 {
            let spec = ProblemSpec::new(k.clone(), 0.05, g, 0.5, dt0 / 2f64.powi(lvl)).with_data(
                FieldExpr::sin_mode(1.0, [1, 1, 1]),
                FieldExpr::Zero,
                Forcing::zero(),
            );
            let a = run(&spec).unwrap();
            let b = run(&spec.clone().with_formulation(Formulation::IntegralVolterra)).unwrap();
            d.push(a.l2_distance(&b).unwrap());
        }
        for w in d.windows(2) {
            assert!(w[0] / w[1] >= 3.2, "{d:?}");
        }
    }
}

#[test]
fn volterra_accepts_eps_zero_for_singular_kernel() {
    let g = Grid::line(1.0, 19).unwrap();
    let spec = ProblemSpec::new(KernelSpec::power_law(1.0, 0.5).unwrap(), 0.0, g, 0.5, 0.005)
        .with_formulation(Formulation::IntegralVolterra)
        .with_data(FieldExpr::sin_mode(1.0, [1, 1, 1]), FieldExpr::Zero, Forcing::zero());
    let traj = run(&spec).unwrap();
    assert!(traj.levels().iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn volterra_contraction_failure_aborts() {
    let g = Grid::line(1.0, 49).unwrap();
    let spec = ProblemSpec::new(KernelSpec::constant(1.0).unwrap(), 0.0, g, 1.0, 0.5)
        .with_data(FieldExpr::sin_mode(1.0, [1, 1, 1]), FieldExpr::Zero, Forcing::zero())
        .with_formulation(Formulation::IntegralVolterra);
    assert!(matches!(run(&spec), Err(memvisco_core::Error::SolverAbort { step: 0, .. })));
}

#[test]
fn three_dimensional_smoke_run_is_finite() {
    let k = prony();
    let g = Grid::cube(1.0, 16).unwrap();
    let dt = fitted_dt(0.5, max_stable_dt(&k, 0.05, &g, 0.5).unwrap());
    let spec = ProblemSpec::new(k, 0.05, g, 0.5, dt).with_data(
        FieldExpr::Bump {
            amplitude: 1.0,
            center: [0.5; 3],
            radius: 0.3,
        },
        FieldExpr::Zero,
        Forcing::zero(),
    );
    let traj = run(&spec).unwrap();
    assert!(traj.levels().iter().flatten().all(|v| v.is_finite()));
}

fn forcing_strategy() -> impl Strategy<Value = Forcing> {
    (1u32..4, -2.0..2.0f64, 0.5..6.0f64).prop_map(|(m, a, w)| Forcing {
        terms: vec![ForcingTerm {
            space: FieldExpr::sin_mode(a, [m, 1, 1]),
            time: TimeProfile::Sine { omega: w, phase: 0.3 },
        }],
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn zero_data_invariance(g_inf in 0.0..1.0f64, w in 0.1..2.0f64, tau in 0.1..3.0f64, volterra in any::<bool>()) {
        let k = KernelSpec::prony(g_inf, &[(w, tau)]).unwrap();
        let form = if volterra { Formulation::IntegralVolterra } else { Formulation::IntegroDifferential };
        let traj = run(&spec_on(k, 0.05, 15, 0.3, 0.5).with_formulation(form)).unwrap();
        prop_assert!(traj.levels().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn linearity_in_forcing(f1 in forcing_strategy(), f2 in forcing_strategy(), a in -2.0..2.0f64, b in -2.0..2.0f64, volterra in any::<bool>()) {
        let form = if volterra { Formulation::IntegralVolterra } else { Formulation::IntegroDifferential };
        let base = spec_on(prony(), 0.05, 15, 0.4, 0.5).with_formulation(form);
        let r = |f: Forcing| run(&base.clone().with_data(FieldExpr::Zero, FieldExpr::Zero, f)).unwrap();
        let t1 = r(f1.clone());
        let t2 = r(f2.clone());
        let combo = r(f1.scaled(a).plus(f2.scaled(b)));
        let scale = t1.levels().iter().chain(t2.levels()).flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for j in 0..combo.n_levels() {
            for i in 0..combo.level(j).len() {
                let expected = a * t1.level(j)[i] + b * t2.level(j)[i];
                prop_assert!((combo.level(j)[i] - expected).abs() <= 1e-11 * scale * (a.abs() + b.abs() + 1.0));
            }
        }
    }
}
