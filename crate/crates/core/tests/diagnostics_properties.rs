use memvisco_core::diagnostics::{
    calibrate_decay_constant, check_energy_bound, check_energy_decay, decay_tolerance, energy_ledger, standard_battery,
    weak_residual, TestFunction,
};
use memvisco_core::forcing::manufactured_solution;
use memvisco_core::kernel::Family;
use memvisco_core::solver::{fitted_dt, max_stable_dt, run, Formulation, ProblemSpec};
use memvisco_core::{FieldExpr, Forcing, Grid, KernelSpec, TimeProfile};
use proptest::prelude::*;

fn standing(kernel: KernelSpec, n: usize) -> ProblemSpec {
    let g = Grid::line(1.0, n).unwrap();
    let dt = fitted_dt(1.0, max_stable_dt(&kernel, 0.05, &g, 0.5).unwrap());
    ProblemSpec::new(kernel, 0.05, g, 1.0, dt).with_data(
        FieldExpr::sin_mode(1.0, [1, 1, 1]),
        FieldExpr::Zero,
        Forcing::zero(),
    )
}

fn prony_strategy() -> impl Strategy<Value = KernelSpec> {
    (0.0..1.5f64, prop::collection::vec((0.1..2.0f64, 0.05..3.0f64), 1..4))
        .prop_map(|(g_inf, terms)| KernelSpec::prony(g_inf, &terms).unwrap())
}

#[test]
fn negative_control_kernel_breaks_energy_decay() {
    let bad = KernelSpec::from_family_unchecked(Family::Prony {
        g_inf: 1.5,
        terms: vec![(-0.5, 1.0).into()],
    });
    assert!(bad.g_dot(0.5).unwrap() > 0.0);
    let spec = standing(bad, 39);
    let ledger = energy_ledger(&run(&spec).unwrap()).unwrap();
    let c = calibrate_decay_constant(&spec).unwrap();
    let report = check_energy_decay(&ledger, decay_tolerance(c, spec.dt, spec.grid.min_spacing()));
    assert!(!report.pass);
    assert!(report.first_violation.is_some());
}

#[test]
fn power_law_ledgers_converge_under_refinement() {
    for alpha in [0.3, 0.5, 0.7] {
        let k = KernelSpec::power_law(1.0, alpha).unwrap();
        let r: Vec<f64> = [19, 39, 79]
            .iter()
            .map(|&n| energy_ledger(&run(&standing(k.clone(), n)).unwrap()).unwrap().max_residual())
            .collect();
        for w in r.windows(2) {
            assert!(w[0] / w[1] >= 1.8, "alpha {alpha}: {r:?}");
        }
    }
}

#[test]
fn weak_residual_of_manufactured_run_vanishes_under_refinement() {
    let k = KernelSpec::prony(0.5, &[(0.5, 1.0), (1.0, 0.2)]).unwrap();
    let battery = standard_battery();
    let mut worst = Vec::new();
    let mut placement_gap = Vec::new();
    for n in [19, 39, 79] {
        let g = Grid::line(1.0, n).unwrap();
        let spec = standing(k.clone(), n).with_data(
            FieldExpr::sin_mode(1.0, [1, 1, 1]),
            FieldExpr::Zero,
            Forcing::manufactured(&g, 1.0, [1, 1, 1]),
        );
        let traj = run(&spec).unwrap();
        // sanity: the run tracks the manufactured solution
        assert!(traj.max_error(|_, t| manufactured_solution(&g, 1.0, [1, 1, 1], t)) < 0.02);
        let res = weak_residual(&traj, &battery).unwrap();
        worst.push(res.iter().fold(0.0f64, |m, r| m.max(r.on_solution.abs())));
        placement_gap.push(res.iter().fold(0.0f64, |m, r| m.max((r.on_solution - r.on_test).abs())));
    }
    for w in worst.windows(2) {
        assert!(w[0] / w[1] > 3.0, "{worst:?}");
    }
    for w in placement_gap.windows(2) {
        assert!(w[0] / w[1] > 3.0, "{placement_gap:?}");
    }
}

#[test]
fn weak_residual_is_linear_in_the_test_function() {
    let spec = standing(KernelSpec::prony(0.2, &[(1.0, 0.5)]).unwrap(), 29);
    let traj = run(&spec).unwrap();
    let v = TestFunction::new(FieldExpr::sin_mode(1.0, [2, 1, 1]), TimeProfile::Sine { omega: 2.0, phase: 0.0 });
    let base = weak_residual(&traj, std::slice::from_ref(&v)).unwrap()[0];
    // powers of two scale every sample exactly, so linearity holds bit for bit
    for c in [-2.0, 0.5, 4.0] {
        let scaled = weak_residual(&traj, &[v.scaled(c)]).unwrap()[0];
        assert_eq!(scaled.on_solution, c * base.on_solution);
        assert_eq!(scaled.on_test, c * base.on_test);
    }
}

#[test]
fn zero_solution_has_zero_weak_residual() {
    let g = Grid::line(1.0, 9).unwrap();
    let spec = ProblemSpec::new(KernelSpec::power_law(1.0, 0.5).unwrap(), 0.05, g, 0.3, 0.003);
    let traj = run(&spec).unwrap();
    for r in weak_residual(&traj, &standard_battery()).unwrap() {
        assert_eq!(r.on_solution, 0.0);
        assert_eq!(r.on_test, 0.0);
    }
}

#[test]
fn bounded_forcing_run_stays_below_the_bound() {
    let k = KernelSpec::prony(0.5, &[(0.5, 2.0)]).unwrap();
    let g = Grid::line(1.0, 39).unwrap();
    let dt = fitted_dt(1.0, max_stable_dt(&k, 0.05, &g, 0.5).unwrap());
    let spec = ProblemSpec::new(k, 0.05, g, 1.0, dt).with_data(
        FieldExpr::Zero,
        FieldExpr::Zero,
        Forcing::separable(FieldExpr::sin_mode(1.0, [1, 1, 1]), TimeProfile::Constant { value: 1.0 }),
    );
    let report = check_energy_bound(&run(&spec).unwrap()).unwrap();
    assert!(report.pass());
    assert!(report.max_ratio > 0.0 && report.max_ratio < 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn memory_term_nonnegative_and_energy_decays(k in prony_strategy(), mode in 1u32..3, volterra in any::<bool>()) {
        let form = if volterra { Formulation::IntegralVolterra } else { Formulation::IntegroDifferential };
        let spec = standing(k, 29)
            .with_data(FieldExpr::sin_mode(1.0, [mode, 1, 1]), FieldExpr::Zero, Forcing::zero())
            .with_formulation(form);
        let ledger = energy_ledger(&run(&spec).unwrap()).unwrap();
        prop_assert!(ledger.levels.iter().all(|l| l.memory >= 0.0));
        prop_assert!(ledger.nan_levels().is_empty());
        if !volterra {
            let c = calibrate_decay_constant(&spec).unwrap();
            let report = check_energy_decay(&ledger, decay_tolerance(c, spec.dt, spec.grid.min_spacing()));
            prop_assert!(report.pass, "{:?}", report);
        }
    }
}
