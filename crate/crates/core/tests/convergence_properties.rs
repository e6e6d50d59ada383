use memvisco_core::convergence::{cauchy_report, convergence_lemma_check, run_eps_sequence};
use memvisco_core::diagnostics::standard_battery;
use memvisco_core::solver::{fitted_dt, max_stable_dt, ProblemSpec, TrajectorySolution};
use memvisco_core::{FieldExpr, Forcing, Grid, KernelSpec};

fn base(kernel: &KernelSpec, n: usize, eps_min: f64) -> ProblemSpec {
    let g = Grid::line(1.0, n).unwrap();
    let dt = fitted_dt(1.0, max_stable_dt(kernel, eps_min, &g, 0.5).unwrap());
    ProblemSpec::new(kernel.clone(), 0.1, g, 1.0, dt).with_data(
        FieldExpr::sin_mode(1.0, [1, 1, 1]),
        FieldExpr::Zero,
        Forcing::zero(),
    )
}

#[test]
fn prony_sequence_converges_at_first_order() {
    let k = KernelSpec::prony(0.0, &[(1.0, 1.0)]).unwrap();
    let trajs = run_eps_sequence(&base(&k, 49, 0.1 / 32.0), 0.1, 0.5, 5).unwrap();
    let report = cauchy_report(&trajs, 1e-2).unwrap();
    assert!(report.pass, "{report:?}");
    assert!((0.8..=1.2).contains(&report.rate), "{}", report.rate);
}

#[test]
fn corrupted_trajectory_is_located() {
    let k = KernelSpec::prony(0.0, &[(1.0, 1.0)]).unwrap();
    let mut trajs = run_eps_sequence(&base(&k, 29, 0.1 / 32.0), 0.1, 0.5, 5).unwrap();
    let victim = 3;
    let spec = trajs[victim].spec().clone();
    let mut levels = trajs[victim].levels().to_vec();
    for level in levels.iter_mut().skip(1) {
        for v in level.iter_mut() {
            *v += 0.05;
        }
    }
    trajs[victim] = TrajectorySolution::from_levels(spec, levels);
    let report = cauchy_report(&trajs, 1.0).unwrap();
    assert!(!report.pass);
    // d_2 is the first distance touching the corrupted run
    assert_eq!(report.first_non_monotone, Some(victim - 1));
}

#[test]
fn lemma_residuals_respect_majorant_and_decay() {
    for k in [KernelSpec::power_law(1.0, 0.5).unwrap(), KernelSpec::prony(0.3, &[(1.0, 0.5)]).unwrap()] {
        let trajs = run_eps_sequence(&base(&k, 39, 0.1 / 16.0), 0.1, 0.5, 4).unwrap();
        let battery = standard_battery();
        let lemma = convergence_lemma_check(&trajs, &battery).unwrap();
        assert!(lemma.iter().all(|r| r.within_majorant()));
        for test_index in 0..battery.len() {
            let seq: Vec<f64> = lemma.iter().filter(|r| r.test_index == test_index).map(|r| r.majorant).collect();
            assert!(seq.windows(2).all(|w| w[1] < w[0]));
        }
        let first = lemma.iter().filter(|r| r.eps == 0.1).fold(0.0f64, |m, r| m.max(r.residual.abs()));
        let last = lemma
            .iter()
            .filter(|r| r.eps == trajs.last().unwrap().eps())
            .fold(0.0f64, |m, r| m.max(r.residual.abs()));
        assert!(last < 0.5 * first);
    }
}

#[test]
fn prony_majorant_halves_with_eps() {
    let k = KernelSpec::prony(0.0, &[(1.0, 1.0)]).unwrap();
    let trajs = run_eps_sequence(&base(&k, 19, 0.1 / 8.0), 0.1, 0.5, 3).unwrap();
    let lemma = convergence_lemma_check(&trajs, &standard_battery()[..1]).unwrap();
    for w in lemma.windows(2) {
        let ratio = w[0].majorant / w[1].majorant;
        // K(eps) = 1 - e^{-eps}; the u-max factor varies slightly between runs
        assert!((1.85..2.15).contains(&ratio), "{ratio}");
    }
}

#[test]
fn reports_are_bit_identical_across_runs() {
    let k = KernelSpec::power_law(1.0, 0.5).unwrap();
    let b = base(&k, 19, 0.1 / 8.0);
    let a = cauchy_report(&run_eps_sequence(&b, 0.1, 0.5, 3).unwrap(), 1.0).unwrap();
    let c = cauchy_report(&run_eps_sequence(&b, 0.1, 0.5, 3).unwrap(), 1.0).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&c).unwrap()
    );
}
