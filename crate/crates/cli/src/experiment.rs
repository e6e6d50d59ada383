//! Mode pipelines: run the configured experiment, judge it against the
//! configured tolerances and write every artifact.

use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use memvisco_core::convergence::{cauchy_report, convergence_lemma_check, eps_schedule, run_eps_sequence};
use memvisco_core::diagnostics::{
    calibrate_decay_constant, check_energy_bound, check_energy_decay, decay_tolerance, energy_ledger,
    standard_battery, weak_residual, DECAY_SAFETY,
};
use memvisco_core::export;
use memvisco_core::forcing::manufactured_solution;
use memvisco_core::solver::{compute_stress, fitted_dt, max_stable_dt, run, StrainHistory};
use memvisco_core::{Error, FieldExpr, Formulation, KernelSpec, ProblemSpec, TrajectorySolution};
use serde::Serialize;
use serde_json::json;

use crate::config::{config_echo, ExperimentConfig, Mode, Reference, StrainKind, TimeStep};
use crate::output::{plot_script, write_atomic};

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const DIAGNOSTIC_FAIL: i32 = 1;
    pub const CONFIG_ERROR: i32 = 2;
    pub const SOLVER_ABORT: i32 = 3;
}

/// One judged quantity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Verdict {
    fn below(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Verdict {
            name: name.to_string(),
            pass: value <= tolerance,
            value,
            tolerance,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome {
    pub exit_code: i32,
    pub verdicts: Vec<Verdict>,
    /// Solver or numerical error that stopped the pipeline.
    pub abort: Option<String>,
    pub artifacts: Vec<PathBuf>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.exit_code == exit::PASS
    }
}

/// Values the pipeline derived or defaulted, recorded in the manifest.
#[derive(Default, Serialize)]
struct Resolved {
    dt: Option<f64>,
    steps: Option<usize>,
    cfl_number: Option<f64>,
    eps_schedule: Option<Vec<f64>>,
    decay_constant: Option<f64>,
    decay_tolerance: Option<f64>,
    spec_hash: Option<String>,
    fixed_point_tolerance: Option<f64>,
    fixed_point_max_iterations: Option<usize>,
    test_functions: Option<usize>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    verdicts: Vec<Verdict>,
    artifacts: Vec<PathBuf>,
    resolved: Resolved,
    summary: Vec<String>,
}

impl Ctx<'_> {
    fn write(&mut self, name: &str, contents: &str) -> io::Result<()> {
        let path = self.dir.join(name);
        write_atomic(&path, contents.as_bytes())?;
        self.artifacts.push(PathBuf::from(name));
        Ok(())
    }

    fn judge(&mut self, v: Verdict) {
        self.summary.push(format!(
            "{:<5} {:<22} value {:e}  tolerance {:e}  {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.value,
            v.tolerance,
            v.detail
        ));
        self.verdicts.push(v);
    }
}

/// Runs `cfg`, writing artifacts into `dir` (created if missing).
///
/// Only I/O failures are returned as errors; solver failures end up in the
/// outcome with [`exit::SOLVER_ABORT`] and in the manifest.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> io::Result<Outcome> {
    std::fs::create_dir_all(dir)?;
    let start = Instant::now();
    let mut ctx = Ctx {
        cfg,
        dir,
        verdicts: Vec::new(),
        artifacts: Vec::new(),
        resolved: Resolved::default(),
        summary: Vec::new(),
    };
    let result = match cfg.mode {
        Mode::SingleRun => single_run(&mut ctx),
        Mode::EpsSequence => eps_sequence(&mut ctx),
        Mode::Admissibility => admissibility(&mut ctx),
        Mode::StressTest => stress_test(&mut ctx),
    };
    let abort = match result {
        Ok(()) => None,
        Err(Failure::Io(e)) => return Err(e),
        Err(Failure::Numeric(e)) => Some(e.to_string()),
    };
    let exit_code = if abort.is_some() {
        exit::SOLVER_ABORT
    } else if ctx.verdicts.iter().all(|v| v.pass) {
        exit::PASS
    } else {
        exit::DIAGNOSTIC_FAIL
    };
    let verdict_line = match exit_code {
        exit::PASS => "VERDICT PASS".to_string(),
        exit::DIAGNOSTIC_FAIL => "VERDICT FAIL".to_string(),
        _ => format!("VERDICT ABORT: {}", abort.as_deref().unwrap_or("")),
    };
    ctx.summary.push(verdict_line);
    let mode = serde_json::to_value(cfg.mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    let mut summary = format!("memvisco {mode} run\n");
    for line in &ctx.summary {
        summary.push_str(line);
        summary.push('\n');
    }
    ctx.write("summary.txt", &summary)?;
    ctx.write("plot.py", &plot_script(&ctx.artifacts))?;

    let elapsed = start.elapsed().as_secs_f64();
    let manifest = json!({
        "tool": "memvisco",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": memvisco_core::VERSION,
        "mode": cfg.mode,
        "config": config_echo(cfg),
        "resolved": ctx.resolved,
        "defaults": {
            "decay_safety_builtin": DECAY_SAFETY,
        },
        "tolerances": cfg.tolerances,
        "threads": rayon::current_num_threads(),
        "timing_seconds": elapsed,
        "verdicts": ctx.verdicts,
        "abort": abort,
        "exit_code": exit_code,
        "artifacts": ctx.artifacts,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
    ctx.write("manifest.json", &(text + "\n"))?;
    Ok(Outcome {
        exit_code,
        verdicts: ctx.verdicts,
        abort,
        artifacts: ctx.artifacts,
    })
}

enum Failure {
    Io(io::Error),
    Numeric(Error),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Numeric(e)
    }
}

type Step = std::result::Result<(), Failure>;

/// Builds the base problem; the step is sized for `eps_for_dt`.
fn base_spec(cfg: &ExperimentConfig, eps: f64, eps_for_dt: f64) -> memvisco_core::Result<ProblemSpec> {
    let grid = cfg.grid.expect("run modes require a grid");
    let time = cfg.time.as_ref().expect("run modes require a time block");
    let dt = match time.step {
        TimeStep::Fixed(dt) => dt,
        TimeStep::Cfl(c) => fitted_dt(time.t_final, max_stable_dt(&cfg.kernel, eps_for_dt, &grid, c)?),
    };
    let mut spec = ProblemSpec::new(cfg.kernel.clone(), eps, grid, time.t_final, dt)
        .with_data(cfg.data.u0.clone(), cfg.data.u1.clone(), cfg.data.forcing.clone())
        .with_formulation(cfg.formulation);
    spec.cfl_limit = time.cfl_limit;
    spec.memory_window = cfg.memory_window;
    Ok(spec)
}

fn record_spec(ctx: &mut Ctx<'_>, spec: &ProblemSpec) {
    ctx.resolved.dt = Some(spec.dt);
    ctx.resolved.steps = Some(spec.steps());
    ctx.resolved.cfl_number = spec.cfl_number().ok();
    ctx.resolved.spec_hash = Some(spec.hash_hex());
    if spec.formulation == Formulation::IntegralVolterra {
        ctx.resolved.fixed_point_tolerance = Some(spec.fixed_point.tolerance);
        ctx.resolved.fixed_point_max_iterations = Some(spec.fixed_point.max_iterations);
    }
}

fn reference_error(cfg: &ExperimentConfig, traj: &TrajectorySolution) -> Option<f64> {
    let grid = *traj.grid();
    match (cfg.data.reference, &cfg.data.u0) {
        (Reference::StandingWave, u0 @ FieldExpr::SinPiProduct { .. }) => {
            let g0 = cfg.kernel.g_zero()?;
            let omega = (g0 * u0.sin_eigenvalue(&grid)?).sqrt();
            let shape: Vec<f64> = (0..grid.len()).map(|i| u0.eval(&grid, grid.coords(i))).collect();
            Some(traj.max_error(|_, t| shape.iter().map(|s| s * (omega * t).cos()).collect()))
        }
        (Reference::Manufactured, FieldExpr::SinPiProduct { amplitude, modes }) => {
            Some(traj.max_error(|_, t| manufactured_solution(&grid, *amplitude, *modes, t)))
        }
        _ => None,
    }
}

fn single_run(ctx: &mut Ctx<'_>) -> Step {
    let cfg = ctx.cfg;
    let spec = base_spec(cfg, cfg.eps, cfg.eps)?;
    record_spec(ctx, &spec);
    let traj = run(&spec)?;
    if cfg.output.trajectory {
        ctx.write("trajectory.csv", &export::trajectory_csv(&traj, cfg.output.snapshot_stride))?;
    }
    let tol = &cfg.tolerances;
    let steps = traj.n_levels() - 1;
    ctx.summary.push(format!(
        "steps {steps}  dt {:e}  eps {:e}  spec {}",
        traj.dt(),
        traj.eps(),
        traj.spec_hash()
    ));
    if let Some(err) = reference_error(cfg, &traj) {
        ctx.judge(Verdict::below(
            "reference_error",
            err,
            tol.reference_error,
            format!("max-norm error against the {:?} reference", cfg.data.reference),
        ));
    }

    // The ledger needs G-dot at eps, which a singular kernel lacks at eps = 0.
    let ledger_ok = !(cfg.kernel.is_singular() && spec.eps == 0.0);
    if cfg.diagnostics.energy_ledger && ledger_ok {
        let ledger = energy_ledger(&traj)?;
        ctx.write("ledger.csv", &export::ledger_csv(&ledger))?;
        let nan = ledger.nan_levels();
        ctx.judge(Verdict::below(
            "ledger_finite",
            nan.len() as f64,
            0.0,
            format!("max identity residual {:e}", ledger.max_residual()),
        ));
        let decay_applies = spec.forcing.is_zero() && spec.formulation == Formulation::IntegroDifferential;
        if cfg.diagnostics.energy_decay && decay_applies {
            let c = calibrate_decay_constant(&spec)? / DECAY_SAFETY * tol.decay_safety;
            let decay_tol = decay_tolerance(c, spec.dt, spec.grid.min_spacing());
            ctx.resolved.decay_constant = Some(c);
            ctx.resolved.decay_tolerance = Some(decay_tol);
            let report = check_energy_decay(&ledger, decay_tol);
            ctx.judge(Verdict {
                name: "energy_decay".into(),
                pass: report.pass,
                value: report.max_relative_increase,
                tolerance: decay_tol,
                detail: match report.first_violation {
                    Some(j) => format!("first increase at level {j}"),
                    None => "stored energy nonincreasing".into(),
                },
            });
        }
    }
    if cfg.diagnostics.energy_bound && spec.eps <= 1.0 {
        let report = check_energy_bound(&traj)?;
        ctx.write("bound.csv", &export::bound_csv(&report))?;
        ctx.judge(Verdict::below(
            "energy_bound",
            report.max_ratio,
            tol.bound_ratio,
            format!(
                "gamma {:e}, bound {:e}, worst level {}",
                report.gamma, report.bound, report.worst_level
            ),
        ));
    }
    if cfg.diagnostics.weak_residual {
        let battery = standard_battery();
        ctx.resolved.test_functions = Some(battery.len());
        let res = weak_residual(&traj, &battery)?;
        ctx.write("weak_residual.csv", &export::weak_residual_csv(&res))?;
        let worst = res.iter().fold(0.0f64, |m, r| m.max(r.on_solution.abs()).max(r.on_test.abs()));
        ctx.judge(Verdict::below(
            "weak_residual",
            worst,
            tol.weak_residual,
            format!("{} test functions, both placements", res.len()),
        ));
    }
    Ok(())
}

fn eps_sequence(ctx: &mut Ctx<'_>) -> Step {
    let cfg = ctx.cfg;
    let seq = cfg.eps_sequence.as_ref().expect("validated");
    let schedule = eps_schedule(seq.eps0, seq.ratio, seq.count)?;
    let smallest = *schedule.last().expect("nonempty");
    let base = base_spec(cfg, seq.eps0, smallest)?;
    record_spec(ctx, &base.clone().with_eps(smallest));
    ctx.resolved.eps_schedule = Some(schedule);
    let trajs = run_eps_sequence(&base, seq.eps0, seq.ratio, seq.count)?;
    if cfg.output.trajectory {
        let finest = trajs.last().expect("nonempty");
        ctx.write("trajectory.csv", &export::trajectory_csv(finest, cfg.output.snapshot_stride))?;
    }
    let report = cauchy_report(&trajs, cfg.tolerances.cauchy)?;
    ctx.write("convergence.csv", &export::convergence_csv(&report))?;
    ctx.summary.push(format!(
        "fitted rate {:.4}  distances {}",
        report.rate,
        report.distances.iter().map(|d| format!("{d:e}")).collect::<Vec<_>>().join(" ")
    ));
    ctx.judge(Verdict {
        name: "cauchy_monotone".into(),
        pass: report.monotone,
        value: report.first_non_monotone.map_or(0.0, |h| h as f64),
        tolerance: 0.0,
        detail: match report.first_non_monotone {
            Some(h) => format!("d_{h} >= d_{}", h - 1),
            None => "distances strictly decreasing".into(),
        },
    });
    ctx.judge(Verdict::below(
        "cauchy_last_distance",
        *report.distances.last().expect("nonempty"),
        cfg.tolerances.cauchy,
        format!("rate {:.4}", report.rate),
    ));
    if cfg.diagnostics.convergence_lemma {
        let battery = standard_battery();
        ctx.resolved.test_functions = Some(battery.len());
        let lemma = convergence_lemma_check(&trajs, &battery)?;
        ctx.write("lemma.csv", &export::lemma_csv(&lemma))?;
        let worst = lemma
            .iter()
            .map(|r| if r.majorant > 0.0 { r.residual.abs() / r.majorant } else { 0.0 })
            .fold(0.0f64, f64::max);
        let outside = lemma.iter().filter(|r| !r.within_majorant()).count();
        ctx.judge(Verdict {
            name: "lemma_majorant".into(),
            pass: outside == 0,
            value: worst,
            tolerance: 1.0,
            detail: format!("{outside} of {} residuals above their majorant", lemma.len()),
        });
    }
    Ok(())
}

fn admissibility(ctx: &mut Ctx<'_>) -> Step {
    let cfg = ctx.cfg;
    let a = &cfg.admissibility;
    let report = cfg.kernel.check_admissibility(a.horizon, a.samples)?;
    let mut csv = String::from("t,g,g_dot,g_ddot\n");
    for s in &report.samples {
        csv.push_str(&format!("{:e},{:e},{:e},{:e}\n", s.t, s.g, s.g_dot, s.g_ddot));
    }
    ctx.write("admissibility.csv", &csv)?;
    ctx.summary.push(format!(
        "regime {}  G(inf) {:e}  integrable on half line {}",
        if report.finite_at_zero { "classical" } else { "singular" },
        report.g_infinity,
        report.integrable_on_half_line
    ));
    ctx.judge(Verdict {
        name: "sign_conditions".into(),
        pass: report.sign_conditions_hold(),
        value: if report.sign_conditions_hold() { 0.0 } else { 1.0 },
        tolerance: 0.0,
        detail: match report.first_violation {
            Some((c, t)) => format!("{c:?} fails at t = {t:e}"),
            None => format!("G > 0, G' <= 0, G'' >= 0 on {} samples", report.samples.len()),
        },
    });
    match cfg.kernel.check_fading_memory(a.fading_bound, a.fading_tol) {
        Ok(shift) => ctx.judge(Verdict {
            name: "fading_memory".into(),
            pass: true,
            value: shift,
            tolerance: a.fading_tol,
            detail: format!("history tail below tolerance beyond shift {shift:e}"),
        }),
        Err(e @ Error::Unattainable(_)) => ctx.judge(Verdict {
            name: "fading_memory".into(),
            pass: false,
            value: f64::INFINITY,
            tolerance: a.fading_tol,
            detail: e.to_string(),
        }),
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

/// Closed-form stress for the configured strain at time `t`.
fn expected_stress(kernel: &KernelSpec, kind: StrainKind, amplitude: f64, t: f64) -> memvisco_core::Result<f64> {
    Ok(match kind {
        StrainKind::Step => kernel.g(t)? * amplitude,
        StrainKind::Ramp => kernel.integrated(t)? * amplitude,
        StrainKind::ConstantForever => kernel.g_infinity() * amplitude,
    })
}

fn stress_test(ctx: &mut Ctx<'_>) -> Step {
    let cfg = ctx.cfg;
    let s = cfg.stress.as_ref().expect("validated");
    let a = s.amplitude;
    let mut csv = String::from("t,stress,expected,abs_error\n");
    let mut worst = 0.0f64;
    for &t in &s.times {
        let history = match s.strain {
            StrainKind::Step => StrainHistory::from_fn(s.dt, t, 0.0, |_| a),
            StrainKind::Ramp => StrainHistory::from_fn(s.dt, t, 0.0, |x| a * x),
            StrainKind::ConstantForever => StrainHistory::from_fn(s.dt, t, a, |_| a),
        };
        let t_end = history.t_end();
        let got = compute_stress(&cfg.kernel, &history, s.form)?;
        let want = expected_stress(&cfg.kernel, s.strain, a, t_end)?;
        let err = (got - want).abs();
        worst = worst.max(err);
        csv.push_str(&format!("{t_end:e},{got:e},{want:e},{err:e}\n"));
    }
    ctx.write("stress.csv", &csv)?;
    ctx.judge(Verdict::below(
        "stress_closed_form",
        worst,
        cfg.tolerances.stress,
        format!("{:?} strain, {:?} form", s.strain, s.form),
    ));
    Ok(())
}
