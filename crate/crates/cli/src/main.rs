use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use memvisco_cli::{exit, parse_config, run_experiment, ExperimentConfig};

/// Viscoelastic waves with singular memory kernels.
#[derive(Parser)]
#[command(name = "memvisco", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output directory; overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; falls back to MEMVISCO_THREADS, then all cores.
        #[arg(long)]
        threads: Option<usize>,
        /// Override a tolerance, e.g. `reference_error=1e-3`. Repeatable.
        #[arg(long = "tol-override", value_name = "KEY=VAL")]
        tol_override: Vec<String>,
    },
    /// Check the sign conditions and fading memory of the config's kernel.
    CheckKernel { config: PathBuf },
    /// Print version information.
    Version,
}

fn load(path: &Path) -> Result<ExperimentConfig, i32> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", path.display());
            return Err(exit::CONFIG_ERROR);
        }
    };
    parse_config(&text).map_err(|e| {
        eprint!("{}: {e}", path.display());
        exit::CONFIG_ERROR
    })
}

fn init_threads(flag: Option<usize>) -> Result<(), i32> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("MEMVISCO_THREADS") {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) => Some(n),
                Err(_) => {
                    eprintln!("MEMVISCO_THREADS must be a positive integer (got `{v}`)");
                    return Err(exit::CONFIG_ERROR);
                }
            },
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            eprintln!("thread count must be >= 1");
            return Err(exit::CONFIG_ERROR);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot start thread pool: {e}");
            return Err(exit::CONFIG_ERROR);
        }
    }
    Ok(())
}

fn run_cmd(config: &Path, out: Option<PathBuf>, threads: Option<usize>, overrides: &[String]) -> Result<i32, i32> {
    let mut cfg = load(config)?;
    cfg.tolerances.apply_overrides(overrides).map_err(|e| {
        eprint!("{e}");
        exit::CONFIG_ERROR
    })?;
    init_threads(threads)?;
    let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
    let outcome = run_experiment(&cfg, &dir).map_err(|e| {
        eprintln!("cannot write artifacts to {}: {e}", dir.display());
        exit::SOLVER_ABORT
    })?;
    for v in &outcome.verdicts {
        println!(
            "{} {}: {:e} (tolerance {:e}) {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.value,
            v.tolerance,
            v.detail
        );
    }
    if let Some(a) = &outcome.abort {
        eprintln!("aborted: {a}");
    }
    println!("artifacts in {}", dir.display());
    Ok(outcome.exit_code)
}

fn check_kernel(config: &Path) -> Result<i32, i32> {
    let cfg = load(config)?;
    let a = &cfg.admissibility;
    let report = match cfg.kernel.check_admissibility(a.horizon, a.samples) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return Ok(exit::SOLVER_ABORT);
        }
    };
    println!("kernel: {}", serde_json::to_string(cfg.kernel.family()).unwrap_or_default());
    println!(
        "regime: {}",
        if report.finite_at_zero { "classical (finite G(0))" } else { "singular" }
    );
    println!("G(inf) = {:e}", report.g_infinity);
    println!("G > 0:   {}", report.g_positive);
    println!("G' <= 0: {}", report.g_dot_nonpositive);
    println!("G'' >= 0: {}", report.g_ddot_nonnegative);
    if let Some((c, t)) = report.first_violation {
        println!("first violation: {c:?} at t = {t:e}");
    }
    match cfg.kernel.check_fading_memory(a.fading_bound, a.fading_tol) {
        Ok(shift) => println!("fading memory: tail below {:e} beyond shift {shift:e}", a.fading_tol),
        Err(e) => println!("fading memory: {e}"),
    }
    Ok(if report.sign_conditions_hold() {
        exit::PASS
    } else {
        exit::DIAGNOSTIC_FAIL
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            config,
            out,
            threads,
            tol_override,
        } => run_cmd(&config, out, threads, &tol_override),
        Command::CheckKernel { config } => check_kernel(&config),
        Command::Version => {
            println!("memvisco {} (core {})", env!("CARGO_PKG_VERSION"), memvisco_core::VERSION);
            Ok(exit::PASS)
        }
    };
    ExitCode::from(code.unwrap_or_else(|c| c) as u8)
}
