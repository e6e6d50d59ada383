//! Experiment configuration: a TOML document read key by key so that every
//! problem in a file is reported at once, and unknown keys come with the
//! closest valid spelling.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use memvisco_core::kernel::{Family, PronyTerm};
use memvisco_core::solver::StressForm;
use memvisco_core::{FieldExpr, Forcing, Formulation, Grid, KernelSpec, TimeProfile};
use serde::Serialize;
use toml::{Table, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SingleRun,
    EpsSequence,
    Admissibility,
    StressTest,
}

impl Mode {
    const NAMES: [&'static str; 4] = ["single_run", "eps_sequence", "admissibility", "stress_test"];

    fn parse(s: &str) -> Option<Mode> {
        Some(match s {
            "single_run" => Mode::SingleRun,
            "eps_sequence" => Mode::EpsSequence,
            "admissibility" => Mode::Admissibility,
            "stress_test" => Mode::StressTest,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeStep {
    Fixed(f64),
    /// Largest stable step for this CFL number that divides `T` evenly.
    Cfl(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeConfig {
    pub t_final: f64,
    pub step: TimeStep,
    pub cfl_limit: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    None,
    /// `sin(k pi x / L) cos(k pi sqrt(g0) t / L)` for a constant kernel.
    StandingWave,
    /// `u*(x, t) = S(x) (1 + t^2)` with the matching forcing.
    Manufactured,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DataConfig {
    pub u0: FieldExpr,
    pub u1: FieldExpr,
    pub forcing: Forcing,
    pub reference: Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsConfig {
    pub eps0: f64,
    pub ratio: f64,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrainKind {
    /// `E = amplitude` for `t >= 0`, zero before.
    Step,
    /// `E = amplitude * t` for `t >= 0`, zero before.
    Ramp,
    /// `E = amplitude` for all times.
    ConstantForever,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StressConfig {
    pub strain: StrainKind,
    pub amplitude: f64,
    pub times: Vec<f64>,
    pub dt: f64,
    pub form: StressForm,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdmissibilityConfig {
    pub horizon: f64,
    pub samples: usize,
    pub fading_bound: f64,
    pub fading_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsConfig {
    pub energy_ledger: bool,
    pub energy_bound: bool,
    /// Only meaningful without forcing; ignored otherwise.
    pub energy_decay: bool,
    pub weak_residual: bool,
    pub convergence_lemma: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub snapshot_stride: usize,
    pub trajectory: bool,
}

/// Pass/fail thresholds. Every field can be overridden from the command line.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    /// Max-norm error against the analytic reference.
    pub reference_error: f64,
    /// Factor on the drift measured by the memoryless calibration run.
    pub decay_safety: f64,
    /// Largest admissible energy / Gronwall-bound ratio.
    pub bound_ratio: f64,
    /// Largest admissible `|weak residual|`.
    pub weak_residual: f64,
    /// Largest admissible last distance of an epsilon sequence.
    pub cauchy: f64,
    /// Absolute stress error against the closed form.
    pub stress: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            reference_error: 5e-3,
            decay_safety: 2.0,
            bound_ratio: 1.0,
            weak_residual: 1e-2,
            cauchy: 5e-2,
            stress: 1e-6,
        }
    }
}

impl Tolerances {
    pub const KEYS: [&'static str; 6] = [
        "reference_error",
        "decay_safety",
        "bound_ratio",
        "weak_residual",
        "cauchy",
        "stress",
    ];

    fn slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "reference_error" => &mut self.reference_error,
            "decay_safety" => &mut self.decay_safety,
            "bound_ratio" => &mut self.bound_ratio,
            "weak_residual" => &mut self.weak_residual,
            "cauchy" => &mut self.cauchy,
            "stress" => &mut self.stress,
            _ => return None,
        })
    }

    /// Applies `KEY=VAL` overrides, collecting every malformed one.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigErrors> {
        let mut errors = Vec::new();
        for o in overrides {
            let Some((key, val)) = o.split_once('=') else {
                errors.push(format!("tolerance override `{o}` is not of the form KEY=VAL"));
                continue;
            };
            let key = key.trim();
            let parsed: Result<f64, _> = val.trim().parse();
            match (self.slot(key), parsed) {
                (None, _) => errors.push(unknown_key("tolerances", key, &Self::KEYS)),
                (Some(_), Err(_)) => errors.push(format!("tolerance override `{key}`: `{val}` is not a number")),
                (Some(_), Ok(v)) if !(v.is_finite() && v >= 0.0) => {
                    errors.push(format!("tolerance override `{key}` must be finite and >= 0 (got {v})"))
                }
                (Some(slot), Ok(v)) => *slot = v,
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(errors))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub kernel: KernelSpec,
    pub grid: Option<Grid>,
    pub time: Option<TimeConfig>,
    pub eps: f64,
    pub formulation: Formulation,
    pub memory_window: Option<usize>,
    pub data: DataConfig,
    pub eps_sequence: Option<EpsConfig>,
    pub stress: Option<StressConfig>,
    pub admissibility: AdmissibilityConfig,
    pub diagnostics: DiagnosticsConfig,
    pub output: OutputConfig,
    pub tolerances: Tolerances,
}

/// Every problem found in a configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

fn unknown_key(section: &str, key: &str, valid: &[&str]) -> String {
    let best = valid
        .iter()
        .map(|v| (strsim::jaro_winkler(key, v), *v))
        .max_by(|a, b| a.0.total_cmp(&b.0));
    match best {
        Some((score, name)) if score > 0.7 => {
            format!("[{section}] unknown key `{key}`; did you mean `{name}`?")
        }
        _ => format!("[{section}] unknown key `{key}` (valid keys: {})", valid.join(", ")),
    }
}

/// One table plus the keys the parser asked for, so leftovers can be flagged.
struct Section<'a> {
    name: String,
    table: &'a Table,
    asked: Vec<&'static str>,
}

impl<'a> Section<'a> {
    fn new(name: impl Into<String>, table: &'a Table) -> Self {
        Section {
            name: name.into(),
            table,
            asked: Vec::new(),
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.asked.push(key);
        self.table.get(key)
    }

    fn f64(&mut self, errs: &mut Vec<String>, key: &'static str) -> Option<f64> {
        let name = self.name.clone();
        match self.raw(key)? {
            Value::Float(x) if x.is_finite() => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            other => {
                errs.push(format!("[{name}] `{key}` must be a finite number (got {other})"));
                None
            }
        }
    }

    fn f64_or(&mut self, errs: &mut Vec<String>, key: &'static str, default: f64) -> f64 {
        self.f64(errs, key).unwrap_or(default)
    }

    fn req_f64(&mut self, errs: &mut Vec<String>, key: &'static str) -> Option<f64> {
        let present = self.table.contains_key(key);
        let v = self.f64(errs, key);
        if !present {
            errs.push(format!("[{}] missing required key `{key}`", self.name));
        }
        v
    }

    fn usize(&mut self, errs: &mut Vec<String>, key: &'static str) -> Option<usize> {
        let name = self.name.clone();
        match self.raw(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            other => {
                errs.push(format!("[{name}] `{key}` must be a nonnegative integer (got {other})"));
                None
            }
        }
    }

    fn bool_or(&mut self, errs: &mut Vec<String>, key: &'static str, default: bool) -> bool {
        let name = self.name.clone();
        match self.raw(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(other) => {
                errs.push(format!("[{name}] `{key}` must be true or false (got {other})"));
                default
            }
        }
    }

    fn str(&mut self, errs: &mut Vec<String>, key: &'static str) -> Option<&'a str> {
        let name = self.name.clone();
        match self.raw(key)? {
            Value::String(s) => Some(s.as_str()),
            other => {
                errs.push(format!("[{name}] `{key}` must be a string (got {other})"));
                None
            }
        }
    }

    fn table(&mut self, errs: &mut Vec<String>, key: &'static str) -> Option<&'a Table> {
        let name = self.name.clone();
        match self.raw(key)? {
            Value::Table(t) => Some(t),
            other => {
                errs.push(format!("[{name}] `{key}` must be a table (got {other})"));
                None
            }
        }
    }

    fn array(&mut self, errs: &mut Vec<String>, key: &'static str) -> Option<&'a Vec<Value>> {
        let name = self.name.clone();
        match self.raw(key)? {
            Value::Array(a) => Some(a),
            other => {
                errs.push(format!("[{name}] `{key}` must be an array (got {other})"));
                None
            }
        }
    }

    fn f64_array(&mut self, errs: &mut Vec<String>, key: &'static str) -> Option<Vec<f64>> {
        let name = self.name.clone();
        let arr = self.array(errs, key)?;
        let mut out = Vec::with_capacity(arr.len());
        for v in arr {
            match v {
                Value::Float(x) if x.is_finite() => out.push(*x),
                Value::Integer(i) => out.push(*i as f64),
                other => {
                    errs.push(format!("[{name}] `{key}` entries must be finite numbers (got {other})"));
                    return None;
                }
            }
        }
        Some(out)
    }

    /// Flags every key of the table that was never asked for.
    fn finish(self, errs: &mut Vec<String>) {
        for key in self.table.keys() {
            if !self.asked.contains(&key.as_str()) {
                errs.push(unknown_key(&self.name, key, &self.asked));
            }
        }
    }
}

const TOP_LEVEL: [&str; 12] = [
    "mode",
    "kernel",
    "grid",
    "time",
    "problem",
    "data",
    "eps",
    "stress",
    "admissibility",
    "diagnostics",
    "output",
    "tolerances",
];

/// Parses and validates a configuration, reporting every violation found.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigErrors(vec![format!("syntax error: {}", e.message().trim())]))?;
    let mut errs = Vec::new();
    for key in root.keys() {
        if !TOP_LEVEL.contains(&key.as_str()) {
            errs.push(unknown_key("top level", key, &TOP_LEVEL));
        }
    }
    let empty = Table::new();
    let sub = |name: &str, errs: &mut Vec<String>| -> Option<&Table> {
        match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(other) => {
                errs.push(format!("`{name}` must be a table (got {other})"));
                None
            }
        }
    };

    let mode = match root.get("mode") {
        Some(Value::String(s)) => Mode::parse(s).or_else(|| {
            errs.push(format!(
                "unknown mode `{s}`{}",
                suggestion(s, &Mode::NAMES).map(|n| format!("; did you mean `{n}`?")).unwrap_or_default()
            ));
            None
        }),
        Some(other) => {
            errs.push(format!("`mode` must be a string (got {other})"));
            None
        }
        None => Some(Mode::SingleRun),
    };

    let kernel = match sub("kernel", &mut errs) {
        Some(t) => parse_kernel("kernel", t, &mut errs),
        None => {
            errs.push("missing [kernel] block".to_string());
            None
        }
    };

    let needs_run = matches!(mode, Some(Mode::SingleRun) | Some(Mode::EpsSequence));
    let grid = match sub("grid", &mut errs) {
        Some(t) => parse_grid(t, &mut errs),
        None => {
            if needs_run {
                errs.push("missing [grid] block".to_string());
            }
            None
        }
    };

    let time = match sub("time", &mut errs) {
        Some(t) => parse_time(t, &mut errs),
        None => {
            if needs_run {
                errs.push("missing [time] block".to_string());
            }
            None
        }
    };

    let mut problem = Section::new("problem", sub("problem", &mut errs).unwrap_or(&empty));
    let eps = problem.f64_or(&mut errs, "eps", 0.05);
    if !(eps >= 0.0) {
        errs.push(format!("[problem] `eps` must be >= 0 (got {eps})"));
    }
    let formulation = match problem.str(&mut errs, "formulation") {
        None | Some("integro_differential") => Formulation::IntegroDifferential,
        Some("integral_volterra") => Formulation::IntegralVolterra,
        Some(other) => {
            errs.push(format!(
                "[problem] unknown formulation `{other}` (expected integro_differential or integral_volterra)"
            ));
            Formulation::IntegroDifferential
        }
    };
    let memory_window = problem.usize(&mut errs, "memory_window");
    if memory_window == Some(0) {
        errs.push("[problem] `memory_window` must be >= 1 step".to_string());
    }
    problem.finish(&mut errs);

    let data = parse_data(sub("data", &mut errs).unwrap_or(&empty), grid.as_ref(), &mut errs);

    let eps_sequence = match sub("eps", &mut errs) {
        Some(t) => parse_eps(t, &mut errs),
        None => {
            if mode == Some(Mode::EpsSequence) {
                errs.push("mode eps_sequence requires an [eps] block (eps0, ratio, count)".to_string());
            }
            None
        }
    };

    let stress = match sub("stress", &mut errs) {
        Some(t) => parse_stress(t, &mut errs),
        None => {
            if mode == Some(Mode::StressTest) {
                errs.push("mode stress_test requires a [stress] block".to_string());
            }
            None
        }
    };

    let mut adm = Section::new("admissibility", sub("admissibility", &mut errs).unwrap_or(&empty));
    let admissibility = AdmissibilityConfig {
        horizon: adm.f64_or(&mut errs, "horizon", 10.0),
        samples: adm.usize(&mut errs, "samples").unwrap_or(400),
        fading_bound: adm.f64_or(&mut errs, "fading_bound", 1.0),
        fading_tol: adm.f64_or(&mut errs, "fading_tol", 1e-3),
    };
    adm.finish(&mut errs);
    if !(admissibility.horizon > 0.0) {
        errs.push("[admissibility] `horizon` must be > 0".to_string());
    }
    if admissibility.samples < 2 {
        errs.push("[admissibility] `samples` must be >= 2".to_string());
    }
    if !(admissibility.fading_tol > 0.0) || admissibility.fading_bound < 0.0 {
        errs.push("[admissibility] `fading_tol` must be > 0 and `fading_bound` >= 0".to_string());
    }

    let mut diag = Section::new("diagnostics", sub("diagnostics", &mut errs).unwrap_or(&empty));
    let diagnostics = DiagnosticsConfig {
        energy_ledger: diag.bool_or(&mut errs, "energy_ledger", true),
        energy_bound: diag.bool_or(&mut errs, "energy_bound", true),
        energy_decay: diag.bool_or(&mut errs, "energy_decay", true),
        weak_residual: diag.bool_or(&mut errs, "weak_residual", true),
        convergence_lemma: diag.bool_or(&mut errs, "convergence_lemma", true),
    };
    diag.finish(&mut errs);

    let mut out = Section::new("output", sub("output", &mut errs).unwrap_or(&empty));
    let output = OutputConfig {
        dir: PathBuf::from(out.str(&mut errs, "dir").unwrap_or("memvisco-out")),
        snapshot_stride: out.usize(&mut errs, "snapshot_stride").unwrap_or(10).max(1),
        trajectory: out.bool_or(&mut errs, "trajectory", true),
    };
    match out.str(&mut errs, "export_format") {
        None | Some("csv") => {}
        Some(other) => errs.push(format!("[output] export_format `{other}` is not supported (only `csv`)")),
    }
    out.finish(&mut errs);

    let mut tol_section = Section::new("tolerances", sub("tolerances", &mut errs).unwrap_or(&empty));
    let mut tolerances = Tolerances::default();
    for key in Tolerances::KEYS {
        if let Some(v) = tol_section.f64(&mut errs, key) {
            if v < 0.0 {
                errs.push(format!("[tolerances] `{key}` must be >= 0 (got {v})"));
            }
            *tolerances.slot(key).expect("listed key") = v;
        }
    }
    tol_section.finish(&mut errs);

    // Cross-block checks.
    if let (Some(k), Some(t)) = (&kernel, &time) {
        if let TimeStep::Cfl(_) = t.step {
            let smallest = eps_sequence
                .as_ref()
                .filter(|_| mode == Some(Mode::EpsSequence))
                .map(|e| e.eps0 * e.ratio.powi(e.count as i32))
                .unwrap_or(eps);
            if smallest == 0.0 && k.is_singular() {
                errs.push("[time] `cfl` cannot size the step of a singular kernel at eps = 0; give `dt`".to_string());
            }
        }
    }
    if let (Some(k), Some(s)) = (&kernel, &stress) {
        if k.is_singular() && s.form == StressForm::Relaxation && mode == Some(Mode::StressTest) {
            errs.push("[stress] form `relaxation` needs a finite G(0); use `integrated` for a singular kernel".to_string());
        }
    }
    if let (Some(k), Some(Mode::SingleRun)) = (&kernel, mode) {
        if formulation == Formulation::IntegroDifferential && eps == 0.0 && k.is_singular() {
            errs.push("[problem] the integro-differential form needs eps > 0 for a singular kernel".to_string());
        }
        if data.reference == Reference::StandingWave && !k.is_elastic() {
            errs.push("[data] reference `standing_wave` is only exact for a constant kernel".to_string());
        }
    }

    if errs.is_empty() {
        Ok(ExperimentConfig {
            mode: mode.expect("checked"),
            kernel: kernel.expect("checked"),
            grid,
            time,
            eps,
            formulation,
            memory_window,
            data,
            eps_sequence,
            stress,
            admissibility,
            diagnostics,
            output,
            tolerances,
        })
    } else {
        Err(ConfigErrors(errs))
    }
}

fn suggestion<'a>(key: &str, valid: &[&'a str]) -> Option<&'a str> {
    valid
        .iter()
        .map(|v| (strsim::jaro_winkler(key, v), *v))
        .filter(|(s, _)| *s > 0.7)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, v)| v)
}

const FAMILIES: [&str; 4] = ["constant", "prony", "powerlaw", "sum"];

fn parse_family(path: &str, t: &Table, errs: &mut Vec<String>) -> Option<Family> {
    let mut s = Section::new(path, t);
    let family = s.str(errs, "family");
    let out = match family {
        None => {
            errs.push(format!("[{path}] missing `family` (one of {})", FAMILIES.join(", ")));
            None
        }
        Some("constant") => s.req_f64(errs, "g0").map(|g0| Family::Constant { g0 }),
        Some("prony") => {
            let g_inf = s.f64_or(errs, "g_inf", 0.0);
            let mut terms = Vec::new();
            if let Some(arr) = s.array(errs, "terms") {
                for (i, v) in arr.iter().enumerate() {
                    match v.as_array().map(|a| a.iter().map(number).collect::<Vec<_>>()) {
                        Some(pair) if pair.len() == 2 && pair.iter().all(Option::is_some) => terms.push(PronyTerm {
                            weight: pair[0].unwrap(),
                            tau: pair[1].unwrap(),
                        }),
                        _ => errs.push(format!("[{path}] terms[{i}] must be a [weight, tau] pair of numbers")),
                    }
                }
            }
            Some(Family::Prony { g_inf, terms })
        }
        Some("powerlaw") => {
            let c = s.req_f64(errs, "c");
            let alpha = s.req_f64(errs, "alpha");
            match (c, alpha) {
                (Some(c), Some(alpha)) => Some(Family::PowerLaw { c, alpha }),
                _ => None,
            }
        }
        Some("sum") => {
            let mut parts = Vec::new();
            if let Some(arr) = s.array(errs, "parts") {
                for (i, v) in arr.iter().enumerate() {
                    match v {
                        Value::Table(pt) => {
                            if let Some(k) = parse_kernel(&format!("{path}.parts[{i}]"), pt, errs) {
                                parts.push(k);
                            }
                        }
                        _ => errs.push(format!("[{path}] parts[{i}] must be a table")),
                    }
                }
            } else {
                errs.push(format!("[{path}] family `sum` needs a `parts` array"));
            }
            Some(Family::Sum { parts })
        }
        Some(other) => {
            errs.push(format!(
                "[{path}] unknown family `{other}`{}",
                suggestion(other, &FAMILIES).map(|n| format!("; did you mean `{n}`?")).unwrap_or_default()
            ));
            None
        }
    };
    s.finish(errs);
    out
}

fn parse_kernel(path: &str, t: &Table, errs: &mut Vec<String>) -> Option<KernelSpec> {
    let family = parse_family(path, t, errs)?;
    match KernelSpec::new(family) {
        Ok(k) => Some(k),
        Err(e) => {
            errs.push(format!("[{path}] {e}"));
            None
        }
    }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) if x.is_finite() => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn parse_grid(t: &Table, errs: &mut Vec<String>) -> Option<Grid> {
    let mut s = Section::new("grid", t);
    let dim = s.usize(errs, "dim").unwrap_or(1);
    let n = s.usize(errs, "n");
    if !t.contains_key("n") {
        errs.push("[grid] missing required key `n` (interior points per axis)".to_string());
    }
    let extent = s.f64_or(errs, "extent", 1.0);
    s.finish(errs);
    let n = n?;
    match Grid::new(dim, [extent; 3], [n; 3]) {
        Ok(g) => Some(g),
        Err(e) => {
            errs.push(format!("[grid] {e}"));
            None
        }
    }
}

fn parse_time(t: &Table, errs: &mut Vec<String>) -> Option<TimeConfig> {
    let mut s = Section::new("time", t);
    let t_final = s.req_f64(errs, "t_final");
    let dt = s.f64(errs, "dt");
    let cfl = s.f64(errs, "cfl");
    let cfl_limit = s.f64_or(errs, "cfl_limit", 1.0);
    s.finish(errs);
    if !(cfl_limit > 0.0 && cfl_limit <= 1.0) {
        errs.push(format!("[time] `cfl_limit` must lie in (0, 1] (got {cfl_limit})"));
    }
    let step = match (dt, cfl) {
        (Some(_), Some(_)) => {
            errs.push("[time] give either `dt` or `cfl`, not both".to_string());
            return None;
        }
        (None, None) => {
            errs.push("[time] one of `dt` or `cfl` is required".to_string());
            return None;
        }
        (Some(dt), None) => {
            if !(dt > 0.0) {
                errs.push(format!("[time] `dt` must be > 0 (got {dt})"));
            }
            TimeStep::Fixed(dt)
        }
        (None, Some(c)) => {
            if !(c > 0.0 && c <= cfl_limit) {
                errs.push(format!("[time] `cfl` must lie in (0, cfl_limit = {cfl_limit}] (got {c})"));
            }
            TimeStep::Cfl(c)
        }
    };
    let t_final = t_final?;
    if !(t_final > 0.0) {
        errs.push(format!("[time] `t_final` must be > 0 (got {t_final})"));
    }
    if let TimeStep::Fixed(dt) = step {
        let r = t_final / dt;
        if dt > 0.0 && (r - r.round()).abs() > 1e-9 * r.max(1.0) {
            errs.push(format!("[time] t_final / dt must be an integer (got {r})"));
        }
    }
    Some(TimeConfig {
        t_final,
        step,
        cfl_limit,
    })
}

const EXPRESSIONS: [&str; 5] = ["zero", "constant", "sin_pi_product", "parabola", "bump"];
const PROFILES: [&str; 3] = ["constant", "sine", "polynomial"];

fn parse_expr(path: &str, v: &Value, errs: &mut Vec<String>) -> Option<FieldExpr> {
    let Value::Table(t) = v else {
        errs.push(format!("[{path}] must be an inline table with a `kind`"));
        return None;
    };
    let mut s = Section::new(path, t);
    let kind = s.str(errs, "kind");
    let out = match kind {
        None => {
            errs.push(format!("[{path}] missing `kind` (one of {})", EXPRESSIONS.join(", ")));
            None
        }
        Some("zero") => Some(FieldExpr::Zero),
        Some("constant") => s.req_f64(errs, "value").map(|value| FieldExpr::Constant { value }),
        Some("sin_pi_product") => {
            let amplitude = s.f64_or(errs, "amplitude", 1.0);
            let modes = modes(&mut s, errs);
            Some(FieldExpr::SinPiProduct { amplitude, modes })
        }
        Some("parabola") => Some(FieldExpr::Parabola {
            amplitude: s.f64_or(errs, "amplitude", 1.0),
        }),
        Some("bump") => {
            let amplitude = s.f64_or(errs, "amplitude", 1.0);
            let radius = s.req_f64(errs, "radius");
            let center = s.f64_array(errs, "center").unwrap_or_default();
            if !(1..=3).contains(&center.len()) {
                errs.push(format!("[{path}] `center` needs 1 to 3 coordinates"));
            }
            let mut c = [0.5; 3];
            for (i, x) in center.iter().take(3).enumerate() {
                c[i] = *x;
            }
            radius.map(|radius| FieldExpr::Bump {
                amplitude,
                center: c,
                radius,
            })
        }
        Some(other) => {
            errs.push(format!(
                "[{path}] unknown expression `{other}`{}",
                suggestion(other, &EXPRESSIONS).map(|n| format!("; did you mean `{n}`?")).unwrap_or_default()
            ));
            None
        }
    };
    s.finish(errs);
    out
}

fn modes(s: &mut Section<'_>, errs: &mut Vec<String>) -> [u32; 3] {
    let mut m = [1u32; 3];
    if let Some(v) = s.f64_array(errs, "modes") {
        if v.is_empty() || v.len() > 3 || v.iter().any(|x| *x < 1.0 || x.fract() != 0.0) {
            errs.push(format!("[{}] `modes` must hold 1 to 3 positive integers", s.name));
        } else {
            for (i, x) in v.iter().enumerate() {
                m[i] = *x as u32;
            }
        }
    }
    m
}

fn parse_profile(path: &str, v: &Value, errs: &mut Vec<String>) -> Option<TimeProfile> {
    let Value::Table(t) = v else {
        errs.push(format!("[{path}] must be an inline table with a `kind`"));
        return None;
    };
    let mut s = Section::new(path, t);
    let out = match s.str(errs, "kind") {
        None => {
            errs.push(format!("[{path}] missing `kind` (one of {})", PROFILES.join(", ")));
            None
        }
        Some("constant") => s.req_f64(errs, "value").map(|value| TimeProfile::Constant { value }),
        Some("sine") => {
            let omega = s.req_f64(errs, "omega");
            let phase = s.f64_or(errs, "phase", 0.0);
            omega.map(|omega| TimeProfile::Sine { omega, phase })
        }
        Some("polynomial") => {
            let coeffs = s.f64_array(errs, "coeffs");
            if coeffs.is_none() {
                errs.push(format!("[{path}] polynomial needs `coeffs`"));
            }
            coeffs.map(|coeffs| TimeProfile::Polynomial { coeffs })
        }
        Some(other) => {
            errs.push(format!(
                "[{path}] unknown time profile `{other}`{}",
                suggestion(other, &PROFILES).map(|n| format!("; did you mean `{n}`?")).unwrap_or_default()
            ));
            None
        }
    };
    s.finish(errs);
    out
}

fn parse_data(t: &Table, grid: Option<&Grid>, errs: &mut Vec<String>) -> DataConfig {
    let mut s = Section::new("data", t);
    let mut u0 = s.raw("u0").and_then(|v| parse_expr("data.u0", v, errs)).unwrap_or(FieldExpr::Zero);
    let mut u1 = s.raw("u1").and_then(|v| parse_expr("data.u1", v, errs)).unwrap_or(FieldExpr::Zero);
    let mut forcing = Forcing::zero();
    if let Some(arr) = s.array(errs, "forcing") {
        for (i, term) in arr.iter().enumerate() {
            let path = format!("data.forcing[{i}]");
            let Value::Table(tt) = term else {
                errs.push(format!("[{path}] must be a table with `space` and `time`"));
                continue;
            };
            let mut ts = Section::new(path.clone(), tt);
            let space = ts.raw("space").and_then(|v| parse_expr(&format!("{path}.space"), v, errs));
            let time = ts.raw("time").and_then(|v| parse_profile(&format!("{path}.time"), v, errs));
            if !tt.contains_key("space") || !tt.contains_key("time") {
                errs.push(format!("[{path}] needs both `space` and `time`"));
            }
            ts.finish(errs);
            if let (Some(space), Some(time)) = (space, time) {
                forcing = forcing.plus(Forcing::separable(space, time));
            }
        }
    }
    let mut reference = match s.str(errs, "reference") {
        None | Some("none") => Reference::None,
        Some("standing_wave") => Reference::StandingWave,
        Some("manufactured") => Reference::Manufactured,
        Some(other) => {
            errs.push(format!(
                "[data] unknown reference `{other}` (expected none, standing_wave or manufactured)"
            ));
            Reference::None
        }
    };
    if let Some(m) = s.table(errs, "manufactured") {
        let mut ms = Section::new("data.manufactured", m);
        let amplitude = ms.f64_or(errs, "amplitude", 1.0);
        let modes = modes(&mut ms, errs);
        ms.finish(errs);
        if t.contains_key("u0") || t.contains_key("u1") || t.contains_key("forcing") {
            errs.push("[data] `manufactured` fixes u0, u1 and forcing; remove them".to_string());
        }
        if let Some(g) = grid {
            u0 = FieldExpr::sin_mode(amplitude, modes);
            u1 = FieldExpr::Zero;
            forcing = Forcing::manufactured(g, amplitude, modes);
        }
        if reference == Reference::None {
            reference = Reference::Manufactured;
        }
    } else if reference == Reference::Manufactured {
        errs.push("[data] reference `manufactured` needs a [data.manufactured] table".to_string());
    }
    if reference == Reference::StandingWave
        && (!matches!(u0, FieldExpr::SinPiProduct { .. }) || !u1.is_zero() || !forcing.is_zero())
    {
        errs.push("[data] reference `standing_wave` needs a sin_pi_product u0, zero u1 and no forcing".to_string());
    }
    s.finish(errs);
    DataConfig {
        u0,
        u1,
        forcing,
        reference,
    }
}

fn parse_eps(t: &Table, errs: &mut Vec<String>) -> Option<EpsConfig> {
    let mut s = Section::new("eps", t);
    let eps0 = s.f64_or(errs, "eps0", 0.1);
    let ratio = s.f64_or(errs, "ratio", 0.5);
    let count = s.usize(errs, "count").unwrap_or(6);
    s.finish(errs);
    if !(eps0 > 0.0) {
        errs.push(format!("[eps] `eps0` must be > 0 (got {eps0})"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        errs.push(format!("[eps] `ratio` must lie in (0, 1) (got {ratio})"));
    }
    if count < 2 {
        errs.push(format!("[eps] `count` must be >= 2 so the report has 3 runs (got {count})"));
    }
    Some(EpsConfig { eps0, ratio, count })
}

fn parse_stress(t: &Table, errs: &mut Vec<String>) -> Option<StressConfig> {
    let mut s = Section::new("stress", t);
    let strain = match s.str(errs, "strain") {
        None | Some("step") => StrainKind::Step,
        Some("ramp") => StrainKind::Ramp,
        Some("constant_forever") => StrainKind::ConstantForever,
        Some(other) => {
            errs.push(format!(
                "[stress] unknown strain `{other}` (expected step, ramp or constant_forever)"
            ));
            StrainKind::Step
        }
    };
    let amplitude = s.f64_or(errs, "amplitude", 1.0);
    let times = s.f64_array(errs, "times").unwrap_or_else(|| vec![0.5, 1.0, 2.0, 5.0]);
    let dt = s.f64_or(errs, "dt", 0.01);
    let form = match s.str(errs, "form") {
        None | Some("relaxation") => StressForm::Relaxation,
        Some("integrated") => StressForm::Integrated,
        Some(other) => {
            errs.push(format!("[stress] unknown form `{other}` (expected relaxation or integrated)"));
            StressForm::Relaxation
        }
    };
    s.finish(errs);
    if !(dt > 0.0) {
        errs.push(format!("[stress] `dt` must be > 0 (got {dt})"));
    }
    if times.is_empty() || times.iter().any(|t| !(*t > 0.0)) {
        errs.push("[stress] `times` must be a nonempty list of positive times".to_string());
    }
    Some(StressConfig {
        strain,
        amplitude,
        times,
        dt,
        form,
    })
}

/// Resolved configuration values as a flat, ordered map for the manifest.
pub fn config_echo(cfg: &ExperimentConfig) -> BTreeMap<String, serde_json::Value> {
    let v = serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null);
    let mut out = BTreeMap::new();
    if let serde_json::Value::Object(m) = v {
        for (k, v) in m {
            out.insert(k, v);
        }
    }
    out
}
