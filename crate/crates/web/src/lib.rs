//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations are exposed: sampling a kernel and its integral, running
//! a 1D memory wave, and measuring how fast a sequence of regularized
//! solutions settles as `eps` shrinks. The page draws everything itself;
//! this side only returns flat `f64` arrays.

use memvisco_core::convergence::{cauchy_report, run_eps_sequence};
use memvisco_core::diagnostics::energy_ledger;
use memvisco_core::solver::{fitted_dt, max_stable_dt, run};
use memvisco_core::{Family, FieldExpr, Forcing, Grid, KernelSpec, ProblemSpec};
use wasm_bindgen::prelude::*;

fn kernel_from_json(json: &str) -> Result<KernelSpec, String> {
    let family: Family = serde_json::from_str(json).map_err(|e| format!("kernel JSON: {e}"))?;
    KernelSpec::new(family).map_err(|e| e.to_string())
}

fn standing_wave(kernel: KernelSpec, eps: f64, n: usize, t_final: f64, eps_for_dt: f64) -> Result<ProblemSpec, String> {
    if !(2..=2000).contains(&n) {
        return Err(format!("grid points must lie in 2..=2000 (got {n})"));
    }
    if !(t_final > 0.0 && t_final <= 20.0) {
        return Err(format!("final time must lie in (0, 20] (got {t_final})"));
    }
    let grid = Grid::line(1.0, n).map_err(|e| e.to_string())?;
    let max_dt = max_stable_dt(&kernel, eps_for_dt, &grid, 0.5).map_err(|e| e.to_string())?;
    Ok(ProblemSpec::new(kernel, eps, grid, t_final, fitted_dt(t_final, max_dt)).with_data(
        FieldExpr::sin_mode(1.0, [1, 1, 1]),
        FieldExpr::Zero,
        Forcing::zero(),
    ))
}

/// `G(t)` and `K(t) = int_0^t G` on a log-spaced grid in `[t_min, t_max]`.
#[wasm_bindgen]
pub struct KernelCurves {
    t: Vec<f64>,
    g: Vec<f64>,
    k: Vec<f64>,
    singular: bool,
}

#[wasm_bindgen]
impl KernelCurves {
    #[wasm_bindgen(constructor)]
    pub fn new(kernel_json: &str, t_min: f64, t_max: f64, samples: usize) -> Result<KernelCurves, JsError> {
        kernel_curves(kernel_json, t_min, t_max, samples).map_err(|e| JsError::new(&e))
    }

    pub fn t(&self) -> Vec<f64> {
        self.t.clone()
    }

    pub fn g(&self) -> Vec<f64> {
        self.g.clone()
    }

    pub fn k(&self) -> Vec<f64> {
        self.k.clone()
    }

    pub fn singular(&self) -> bool {
        self.singular
    }
}

pub fn kernel_curves(kernel_json: &str, t_min: f64, t_max: f64, samples: usize) -> Result<KernelCurves, String> {
    let kernel = kernel_from_json(kernel_json)?;
    if !(t_min > 0.0 && t_max > t_min) || !(2..=10_000).contains(&samples) {
        return Err("need 0 < t_min < t_max and 2..=10000 samples".into());
    }
    let ratio = (t_max / t_min).ln() / (samples - 1) as f64;
    let t: Vec<f64> = (0..samples).map(|i| t_min * (ratio * i as f64).exp()).collect();
    let mut g = Vec::with_capacity(samples);
    let mut k = Vec::with_capacity(samples);
    for &x in &t {
        g.push(kernel.g(x).map_err(|e| e.to_string())?);
        k.push(kernel.integrated(x).map_err(|e| e.to_string())?);
    }
    Ok(KernelCurves {
        t,
        g,
        k,
        singular: kernel.is_singular(),
    })
}

/// A finished 1D run started from `sin(pi x)` at rest, with its energy
/// ledger, replayed frame by frame by the page.
#[wasm_bindgen]
pub struct MemoryWave {
    x: Vec<f64>,
    times: Vec<f64>,
    levels: Vec<Vec<f64>>,
    stored: Vec<f64>,
    memory: Vec<f64>,
    kinetic: Vec<f64>,
}

#[wasm_bindgen]
impl MemoryWave {
    #[wasm_bindgen(constructor)]
    pub fn new(kernel_json: &str, eps: f64, n: usize, t_final: f64) -> Result<MemoryWave, JsError> {
        memory_wave(kernel_json, eps, n, t_final).map_err(|e| JsError::new(&e))
    }

    pub fn frames(&self) -> usize {
        self.levels.len()
    }

    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }

    pub fn time(&self, frame: usize) -> f64 {
        self.times[frame.min(self.times.len() - 1)]
    }

    /// Displacement at one time level, including the zero boundary values.
    pub fn frame(&self, frame: usize) -> Vec<f64> {
        let u = &self.levels[frame.min(self.levels.len() - 1)];
        let mut out = Vec::with_capacity(u.len() + 2);
        out.push(0.0);
        out.extend_from_slice(u);
        out.push(0.0);
        out
    }

    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    pub fn stored_energy(&self) -> Vec<f64> {
        self.stored.clone()
    }

    pub fn memory_energy(&self) -> Vec<f64> {
        self.memory.clone()
    }

    pub fn kinetic_energy(&self) -> Vec<f64> {
        self.kinetic.clone()
    }
}

pub fn memory_wave(kernel_json: &str, eps: f64, n: usize, t_final: f64) -> Result<MemoryWave, String> {
    let kernel = kernel_from_json(kernel_json)?;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(format!("eps must lie in (0, 1] (got {eps})"));
    }
    let spec = standing_wave(kernel, eps, n, t_final, eps)?;
    if spec.steps() > 20_000 {
        return Err(format!("{} time steps is too many for the browser; raise eps or lower n", spec.steps()));
    }
    let traj = run(&spec).map_err(|e| e.to_string())?;
    let ledger = energy_ledger(&traj).map_err(|e| e.to_string())?;
    let h = spec.grid.spacing(0);
    Ok(MemoryWave {
        x: (0..n + 2).map(|i| i as f64 * h).collect(),
        times: (0..traj.n_levels()).map(|j| traj.time(j)).collect(),
        levels: traj.levels().to_vec(),
        stored: ledger.levels.iter().map(|l| l.stored).collect(),
        memory: ledger.levels.iter().map(|l| l.memory).collect(),
        kinetic: ledger.levels.iter().map(|l| l.kinetic).collect(),
    })
}

/// Distances `d_h` between successive regularized solutions for
/// `eps_h = eps0 * 2^-h`, with the fitted convergence rate.
#[wasm_bindgen]
pub struct EpsStudy {
    eps: Vec<f64>,
    distances: Vec<f64>,
    kernel_sup: Vec<f64>,
    rate: f64,
    monotone: bool,
}

#[wasm_bindgen]
impl EpsStudy {
    #[wasm_bindgen(constructor)]
    pub fn new(kernel_json: &str, eps0: f64, count: usize, n: usize) -> Result<EpsStudy, JsError> {
        eps_study(kernel_json, eps0, count, n).map_err(|e| JsError::new(&e))
    }

    /// `eps_0 .. eps_{count-1}`, one per distance.
    pub fn eps(&self) -> Vec<f64> {
        self.eps.clone()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.distances.clone()
    }

    /// `K(eps_h)`, the supremum of the kernel difference.
    pub fn kernel_sup(&self) -> Vec<f64> {
        self.kernel_sup.clone()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn monotone(&self) -> bool {
        self.monotone
    }
}

pub fn eps_study(kernel_json: &str, eps0: f64, count: usize, n: usize) -> Result<EpsStudy, String> {
    let kernel = kernel_from_json(kernel_json)?;
    if !(eps0 > 0.0 && eps0 <= 1.0) || !(2..=8).contains(&count) {
        return Err("need eps0 in (0, 1] and 2..=8 halvings".into());
    }
    let smallest = eps0 * 0.5f64.powi(count as i32);
    let base = standing_wave(kernel, eps0, n, 1.0, smallest)?;
    let trajs = run_eps_sequence(&base, eps0, 0.5, count).map_err(|e| e.to_string())?;
    let report = cauchy_report(&trajs, f64::INFINITY).map_err(|e| e.to_string())?;
    let m = report.distances.len();
    Ok(EpsStudy {
        eps: report.eps[..m].to_vec(),
        distances: report.distances,
        kernel_sup: report.kernel_sup_bounds[..m].to_vec(),
        rate: report.rate,
        monotone: report.monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const POWER: &str = r#"{"family":"powerlaw","c":1.0,"alpha":0.5}"#;

    #[test]
    fn curves_match_closed_form() {
        let c = kernel_curves(POWER, 1e-3, 10.0, 50).unwrap();
        assert!(c.singular);
        for ((t, g), k) in c.t.iter().zip(&c.g).zip(&c.k) {
            assert!((g - t.powf(-0.5)).abs() < 1e-12 * g);
            assert!((k - 2.0 * t.sqrt()).abs() < 1e-12 * k);
        }
    }

    #[test]
    fn bad_input_is_reported() {
        assert!(kernel_curves(r#"{"family":"powerlaw","c":1.0,"alpha":1.5}"#, 0.1, 1.0, 10).is_err());
        assert!(kernel_curves("{", 0.1, 1.0, 10).is_err());
        assert!(memory_wave(POWER, 0.0, 20, 1.0).is_err());
    }

    #[test]
    fn wave_frames_include_boundary() {
        let w = memory_wave(r#"{"family":"prony","g_inf":0.5,"terms":[[0.5,1.0]]}"#, 0.05, 19, 0.5).unwrap();
        let f = w.frame(0);
        assert_eq!(f.len(), 21);
        assert_eq!((f[0], f[20]), (0.0, 0.0));
        assert_eq!(w.stored.len(), w.frames());
    }

    #[test]
    fn eps_study_is_monotone() {
        let s = eps_study(POWER, 0.1, 4, 29).unwrap();
        assert!(s.monotone);
        assert_eq!(s.distances.len(), 4);
        assert!(s.rate > 0.3 && s.rate < 0.8, "{}", s.rate);
    }
}
