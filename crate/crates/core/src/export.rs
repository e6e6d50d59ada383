//! Deterministic CSV rendering of trajectories and reports.
//!
//! Numbers are written with Rust's shortest round-trip `{:e}` formatting, so
//! equal inputs always produce byte-identical text.

use std::fmt::Write;

use crate::convergence::{ConvergenceReport, LemmaResidual};
use crate::diagnostics::{BoundReport, EnergyLedger, WeakResidual};
use crate::solver::TrajectorySolution;

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Rows `step,t,node,x,y,z,u,u_t` for every `stride`-th level.
pub fn trajectory_csv(traj: &TrajectorySolution, stride: usize) -> String {
    let stride = stride.max(1);
    let grid = traj.grid();
    let mut out = String::from("step,t,node,x,y,z,u,u_t\n");
    let last = traj.n_levels() - 1;
    let mut steps: Vec<usize> = (0..=last).step_by(stride).collect();
    if steps.last() != Some(&last) {
        steps.push(last);
    }
    for j in steps {
        let u = traj.level(j);
        let v = traj.velocity(j);
        let t = num(traj.time(j));
        for i in 0..grid.len() {
            let [x, y, z] = grid.coords(i);
            let _ = writeln!(
                out,
                "{j},{t},{i},{},{},{},{},{}",
                num(x),
                num(y),
                num(z),
                num(u[i]),
                num(v[i])
            );
        }
    }
    out
}

pub fn ledger_csv(ledger: &EnergyLedger) -> String {
    let mut out = String::from(
        "step,t,kinetic,elastic,memory,stored,dissipation_instant,dissipation_history,forcing_power,residual\n",
    );
    for (j, l) in ledger.levels.iter().enumerate() {
        let _ = writeln!(
            out,
            "{j},{},{},{},{},{},{},{},{},{}",
            num(l.t),
            num(l.kinetic),
            num(l.elastic),
            num(l.memory),
            num(l.stored),
            num(l.dissipation_instant),
            num(l.dissipation_history),
            num(l.forcing_power),
            l.residual.map(num).unwrap_or_default()
        );
    }
    out
}

pub fn bound_csv(report: &BoundReport) -> String {
    let mut out = String::from("step,energy,bound,ratio\n");
    for (j, e) in report.energies.iter().enumerate() {
        let ratio = if report.bound > 0.0 { e / report.bound } else { 0.0 };
        let _ = writeln!(out, "{j},{},{},{}", num(*e), num(report.bound), num(ratio));
    }
    out
}

/// Rows `h,eps,d_h,tail_distance,kernel_sup`; `d_h` is empty on the last row.
pub fn convergence_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("h,eps,d_h,tail_distance,kernel_sup\n");
    for (h, eps) in report.eps.iter().enumerate() {
        let d = report.distances.get(h).map(|d| num(*d)).unwrap_or_default();
        let _ = writeln!(
            out,
            "{h},{},{d},{},{}",
            num(*eps),
            num(report.tail_distances[h]),
            num(report.kernel_sup_bounds[h])
        );
    }
    out
}

pub fn lemma_csv(lemma: &[LemmaResidual]) -> String {
    let mut out = String::from("eps,test_index,residual,majorant\n");
    for r in lemma {
        let _ = writeln!(out, "{},{},{},{}", num(r.eps), r.test_index, num(r.residual), num(r.majorant));
    }
    out
}

pub fn weak_residual_csv(res: &[WeakResidual]) -> String {
    let mut out = String::from("test_index,laplacian_on_solution,laplacian_on_test\n");
    for (k, r) in res.iter().enumerate() {
        let _ = writeln!(out, "{k},{},{}", num(r.on_solution), num(r.on_test));
    }
    out
}
