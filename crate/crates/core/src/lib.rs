//! Viscoelastic wave propagation with memory kernels that may be unbounded at
//! the origin.
//!
//! The displacement solves `u_tt = div T + f` on a Dirichlet box with the
//! Boltzmann stress `T = G(0) E(t) + int G'(s) E(t - s) ds`. Singular kernels
//! such as `c t^(-alpha)` are handled by translating the kernel,
//! `G^eps(t) = G(t + eps)`, solving the regular problems and studying the
//! sequence as `eps -> 0`.
//!
//! * [`kernel`]: relaxation moduli, primitives, admissibility checks.
//! * [`domain`]: grids, fields, finite-difference Laplacian and norms.
//! * [`solver`]: integro-differential and Volterra time marching, stress.
//! * [`diagnostics`]: energy balance, decay, Gronwall bound, weak residuals.
//! * [`convergence`]: epsilon sequences and Cauchy reports.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Tensor and stencil code indexes several arrays with one loop variable.
#![allow(clippy::needless_range_loop)]

pub mod convergence;
pub mod diagnostics;
pub mod domain;
pub mod error;
pub mod export;
pub mod forcing;
pub mod kernel;
pub mod quadrature;
pub mod solver;

pub use convergence::{cauchy_report, convergence_lemma_check, run_eps_sequence, ConvergenceReport};
pub use diagnostics::{check_energy_bound, check_energy_decay, energy_ledger, weak_residual, EnergyLedger};
pub use domain::{Field, FieldExpr, Grid};
pub use error::{Error, Result};
pub use forcing::{Forcing, TimeProfile};
pub use kernel::{Family, IsotropicRelaxationTensor, KernelSpec};
pub use solver::{Formulation, ProblemSpec, TrajectorySolution};

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
