//! Relaxation-modulus families.
//!
//! Every family is a finite sum of *atoms* (a constant, a decaying exponential
//! or a power law `c t^-alpha`). Each atom knows its iterated derivatives and
//! antiderivatives in closed form, so `G`, `dG/dt`, `d2G/dt2`, the integrated
//! kernel `K(xi) = int_0^xi G` and the higher primitives used by the integral
//! formulation are all evaluated without quadrature.
//!
//! Primitive orders follow one convention throughout the crate:
//! order `-2` is `d2G/dt2`, `-1` is `dG/dt`, `0` is `G`, `1` is `K`, and order
//! `k > 1` is the `k`-fold integral of `G` from `0`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Highest primitive order that can be evaluated.
pub const MAX_PRIMITIVE_ORDER: i32 = 4;

/// One term `g * exp(-t / tau)` of a Prony series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct PronyTerm {
    pub weight: f64,
    pub tau: f64,
}

impl From<(f64, f64)> for PronyTerm {
    fn from((weight, tau): (f64, f64)) -> Self {
        PronyTerm { weight, tau }
    }
}

impl From<PronyTerm> for (f64, f64) {
    fn from(t: PronyTerm) -> Self {
        (t.weight, t.tau)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Family {
    Constant {
        g0: f64,
    },
    Prony {
        g_inf: f64,
        terms: Vec<PronyTerm>,
    },
    #[serde(rename = "powerlaw")]
    PowerLaw {
        c: f64,
        alpha: f64,
    },
    Sum {
        parts: Vec<KernelSpec>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Atom {
    Const(f64),
    Exp { g: f64, tau: f64 },
    Power { c: f64, alpha: f64 },
}

/// A validated relaxation modulus.
///
/// Construction enforces the thermodynamic sign structure (`G > 0`,
/// `dG/dt <= 0`, `d2G/dt2 >= 0`); [`KernelSpec::from_family_unchecked`] skips
/// it and exists only to build negative controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Family", into = "Family")]
pub struct KernelSpec {
    family: Family,
    #[serde(skip)]
    atoms: Vec<Atom>,
}

impl TryFrom<Family> for KernelSpec {
    type Error = Error;

    fn try_from(family: Family) -> Result<Self> {
        KernelSpec::new(family)
    }
}

impl From<KernelSpec> for Family {
    fn from(k: KernelSpec) -> Self {
        k.family
    }
}

fn validate(family: &Family, errors: &mut Vec<String>, top_level: bool) {
    let finite = |name: &str, v: f64, errors: &mut Vec<String>| {
        if !v.is_finite() {
            errors.push(format!("{name} must be finite (got {v})"));
            false
        } else {
            true
        }
    };
    match family {
        Family::Constant { g0 } => {
            if finite("g0", *g0, errors) && *g0 <= 0.0 {
                errors.push(format!("constant: g0 must be > 0 (got {g0})"));
            }
        }
        Family::Prony { g_inf, terms } => {
            if finite("g_inf", *g_inf, errors) && *g_inf < 0.0 {
                errors.push(format!("prony: g_inf must be >= 0 (got {g_inf})"));
            }
            if *g_inf == 0.0 && terms.is_empty() {
                errors.push("prony: g_inf = 0 with no terms gives G = 0".to_string());
            }
            for (i, t) in terms.iter().enumerate() {
                if finite("weight", t.weight, errors) && t.weight <= 0.0 {
                    errors.push(format!(
                        "prony: term {i} weight must be > 0 (got {})",
                        t.weight
                    ));
                }
                if finite("tau", t.tau, errors) && t.tau <= 0.0 {
                    errors.push(format!("prony: term {i} tau must be > 0 (got {})", t.tau));
                }
            }
        }
        Family::PowerLaw { c, alpha } => {
            if finite("c", *c, errors) && *c <= 0.0 {
                errors.push(format!("powerlaw: c must be > 0 (got {c})"));
            }
            if finite("alpha", *alpha, errors) && !(*alpha > 0.0 && *alpha < 1.0) {
                errors.push(format!("powerlaw: α in (0,1) required (got alpha = {alpha})"));
            }
        }
        Family::Sum { parts } => {
            if parts.is_empty() {
                errors.push("sum: at least one part required".to_string());
            }
            let mut power_parts = 0;
            for p in parts {
                power_parts += count_power_parts(p.family());
                validate(p.family(), errors, false);
            }
            if top_level && power_parts > 1 {
                errors.push(format!(
                    "sum: at most one powerlaw part allowed (got {power_parts})"
                ));
            }
        }
    }
}

fn count_power_parts(family: &Family) -> usize {
    match family {
        Family::PowerLaw { .. } => 1,
        Family::Sum { parts } => parts.iter().map(|p| count_power_parts(p.family())).sum(),
        _ => 0,
    }
}

fn flatten(family: &Family, atoms: &mut Vec<Atom>) {
    match family {
        Family::Constant { g0 } => atoms.push(Atom::Const(*g0)),
        Family::Prony { g_inf, terms } => {
            if *g_inf != 0.0 {
                atoms.push(Atom::Const(*g_inf));
            }
            atoms.extend(terms.iter().map(|t| Atom::Exp {
                g: t.weight,
                tau: t.tau,
            }));
        }
        Family::PowerLaw { c, alpha } => atoms.push(Atom::Power {
            c: *c,
            alpha: *alpha,
        }),
        Family::Sum { parts } => {
            for p in parts {
                flatten(p.family(), atoms);
            }
        }
    }
}

impl KernelSpec {
    pub fn new(family: Family) -> Result<Self> {
        let mut errors = Vec::new();
        validate(&family, &mut errors, true);
        if !errors.is_empty() {
            return Err(Error::InvalidKernel(errors.join("; ")));
        }
        Ok(Self::from_family_unchecked(family))
    }

    /// Builds a kernel without checking any invariant.
    ///
    /// Only meant for negative controls (kernels with `dG/dt > 0` somewhere);
    /// every operation still evaluates the closed forms faithfully.
    pub fn from_family_unchecked(family: Family) -> Self {
        let mut atoms = Vec::new();
        flatten(&family, &mut atoms);
        KernelSpec { family, atoms }
    }

    pub fn constant(g0: f64) -> Result<Self> {
        Self::new(Family::Constant { g0 })
    }

    pub fn prony(g_inf: f64, terms: &[(f64, f64)]) -> Result<Self> {
        Self::new(Family::Prony {
            g_inf,
            terms: terms.iter().copied().map(PronyTerm::from).collect(),
        })
    }

    pub fn power_law(c: f64, alpha: f64) -> Result<Self> {
        Self::new(Family::PowerLaw { c, alpha })
    }

    pub fn sum(parts: Vec<KernelSpec>) -> Result<Self> {
        Self::new(Family::Sum { parts })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// True when `G` is unbounded at the origin.
    pub fn is_singular(&self) -> bool {
        self.atoms.iter().any(|a| matches!(a, Atom::Power { .. }))
    }

    /// True for kernels with no memory at all (`dG/dt` identically zero).
    pub fn is_elastic(&self) -> bool {
        self.atoms.iter().all(|a| matches!(a, Atom::Const(_)))
    }

    /// `G(0)` when finite.
    pub fn g_zero(&self) -> Option<f64> {
        if self.is_singular() {
            None
        } else {
            self.primitive(0, 0.0).ok()
        }
    }

    /// Equilibrium modulus `G(inf)`.
    pub fn g_infinity(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| match a {
                Atom::Const(g) => *g,
                _ => 0.0,
            })
            .sum()
    }

    /// Iterated derivative (order < 0) or primitive (order > 0) of `G` at `x`.
    pub fn primitive(&self, order: i32, x: f64) -> Result<f64> {
        self.primitive_of(order, x, false)
    }

    pub(crate) fn primitive_of(&self, order: i32, x: f64, transient_only: bool) -> Result<f64> {
        if !(-2..=MAX_PRIMITIVE_ORDER).contains(&order) {
            return domain(format!("primitive order {order} not supported"));
        }
        if x.is_nan() || x < 0.0 {
            return domain(format!("kernel evaluated at negative time {x}"));
        }
        let mut total = 0.0;
        for atom in &self.atoms {
            if transient_only && matches!(atom, Atom::Const(_)) {
                continue;
            }
            total += atom.primitive(order, x)?;
        }
        Ok(total)
    }

    pub fn g(&self, t: f64) -> Result<f64> {
        self.primitive(0, t)
    }

    pub fn g_dot(&self, t: f64) -> Result<f64> {
        self.primitive(-1, t)
    }

    pub fn g_ddot(&self, t: f64) -> Result<f64> {
        self.primitive(-2, t)
    }

    /// Integrated kernel `K(xi) = int_0^xi G(tau) dtau`; `K(0) = 0`.
    pub fn integrated(&self, xi: f64) -> Result<f64> {
        self.primitive(1, xi)
    }

    /// Moments `(int_x^{x+delta} P(y) dy, int_x^{x+delta} P(y) (y - x) dy)` of
    /// the primitive of the given order.
    pub fn moments(&self, order: i32, x: f64, delta: f64) -> Result<(f64, f64)> {
        self.moments_of(order, x, delta, false)
    }

    /// [`Self::moments`] with the constant (equilibrium) atoms left out when
    /// `transient_only` is set. Those atoms cancel identically in any
    /// translation difference, so dropping them keeps such differences exact.
    pub(crate) fn moments_of(&self, order: i32, x: f64, delta: f64, transient_only: bool) -> Result<(f64, f64)> {
        if !(-2..=MAX_PRIMITIVE_ORDER).contains(&order) {
            return domain(format!("moments of order {order} not supported"));
        }
        if x < 0.0 || delta <= 0.0 || !x.is_finite() || !delta.is_finite() {
            return domain(format!("invalid moment interval [{x}, {x} + {delta}]"));
        }
        let mut m0 = 0.0;
        let mut m1 = 0.0;
        for atom in &self.atoms {
            if transient_only && matches!(atom, Atom::Const(_)) {
                continue;
            }
            let (a, b) = atom.moments(order, x, delta)?;
            m0 += a;
            m1 += b;
        }
        Ok((m0, m1))
    }

    pub fn translate(&self, eps: f64) -> Result<TranslatedKernel> {
        if !(eps > 0.0) || !eps.is_finite() {
            return domain(format!("translation eps must be > 0 (got {eps})"));
        }
        Ok(TranslatedKernel {
            base: self.clone(),
            eps,
        })
    }

    /// `K(s + eps) - K(s) = int_s^{s+eps} G` at every grid point.
    ///
    /// This is the pointwise quantity used to bound the kernel difference; its
    /// supremum over `s >= 0` is `K(eps)`, attained at `s = 0`, which also
    /// bounds the true difference `|K^eps(s) - K(s)| = K(eps) - (K(s+eps) - K(s))`.
    pub fn kernel_diff_bound(&self, eps: f64, s_grid: &[f64]) -> Result<Vec<f64>> {
        if !(eps > 0.0) {
            return domain(format!("eps must be > 0 (got {eps})"));
        }
        s_grid
            .iter()
            .map(|&s| {
                if s < 0.0 {
                    return domain(format!("s must be >= 0 (got {s})"));
                }
                Ok(self.moments(0, s, eps)?.0)
            })
            .collect()
    }

    /// Signed difference `K^eps(s) - K(s) = K(s+eps) - K(eps) - K(s)`.
    pub fn kernel_difference(&self, eps: f64, s: f64) -> Result<f64> {
        if !(eps > 0.0) || s < 0.0 {
            return domain(format!("kernel difference needs eps > 0, s >= 0 (got {eps}, {s})"));
        }
        let shifted = self.moments(0, s, eps)?.0;
        Ok(shifted - self.integrated(eps)?)
    }

    /// Samples the sign conditions on a log-spaced grid in `(0, horizon]`.
    pub fn check_admissibility(&self, horizon: f64, n_samples: usize) -> Result<AdmissibilityReport> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return domain(format!("horizon must be > 0 (got {horizon})"));
        }
        if n_samples < 2 {
            return domain(format!("need at least 2 samples (got {n_samples})"));
        }
        let grid = log_grid(horizon, n_samples, ADMISSIBILITY_DECADES);
        let mut report = AdmissibilityReport {
            horizon,
            samples: Vec::with_capacity(n_samples),
            g_positive: true,
            g_dot_nonpositive: true,
            g_ddot_nonnegative: true,
            first_violation: None,
            finite_at_zero: !self.is_singular(),
            g_dot_integrable_near_zero: !self.is_singular(),
            integrable_on_horizon: true,
            integrable_on_half_line: self.g_infinity() == 0.0 && !self.is_singular(),
            g_zero: self.g_zero(),
            g_infinity: self.g_infinity(),
        };
        for &t in &grid {
            let s = KernelSample {
                t,
                g: self.g(t)?,
                g_dot: self.g_dot(t)?,
                g_ddot: self.g_ddot(t)?,
            };
            let mut flag = |ok: &mut bool, cond: Condition| {
                if *ok {
                    *ok = false;
                }
                if report.first_violation.is_none() {
                    report.first_violation = Some((cond, t));
                }
            };
            if !(s.g > 0.0) {
                flag(&mut report.g_positive, Condition::Positive);
            }
            if !(s.g_dot <= 0.0) {
                flag(&mut report.g_dot_nonpositive, Condition::Decreasing);
            }
            if !(s.g_ddot >= 0.0) {
                flag(&mut report.g_ddot_nonnegative, Condition::Convex);
            }
            report.samples.push(s);
        }
        Ok(report)
    }

    /// Smallest shift `a*` such that for every history bounded by
    /// `history_bound` and every `a > a*`,
    /// `|int_0^inf G'(s + a) E(s) ds| <= history_bound * (G(a) - G(inf)) < tol`.
    ///
    /// The tail `int_a^inf |G'| = G(a) - G(inf)` is monotone, so the threshold
    /// is located by bisection on `[0, FADING_MEMORY_HORIZON]`.
    pub fn check_fading_memory(&self, history_bound: f64, tol: f64) -> Result<f64> {
        if !(tol > 0.0) || !(history_bound >= 0.0) {
            return domain(format!(
                "fading memory needs tol > 0 and bound >= 0 (got {tol}, {history_bound})"
            ));
        }
        let g_inf = self.g_infinity();
        let tail = |a: f64| -> Result<f64> { Ok(history_bound * (self.g(a)? - g_inf).max(0.0)) };
        if self.is_elastic() || history_bound == 0.0 {
            return Ok(0.0);
        }
        if !self.is_singular() && tail(0.0)? <= tol {
            return Ok(0.0);
        }
        let mut hi = 1.0;
        while tail(hi)? > tol {
            hi *= 2.0;
            if hi > FADING_MEMORY_HORIZON {
                return Err(Error::Unattainable(format!(
                    "tail bound still {:e} >= {tol:e} at shift {:e}",
                    tail(FADING_MEMORY_HORIZON)?,
                    FADING_MEMORY_HORIZON
                )));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if tail(mid)? > tol {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }
}

const ADMISSIBILITY_DECADES: f64 = 8.0;

/// Largest shift searched by [`KernelSpec::check_fading_memory`].
pub const FADING_MEMORY_HORIZON: f64 = 1.0e15;

/// `n` points log-spaced over `decades` decades ending at `horizon`.
pub fn log_grid(horizon: f64, n: usize, decades: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let frac = i as f64 / (n - 1) as f64;
            horizon * 10f64.powf(-decades * (1.0 - frac))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Condition {
    Positive,
    Decreasing,
    Convex,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KernelSample {
    pub t: f64,
    pub g: f64,
    pub g_dot: f64,
    pub g_ddot: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub horizon: f64,
    pub samples: Vec<KernelSample>,
    pub g_positive: bool,
    pub g_dot_nonpositive: bool,
    pub g_ddot_nonnegative: bool,
    pub first_violation: Option<(Condition, f64)>,
    /// Classical regime (`G(0)` finite) versus singular regime.
    pub finite_at_zero: bool,
    /// `dG/dt` integrable near zero; false for any power-law part.
    pub g_dot_integrable_near_zero: bool,
    /// `G` integrable on `(0, horizon)`; holds for every family.
    pub integrable_on_horizon: bool,
    /// `G` integrable on the whole half line.
    pub integrable_on_half_line: bool,
    pub g_zero: Option<f64>,
    pub g_infinity: f64,
}

impl AdmissibilityReport {
    pub fn sign_conditions_hold(&self) -> bool {
        self.g_positive && self.g_dot_nonpositive && self.g_ddot_nonnegative
    }
}

/// `G^eps(t) = G(eps + t)`, finite at `t = 0` for every kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslatedKernel {
    base: KernelSpec,
    eps: f64,
}

impl TranslatedKernel {
    pub fn base(&self) -> &KernelSpec {
        &self.base
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn g(&self, t: f64) -> Result<f64> {
        self.base.g(self.shifted(t)?)
    }

    pub fn g_dot(&self, t: f64) -> Result<f64> {
        self.base.g_dot(self.shifted(t)?)
    }

    pub fn g_ddot(&self, t: f64) -> Result<f64> {
        self.base.g_ddot(self.shifted(t)?)
    }

    /// `K^eps(xi) = K(eps + xi) - K(eps)`.
    pub fn integrated(&self, xi: f64) -> Result<f64> {
        if xi < 0.0 {
            return domain(format!("K^eps evaluated at negative time {xi}"));
        }
        if xi == 0.0 {
            return Ok(0.0);
        }
        Ok(self.base.moments(0, self.eps, xi)?.0)
    }

    fn shifted(&self, t: f64) -> Result<f64> {
        if t.is_nan() || t < 0.0 {
            return domain(format!("translated kernel evaluated at negative time {t}"));
        }
        Ok(self.eps + t)
    }
}

// ---------------------------------------------------------------------------
// Atoms

fn factorial(n: i32) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

fn binomial_int(n: i32, k: i32) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// `sum_{i >= k} z^i / i!`, i.e. `exp(z)` minus its Taylor polynomial of
/// degree `k - 1`, without cancellation for small `|z|`.
fn exp_remainder(k: i32, z: f64) -> f64 {
    if k <= 0 {
        return z.exp();
    }
    if z.abs() < 1.0 {
        let mut term = z.powi(k) / factorial(k);
        let mut sum = 0.0f64;
        let mut i = k;
        while term.abs() > 1e-18 * sum.abs() || i == k {
            sum += term;
            i += 1;
            term *= z / i as f64;
            if i > k + 60 {
                break;
            }
        }
        sum
    } else {
        let mut poly = 0.0;
        let mut term = 1.0;
        for i in 0..k {
            poly += term;
            term *= z / (i + 1) as f64;
        }
        z.exp() - poly
    }
}

/// Moments of `y^n` (n >= 0) over `[x, x + delta]` against `(1, y - x)`.
fn monomial_moments(n: i32, x: f64, delta: f64) -> (f64, f64) {
    let mut m0 = 0.0;
    let mut m1 = 0.0;
    for i in 0..=n {
        let coef = binomial_int(n, i) * x.powi(n - i);
        m0 += coef * delta.powi(i + 1) / (i + 1) as f64;
        m1 += coef * delta.powi(i + 2) / (i + 2) as f64;
    }
    (m0, m1)
}

/// Coefficient `C_k` with `P_k(x) = C_k x^(k - alpha)` for a power-law atom.
fn power_coefficient(c: f64, alpha: f64, order: i32) -> f64 {
    let mut coef = c;
    if order >= 0 {
        for k in 1..=order {
            coef /= k as f64 - alpha;
        }
    } else {
        for k in (order + 1..=0).rev() {
            coef *= k as f64 - alpha;
        }
    }
    coef
}

impl Atom {
    fn name(&self) -> &'static str {
        match self {
            Atom::Const(_) => "constant",
            Atom::Exp { .. } => "prony",
            Atom::Power { .. } => "powerlaw",
        }
    }

    fn primitive(&self, order: i32, x: f64) -> Result<f64> {
        match *self {
            Atom::Const(g) => Ok(if order < 0 {
                0.0
            } else {
                g * x.powi(order) / factorial(order)
            }),
            Atom::Exp { g, tau } => {
                let scale = (-tau).powi(order);
                Ok(scale * g * exp_remainder(order, -x / tau))
            }
            Atom::Power { c, alpha } => {
                let p = order as f64 - alpha;
                if x == 0.0 {
                    if p > 0.0 {
                        Ok(0.0)
                    } else {
                        Err(Error::Singular {
                            part: self.name(),
                            t: x,
                        })
                    }
                } else {
                    Ok(power_coefficient(c, alpha, order) * x.powf(p))
                }
            }
        }
    }

    fn moments(&self, order: i32, x: f64, delta: f64) -> Result<(f64, f64)> {
        match *self {
            Atom::Const(g) => {
                if order < 0 {
                    return Ok((0.0, 0.0));
                }
                let (m0, m1) = monomial_moments(order, x, delta);
                let f = g / factorial(order);
                Ok((f * m0, f * m1))
            }
            Atom::Exp { g, tau } => Ok(exp_moments(g, tau, order, x, delta)),
            Atom::Power { c, alpha } => {
                let p = order as f64 - alpha;
                let coef = power_coefficient(c, alpha, order);
                if x == 0.0 {
                    if p + 1.0 <= 0.0 {
                        return Err(Error::Singular {
                            part: self.name(),
                            t: 0.0,
                        });
                    }
                    return Ok((
                        coef * delta.powf(p + 1.0) / (p + 1.0),
                        coef * delta.powf(p + 2.0) / (p + 2.0),
                    ));
                }
                let z = delta / x;
                if z <= 0.25 {
                    // binomial series of (1 + z u)^p
                    let mut b = 1.0;
                    let mut zn = 1.0;
                    let mut s0 = 0.0;
                    let mut s1 = 0.0;
                    for n in 0..80 {
                        let t0 = b * zn / (n + 1) as f64;
                        s0 += t0;
                        s1 += b * zn / (n + 2) as f64;
                        if t0.abs() < 1e-18 * s0.abs() {
                            break;
                        }
                        b *= (p - n as f64) / (n + 1) as f64;
                        zn *= z;
                    }
                    let base = coef * x.powf(p);
                    Ok((base * delta * s0, base * delta * delta * s1))
                } else {
                    let d1 = (x + delta).powf(p + 1.0) - x.powf(p + 1.0);
                    let d2 = (x + delta).powf(p + 2.0) - x.powf(p + 2.0);
                    Ok((
                        coef * d1 / (p + 1.0),
                        coef * (d2 / (p + 2.0) - x * d1 / (p + 1.0)),
                    ))
                }
            }
        }
    }
}

fn exp_moments(g: f64, tau: f64, order: i32, x: f64, delta: f64) -> (f64, f64) {
    let rho = delta / tau;
    if rho <= 0.5 {
        // Taylor shift: P_k(x + r) = sum_i P_{k-i}(x) r^i / i!
        let mut m0 = 0.0;
        let mut m1 = 0.0;
        let mut dpow = delta; // delta^(i+1) / i!
        for i in 0..60 {
            let k = order - i;
            let pk = (-tau).powi(k) * g * exp_remainder(k, -x / tau);
            let t0 = pk * dpow / (i + 1) as f64;
            let t1 = pk * dpow * delta / (i + 2) as f64;
            m0 += t0;
            m1 += t1;
            if i > 2 && t0.abs() <= 1e-18 * m0.abs() && t1.abs() <= 1e-18 * m1.abs() {
                break;
            }
            dpow *= delta / (i + 1) as f64;
        }
        (m0, m1)
    } else {
        // exponential part (-tau)^k g e^{-y/tau} plus the polynomial part
        // -(-tau)^k g sum_{i<k} (-y/tau)^i / i!
        let scale = (-tau).powi(order) * g;
        let decay = (-x / tau).exp();
        let e0 = tau * decay * (-(-rho).exp_m1());
        let e1 = tau * tau * decay * (-(-rho).exp_m1() - rho * (-rho).exp());
        let mut p0 = 0.0;
        let mut p1 = 0.0;
        for i in 0..order.max(0) {
            let (a, b) = monomial_moments(i, x, delta);
            let c = (-1.0 / tau).powi(i) / factorial(i);
            p0 += c * a;
            p1 += c * b;
        }
        (scale * (e0 - p0), scale * (e1 - p1))
    }
}

/// Isotropic fourth-order relaxation tensor
/// `G_klmn(t) = lambda(t) d_kl d_mn + mu(t) (d_km d_ln + d_kn d_lm)` with
/// `lambda = bulk - 2/3 shear` and `mu = shear`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsotropicRelaxationTensor {
    pub bulk: KernelSpec,
    pub shear: KernelSpec,
}

pub type Sym3 = [[f64; 3]; 3];

impl IsotropicRelaxationTensor {
    pub fn new(bulk: KernelSpec, shear: KernelSpec) -> Self {
        Self { bulk, shear }
    }

    /// Lamé moduli `(lambda(t), mu(t))`.
    pub fn lame(&self, t: f64) -> Result<(f64, f64)> {
        let kappa = self.bulk.g(t)?;
        let mu = self.shear.g(t)?;
        Ok((kappa - 2.0 / 3.0 * mu, mu))
    }

    /// Coercivity constant `min(2 mu, 3 lambda + 2 mu)` at time `t`.
    pub fn coercivity(&self, t: f64) -> Result<f64> {
        let (lambda, mu) = self.lame(t)?;
        Ok((2.0 * mu).min(3.0 * lambda + 2.0 * mu))
    }

    /// Full component `G_klmn(t)`.
    pub fn component(&self, t: f64, k: usize, l: usize, m: usize, n: usize) -> Result<f64> {
        let (lambda, mu) = self.lame(t)?;
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        Ok(lambda * d(k, l) * d(m, n) + mu * (d(k, m) * d(l, n) + d(k, n) * d(l, m)))
    }

    /// `G(t)[e] = lambda tr(e) I + 2 mu e`.
    pub fn apply(&self, t: f64, e: &Sym3) -> Result<Sym3> {
        check_symmetric(e)?;
        let (lambda, mu) = self.lame(t)?;
        let tr = e[0][0] + e[1][1] + e[2][2];
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = 2.0 * mu * e[i][j] + if i == j { lambda * tr } else { 0.0 };
            }
        }
        Ok(out)
    }
}

pub fn contract(a: &Sym3, b: &Sym3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

fn check_symmetric(e: &Sym3) -> Result<()> {
    let scale = contract(e, e).sqrt().max(f64::MIN_POSITIVE);
    for i in 0..3 {
        for j in 0..i {
            if (e[i][j] - e[j][i]).abs() > 1e-12 * scale {
                return domain(format!(
                    "strain tensor is not symmetric: e[{i}][{j}] = {} != e[{j}][{i}] = {}",
                    e[i][j], e[j][i]
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn simple_prony() -> KernelSpec {
        KernelSpec::prony(0.0, &[(1.0, 1.0)]).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(simple_prony().g(0.0).unwrap(), 1.0);
        let pl = KernelSpec::power_law(1.0, 0.5).unwrap();
        assert_relative_eq!(pl.g(4.0).unwrap(), 0.5, epsilon = 1e-15);
        let p = KernelSpec::prony(0.5, &[(0.5, 2.0)]).unwrap();
        assert_relative_eq!(p.g(1e4).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(p.g_infinity(), 0.5);
    }

    #[test]
    fn singular_and_negative_times_are_domain_errors() {
        let pl = KernelSpec::power_law(1.0, 0.5).unwrap();
        assert!(matches!(
            pl.g(0.0),
            Err(Error::Singular {
                part: "powerlaw",
                ..
            })
        ));
        assert!(matches!(simple_prony().g(-1.0), Err(Error::Domain(_))));
        assert!(matches!(pl.g_dot(-0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(simple_prony().g_dot(0.0).unwrap(), -1.0);
        let pl = KernelSpec::power_law(1.0, 0.5).unwrap();
        assert_relative_eq!(pl.g_dot(1.0).unwrap(), -0.5, epsilon = 1e-15);
        assert_relative_eq!(pl.g_ddot(1.0).unwrap(), 0.75, epsilon = 1e-15);
        let c = KernelSpec::constant(2.0).unwrap();
        assert_eq!(c.g_dot(3.0).unwrap(), 0.0);
        assert_eq!(c.g_ddot(3.0).unwrap(), 0.0);
    }

    #[test]
    fn integrated_examples() {
        assert_relative_eq!(
            simple_prony().integrated(1.0).unwrap(),
            1.0 - (-1.0f64).exp(),
            epsilon = 1e-15
        );
        let pl = KernelSpec::power_law(1.0, 0.5).unwrap();
        assert_relative_eq!(pl.integrated(4.0).unwrap(), 4.0, epsilon = 1e-14);
        for k in [simple_prony(), pl, KernelSpec::constant(3.0).unwrap()] {
            assert_eq!(k.integrated(0.0).unwrap(), 0.0);
        }
        assert!(simple_prony().integrated(-0.1).is_err());
    }

    #[test]
    fn translate_examples() {
        let t = simple_prony().translate(0.1).unwrap();
        assert_relative_eq!(t.g(0.0).unwrap(), (-0.1f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(
            t.integrated(1.0).unwrap(),
            (-0.1f64).exp() - (-1.1f64).exp(),
            epsilon = 1e-15
        );
        let pl = KernelSpec::power_law(1.0, 0.5).unwrap().translate(0.01).unwrap();
        assert_relative_eq!(pl.g(0.0).unwrap(), 10.0, epsilon = 1e-13);
        assert!(simple_prony().translate(0.0).is_err());
        assert!(simple_prony().translate(-1.0).is_err());
    }

    #[test]
    fn kernel_diff_bound_examples() {
        let v = simple_prony().kernel_diff_bound(0.1, &[0.0]).unwrap();
        assert_relative_eq!(v[0], 1.0 - (-0.1f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(v[0], 0.09516, epsilon = 1e-5);
        let pl = KernelSpec::power_law(1.0, 0.5).unwrap();
        for eps in [0.1, 1e-3, 1e-8] {
            let v = pl.kernel_diff_bound(eps, &[0.0]).unwrap();
            assert_relative_eq!(v[0], 2.0 * eps.sqrt(), max_relative = 1e-13);
        }
        let tiny = simple_prony().kernel_diff_bound(1e-300, &[0.0, 0.5, 1.0]).unwrap();
        assert!(tiny.iter().all(|&d| (0.0..1e-299).contains(&d)));
    }

    #[test]
    fn admissibility_examples() {
        let r = KernelSpec::prony(0.5, &[(0.5, 2.0)])
            .unwrap()
            .check_admissibility(10.0, 50)
            .unwrap();
        assert!(r.sign_conditions_hold());
        assert!(r.finite_at_zero && r.g_dot_integrable_near_zero);
        let r = KernelSpec::power_law(1.0, 0.5)
            .unwrap()
            .check_admissibility(10.0, 50)
            .unwrap();
        assert!(r.sign_conditions_hold());
        assert!(!r.finite_at_zero && !r.g_dot_integrable_near_zero);
        assert!(r.integrable_on_horizon && !r.integrable_on_half_line);
        let bad = KernelSpec::sum(vec![KernelSpec::from_family_unchecked(Family::Prony {
            g_inf: 2.0,
            terms: vec![PronyTerm {
                weight: -1.0,
                tau: 1.0,
            }],
        })]);
        assert!(matches!(bad, Err(Error::InvalidKernel(_))));
    }

    #[test]
    fn inadmissible_kernel_report_fails() {
        let k = KernelSpec::from_family_unchecked(Family::Prony {
            g_inf: 1.5,
            terms: vec![PronyTerm {
                weight: -0.5,
                tau: 1.0,
            }],
        });
        let r = k.check_admissibility(5.0, 20).unwrap();
        assert!(r.g_positive);
        assert!(!r.g_dot_nonpositive && !r.g_ddot_nonnegative);
        assert_eq!(r.first_violation.unwrap().0, Condition::Decreasing);
    }

    #[test]
    fn constructor_rejects_bad_parameters() {
        assert!(KernelSpec::constant(0.0).is_err());
        assert!(KernelSpec::power_law(1.0, 1.5)
            .unwrap_err()
            .to_string()
            .contains("α in (0,1)"));
        assert!(KernelSpec::power_law(-1.0, 0.5).is_err());
        assert!(KernelSpec::prony(-0.1, &[(1.0, 1.0)]).is_err());
        assert!(KernelSpec::prony(0.0, &[(1.0, 0.0)]).is_err());
        let two_power = KernelSpec::sum(vec![
            KernelSpec::power_law(1.0, 0.3).unwrap(),
            KernelSpec::power_law(1.0, 0.6).unwrap(),
        ]);
        assert!(two_power.is_err());
    }

    #[test]
    fn fading_memory_examples() {
        let a = simple_prony().check_fading_memory(1.0, (-3.0f64).exp()).unwrap();
        assert_relative_eq!(a, 3.0, epsilon = 1e-12);
        let a = KernelSpec::power_law(1.0, 0.5)
            .unwrap()
            .check_fading_memory(1.0, 0.1)
            .unwrap();
        assert_relative_eq!(a, 100.0, max_relative = 1e-12);
        let a = KernelSpec::constant(1.0)
            .unwrap()
            .check_fading_memory(1.0, 1e-6)
            .unwrap();
        assert_eq!(a, 0.0);
        let r = KernelSpec::power_law(1.0, 0.1)
            .unwrap()
            .check_fading_memory(1.0, 1e-3);
        assert!(matches!(r, Err(Error::Unattainable(_))));
    }

    #[test]
    fn tensor_examples() {
        // lambda = mu = 1 -> bulk 5/3
        let g = IsotropicRelaxationTensor::new(
            KernelSpec::constant(5.0 / 3.0).unwrap(),
            KernelSpec::constant(1.0).unwrap(),
        );
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let out = g.apply(0.0, &id).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 5.0 } else { 0.0 };
                assert_relative_eq!(out[i][j], want, epsilon = 1e-14);
            }
        }
        let zero = [[0.0; 3]; 3];
        assert_eq!(g.apply(1.0, &zero).unwrap(), zero);
        let bad = [[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        assert!(matches!(g.apply(1.0, &bad), Err(Error::Domain(_))));
    }

    #[test]
    fn tensor_deviatoric_example() {
        // lambda = 0, mu = 1 -> bulk 2/3
        let g = IsotropicRelaxationTensor::new(
            KernelSpec::constant(2.0 / 3.0).unwrap(),
            KernelSpec::constant(1.0).unwrap(),
        );
        let e = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 0.0]];
        let out = g.apply(0.0, &e).unwrap();
        // component-wise oracle: sum_mn G_klmn e_mn
        for k in 0..3 {
            for l in 0..3 {
                let mut s = 0.0;
                for m in 0..3 {
                    for n in 0..3 {
                        s += g.component(0.0, k, l, m, n).unwrap() * e[m][n];
                    }
                }
                assert_relative_eq!(out[k][l], s, epsilon = 1e-14);
                assert_relative_eq!(out[k][l], 2.0 * e[k][l], epsilon = 1e-14);
            }
        }
        assert_relative_eq!(contract(&out, &e), 2.0 * contract(&e, &e), epsilon = 1e-14);
        assert_relative_eq!(g.coercivity(0.0).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn serde_round_trip_validates() {
        let k: KernelSpec =
            serde_json::from_str(r#"{"family":"prony","g_inf":0.5,"terms":[[0.5,2.0]]}"#).unwrap();
        assert_eq!(k, KernelSpec::prony(0.5, &[(0.5, 2.0)]).unwrap());
        let bad: std::result::Result<KernelSpec, _> =
            serde_json::from_str(r#"{"family":"powerlaw","c":1.0,"alpha":1.5}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn exp_remainder_matches_definition() {
        for &z in &[-3.0, -0.7, -1e-3, 0.2] {
            for k in 0..5 {
                let mut poly = 0.0;
                for i in 0..k {
                    poly += f64::powi(z, i) / factorial(i);
                }
                let direct = f64::exp(z) - poly;
                assert_relative_eq!(exp_remainder(k, z), direct, epsilon = 1e-12, max_relative = 1e-9);
            }
        }
    }
}
