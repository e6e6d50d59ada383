//! Box domains with homogeneous Dirichlet boundary, finite-difference
//! Laplacian and discrete L2 norms.
//!
//! Only interior nodes are stored; boundary values are implicitly zero.
//! Node `i` on an axis with `n` interior points sits at `(i + 1) h` with
//! `h = extent / (n + 1)`. In 3D the x index varies fastest.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    extent: [f64; 3],
    n: [usize; 3],
}

impl Grid {
    pub const MIN_POINTS: usize = 3;

    pub fn line(extent: f64, n: usize) -> Result<Self> {
        Self::new(1, [extent, 1.0, 1.0], [n, 1, 1])
    }

    pub fn cube(extent: f64, n: usize) -> Result<Self> {
        Self::new(3, [extent; 3], [n; 3])
    }

    pub fn new(dim: usize, extent: [f64; 3], n: [usize; 3]) -> Result<Self> {
        if dim != 1 && dim != 3 {
            return domain(format!("grid dimension must be 1 or 3 (got {dim})"));
        }
        for axis in 0..dim {
            if !(extent[axis] > 0.0) || !extent[axis].is_finite() {
                return domain(format!("extent must be > 0 (got {})", extent[axis]));
            }
            if n[axis] < Self::MIN_POINTS {
                return domain(format!(
                    "need at least {} interior points per axis (got {})",
                    Self::MIN_POINTS,
                    n[axis]
                ));
            }
        }
        let mut extent = extent;
        let mut n = n;
        for axis in dim..3 {
            extent[axis] = 1.0;
            n[axis] = 1;
        }
        Ok(Grid { dim, extent, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> [f64; 3] {
        self.extent
    }

    pub fn points(&self) -> [usize; 3] {
        self.n
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent[axis] / (self.n[axis] + 1) as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    /// Volume weight of one interior node, `prod h_axis`.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    /// `|Omega|`.
    pub fn measure(&self) -> f64 {
        self.extent[..self.dim].iter().product()
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n[0] * (j + self.n[1] * k)
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.n[0];
        let j = (idx / self.n[0]) % self.n[1];
        let k = idx / (self.n[0] * self.n[1]);
        [i, j, k]
    }

    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let m = self.multi_index(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = (m[a] + 1) as f64 * self.spacing(a);
        }
        x
    }

    /// Largest eigenvalue magnitude of the discrete Laplacian, `sum 4/h^2`
    /// (an upper bound; the exact value has `sin^2` factors below one).
    pub fn laplacian_spectral_bound(&self) -> f64 {
        (0..self.dim).map(|a| 4.0 / self.spacing(a).powi(2)).sum()
    }

    fn check(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Field {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return domain(format!("field values must be finite (found {v})"));
        }
        Ok(Field { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Field { grid, values }
    }

    pub fn from_expr(grid: Grid, expr: &FieldExpr) -> Self {
        Self::from_fn(grid, |x| expr.eval(&grid, x))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Second-order central-difference Laplacian with zero ghost values.
pub fn laplacian(grid: &Grid, u: &Field) -> Result<Field> {
    grid.check(u.grid())?;
    let mut out = vec![0.0; grid.len()];
    laplacian_into(grid, u.values(), &mut out);
    Ok(Field {
        grid: *grid,
        values: out,
    })
}

/// Stencil kernel behind [`laplacian`]; `u` and `out` must have `grid.len()`
/// entries.
pub fn laplacian_into(grid: &Grid, u: &[f64], out: &mut [f64]) {
    let [nx, ny, nz] = grid.n;
    debug_assert_eq!(u.len(), grid.len());
    debug_assert_eq!(out.len(), grid.len());
    let ix2 = 1.0 / grid.spacing(0).powi(2);
    if grid.dim == 1 {
        for i in 0..nx {
            let left = if i > 0 { u[i - 1] } else { 0.0 };
            let right = if i + 1 < nx { u[i + 1] } else { 0.0 };
            out[i] = (left - 2.0 * u[i] + right) * ix2;
        }
        return;
    }
    let iy2 = 1.0 / grid.spacing(1).powi(2);
    let iz2 = 1.0 / grid.spacing(2).powi(2);
    let sy = nx;
    let sz = nx * ny;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = i + sy * j + sz * k;
                let c = u[idx];
                let xm = if i > 0 { u[idx - 1] } else { 0.0 };
                let xp = if i + 1 < nx { u[idx + 1] } else { 0.0 };
                let ym = if j > 0 { u[idx - sy] } else { 0.0 };
                let yp = if j + 1 < ny { u[idx + sy] } else { 0.0 };
                let zm = if k > 0 { u[idx - sz] } else { 0.0 };
                let zp = if k + 1 < nz { u[idx + sz] } else { 0.0 };
                out[idx] = (xm - 2.0 * c + xp) * ix2 + (ym - 2.0 * c + yp) * iy2 + (zm - 2.0 * c + zp) * iz2;
            }
        }
    }
}

/// Forward differences on every edge (boundary edges included), scaled by
/// `1/h`. Its adjoint reproduces the Laplacian stencil, so
/// `|grad u|^2 = -<lap u, u>` holds exactly in the discrete inner products.
pub fn edge_gradient(grid: &Grid, u: &[f64]) -> Vec<f64> {
    let [nx, ny, nz] = grid.n;
    let at = |i: isize, j: isize, k: isize| -> f64 {
        if i < 0 || j < 0 || k < 0 || i >= nx as isize || j >= ny as isize || k >= nz as isize {
            0.0
        } else {
            u[grid.index(i as usize, j as usize, k as usize)]
        }
    };
    let mut out = Vec::with_capacity(edge_count(grid));
    for axis in 0..grid.dim {
        let ih = 1.0 / grid.spacing(axis);
        let mut ext = [nx, ny, nz];
        ext[axis] += 1;
        for k in 0..ext[2] {
            for j in 0..ext[1] {
                for i in 0..ext[0] {
                    let (i, j, k) = (i as isize, j as isize, k as isize);
                    let (pi, pj, pk) = match axis {
                        0 => (i - 1, j, k),
                        1 => (i, j - 1, k),
                        _ => (i, j, k - 1),
                    };
                    out.push((at(i, j, k) - at(pi, pj, pk)) * ih);
                }
            }
        }
    }
    out
}

pub fn edge_count(grid: &Grid) -> usize {
    let [nx, ny, nz] = grid.n;
    (0..grid.dim)
        .map(|axis| {
            let mut ext = [nx, ny, nz];
            ext[axis] += 1;
            ext.iter().product::<usize>()
        })
        .sum()
}

/// Discrete Dirichlet form `int |grad u|^2` from [`edge_gradient`] output.
pub fn gradient_energy(grid: &Grid, grad: &[f64]) -> f64 {
    grad.iter().map(|g| g * g).sum::<f64>() * grid.cell_volume()
}

/// Discrete `L2(Omega)` inner product.
pub fn inner(grid: &Grid, u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() * grid.cell_volume()
}

pub fn l2_space(grid: &Grid, u: &Field) -> Result<f64> {
    grid.check(u.grid())?;
    Ok(norm(grid, u.values()))
}

pub(crate) fn norm(grid: &Grid, u: &[f64]) -> f64 {
    inner(grid, u, u).sqrt()
}

/// Composite trapezoid in time of per-level squared norms.
pub fn spacetime_norm_sq(dt: f64, level_sq: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = level_sq.len();
    level_sq
        .enumerate()
        .map(|(j, v)| if j == 0 || j + 1 == n { 0.5 * v } else { v })
        .sum::<f64>()
        * dt
}

/// `L2(Q)` norm of a trajectory: midpoint in space, trapezoid in time.
pub fn l2_spacetime(traj: &crate::solver::TrajectorySolution) -> f64 {
    let g = traj.grid();
    let sq = traj.levels().iter().map(|u| inner(g, u, u));
    spacetime_norm_sq(traj.dt(), sq).sqrt()
}

/// Closed-form spatial profiles used for initial data, forcing shapes and
/// test functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldExpr {
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude * prod_a sin(k_a pi x_a / L_a)`.
    SinPiProduct {
        amplitude: f64,
        #[serde(default = "default_modes")]
        modes: [u32; 3],
    },
    /// `amplitude * prod_a x_a (L_a - x_a) / L_a^2`.
    Parabola {
        amplitude: f64,
    },
    /// Smooth compactly supported bump `amplitude * exp(1 - 1/(1 - r^2))`,
    /// `r = |x - center| / radius`.
    Bump {
        amplitude: f64,
        center: [f64; 3],
        radius: f64,
    },
}

fn default_modes() -> [u32; 3] {
    [1, 1, 1]
}

impl FieldExpr {
    pub fn sin_mode(amplitude: f64, modes: [u32; 3]) -> Self {
        FieldExpr::SinPiProduct { amplitude, modes }
    }

    pub fn eval(&self, grid: &Grid, x: [f64; 3]) -> f64 {
        let ext = grid.extent();
        let d = grid.dim();
        match self {
            FieldExpr::Zero => 0.0,
            FieldExpr::Constant { value } => *value,
            FieldExpr::SinPiProduct { amplitude, modes } => {
                amplitude
                    * (0..d)
                        .map(|a| (modes[a] as f64 * PI * x[a] / ext[a]).sin())
                        .product::<f64>()
            }
            FieldExpr::Parabola { amplitude } => {
                amplitude
                    * (0..d)
                        .map(|a| x[a] * (ext[a] - x[a]) / (ext[a] * ext[a]))
                        .product::<f64>()
            }
            FieldExpr::Bump {
                amplitude,
                center,
                radius,
            } => {
                let r2 = (0..d).map(|a| (x[a] - center[a]).powi(2)).sum::<f64>() / (radius * radius);
                if r2 >= 1.0 {
                    0.0
                } else {
                    amplitude * (1.0 - 1.0 / (1.0 - r2)).exp()
                }
            }
        }
    }

    /// Closed-form Laplacian, where available.
    pub fn laplacian_at(&self, grid: &Grid, x: [f64; 3]) -> Option<f64> {
        let ext = grid.extent();
        let d = grid.dim();
        match self {
            FieldExpr::Zero | FieldExpr::Constant { .. } => Some(0.0),
            FieldExpr::SinPiProduct { .. } => {
                Some(-self.sin_eigenvalue(grid).unwrap_or(0.0) * self.eval(grid, x))
            }
            FieldExpr::Parabola { amplitude } => {
                let factors: Vec<f64> = (0..d).map(|a| x[a] * (ext[a] - x[a]) / (ext[a] * ext[a])).collect();
                let mut lap = 0.0;
                for a in 0..d {
                    let others: f64 = (0..d).filter(|&b| b != a).map(|b| factors[b]).product();
                    lap += -2.0 / (ext[a] * ext[a]) * others;
                }
                Some(amplitude * lap)
            }
            FieldExpr::Bump { .. } => None,
        }
    }

    /// `sum_a (k_a pi / L_a)^2` for sine products.
    pub fn sin_eigenvalue(&self, grid: &Grid) -> Option<f64> {
        match self {
            FieldExpr::SinPiProduct { modes, .. } => Some(
                (0..grid.dim())
                    .map(|a| (modes[a] as f64 * PI / grid.extent()[a]).powi(2))
                    .sum(),
            ),
            _ => None,
        }
    }

    /// Checks the expression vanishes on `partial Omega` (sampled on faces).
    pub fn vanishes_on_boundary(&self, grid: &Grid) -> bool {
        match self {
            FieldExpr::Zero | FieldExpr::Parabola { .. } => true,
            FieldExpr::Constant { value } => *value == 0.0,
            FieldExpr::SinPiProduct { .. } | FieldExpr::Bump { .. } => {
                let ext = grid.extent();
                let d = grid.dim();
                let samples = 7;
                for axis in 0..d {
                    for face in [0.0, ext[axis]] {
                        for s in 0..samples * samples {
                            let mut x = [0.0; 3];
                            let mut q = s;
                            for (b, xb) in x.iter_mut().enumerate().take(d) {
                                if b == axis {
                                    *xb = face;
                                } else {
                                    *xb = ext[b] * ((q % samples) as f64 + 0.5) / samples as f64;
                                    q /= samples;
                                }
                            }
                            let v = self.eval(grid, x);
                            let scale = self.amplitude().abs().max(1.0);
                            if v.abs() > 1e-12 * scale {
                                return false;
                            }
                        }
                    }
                }
                true
            }
        }
    }

    fn amplitude(&self) -> f64 {
        match self {
            FieldExpr::Zero => 0.0,
            FieldExpr::Constant { value } => *value,
            FieldExpr::SinPiProduct { amplitude, .. }
            | FieldExpr::Parabola { amplitude }
            | FieldExpr::Bump { amplitude, .. } => *amplitude,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, FieldExpr::Zero) || self.amplitude() == 0.0
    }
}
