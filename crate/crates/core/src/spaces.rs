//! Named space builders and the Mehler reference for the Ornstein-Uhlenbeck grid.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::quadrature::gauss_hermite_probabilists;
use crate::space::{FiniteEnergySpace, Function};

pub const BUILDERS: [&str; 6] = ["two_point", "path", "cycle", "complete", "ou_grid", "degenerate_grid"];

/// Two points with equal mass and unit conductance.
pub fn two_point() -> FiniteEnergySpace {
    FiniteEnergySpace::from_rows(vec![0.5, 0.5], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).expect("valid two-point space")
}

fn uniform_graph(n: usize, w: f64, adjacent: impl Fn(usize, usize) -> bool) -> Result<FiniteEnergySpace> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 points, got {n}")));
    }
    if !(w > 0.0) {
        return Err(Error::InvalidArgument(format!("conductance {w} must be positive")));
    }
    let mat = DMatrix::from_fn(n, n, |i, j| if i != j && adjacent(i, j) { w } else { 0.0 });
    FiniteEnergySpace::new(vec![1.0; n], mat)
}

pub fn path(n: usize, w: f64) -> Result<FiniteEnergySpace> {
    uniform_graph(n, w, |i, j| i.abs_diff(j) == 1)
}

pub fn cycle(n: usize, w: f64) -> Result<FiniteEnergySpace> {
    uniform_graph(n, w, |i, j| i.abs_diff(j) == 1 || i.abs_diff(j) == n - 1)
}

pub fn complete(n: usize, w: f64) -> Result<FiniteEnergySpace> {
    uniform_graph(n, w, |_, _| true)
}

fn grid_points(half_width: f64, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) || !(half_width > 0.0) {
        return Err(Error::InvalidArgument(format!("grid needs h > 0 and L > 0, got h = {h}, L = {half_width}")));
    }
    let cells = (2.0 * half_width / h).round();
    if (cells * h - 2.0 * half_width).abs() > 1e-9 * half_width {
        return Err(Error::InvalidArgument(format!("h = {h} does not divide [−{half_width}, {half_width}]")));
    }
    Ok((0..=cells as usize).map(|i| -half_width + i as f64 * h).collect())
}

/// Ornstein-Uhlenbeck discretization on `[−L, L]` with spacing `h`.
///
/// `m_i ∝ exp(−x_i²/2)` and `w_{i,i+1} = exp(−(x_i² + x_{i+1}²)/4) / (Z h²)`,
/// so that `Δf ≈ f″ − x f′`.
pub fn ou_grid(half_width: f64, h: f64) -> Result<FiniteEnergySpace> {
    let x = grid_points(half_width, h)?;
    let n = x.len();
    let raw: Vec<f64> = x.iter().map(|x| (-x * x / 2.0).exp()).collect();
    let z: f64 = raw.iter().sum();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        let c = (-(x[i] * x[i] + x[i + 1] * x[i + 1]) / 4.0).exp() / (z * h * h);
        w[(i, i + 1)] = c;
        w[(i + 1, i)] = c;
    }
    FiniteEnergySpace::new(raw, w)
}

pub fn ou_grid_points(half_width: f64, h: f64) -> Result<Vec<f64>> {
    grid_points(half_width, h)
}

/// `rows × cols` Gaussian-weighted grid whose conductances act only along the
/// first coordinate. Point `(a, b)` has index `b * rows + a`; each column `b`
/// is its own conductance component.
pub fn degenerate_grid(rows: usize, cols: usize, h: f64) -> Result<FiniteEnergySpace> {
    if rows < 2 || cols < 1 {
        return Err(Error::InvalidArgument(format!("degenerate grid needs rows ≥ 2, cols ≥ 1, got {rows}x{cols}")));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("grid spacing {h} must be positive")));
    }
    let coord = |k: usize, len: usize| (k as f64 - (len as f64 - 1.0) / 2.0) * h;
    let n = rows * cols;
    let idx = |a: usize, b: usize| b * rows + a;
    let mut m = vec![0.0; n];
    for b in 0..cols {
        for a in 0..rows {
            let (x, y) = (coord(a, rows), coord(b, cols));
            m[idx(a, b)] = (-(x * x + y * y) / 2.0).exp();
        }
    }
    let z: f64 = m.iter().sum();
    let mut w = DMatrix::zeros(n, n);
    for b in 0..cols {
        let y = coord(b, cols);
        for a in 0..rows - 1 {
            let (x0, x1) = (coord(a, rows), coord(a + 1, rows));
            let c = (-(x0 * x0 + x1 * x1) / 4.0 - y * y / 2.0).exp() / (z * h * h);
            w[(idx(a, b), idx(a + 1, b))] = c;
            w[(idx(a + 1, b), idx(a, b))] = c;
        }
    }
    FiniteEnergySpace::new(m, w)
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: Option<f64>) -> Result<f64> {
    match params.get(key).copied().or(default) {
        Some(v) => Ok(v),
        None => Err(Error::InvalidArgument(format!("missing parameter '{key}'"))),
    }
}

fn count(params: &BTreeMap<String, f64>, key: &str, default: Option<f64>) -> Result<usize> {
    let v = param(params, key, default)?;
    if v < 0.0 || v.fract() != 0.0 {
        return Err(Error::InvalidArgument(format!("parameter '{key}' = {v} is not a count")));
    }
    Ok(v as usize)
}

/// Builds a registered space from its name and numeric parameters.
pub fn build_space(name: &str, params: &BTreeMap<String, f64>) -> Result<FiniteEnergySpace> {
    match name {
        "two_point" => Ok(two_point()),
        "path" => path(count(params, "n", None)?, param(params, "w", Some(1.0))?),
        "cycle" => cycle(count(params, "n", None)?, param(params, "w", Some(1.0))?),
        "complete" => complete(count(params, "n", None)?, param(params, "w", Some(1.0))?),
        "ou_grid" => ou_grid(param(params, "L", Some(4.0))?, param(params, "h", None)?),
        "degenerate_grid" => degenerate_grid(
            count(params, "rows", Some(3.0))?,
            count(params, "cols", Some(2.0))?,
            param(params, "h", Some(1.0))?,
        ),
        other => Err(Error::Unknown { kind: "space builder", name: other.to_string() }),
    }
}

/// Piecewise-linear interpolant of grid values, constant outside the grid.
fn interpolate(xs: &[f64], ys: &Function, x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let h = xs[1] - xs[0];
    let k = (((x - xs[0]) / h).floor() as usize).min(n - 2);
    let s = (x - xs[k]) / h;
    (1.0 - s) * ys[k] + s * ys[k + 1]
}

/// Continuum OU semigroup `P_t f(x) = ∫ f(e^{−t}x + √(1−e^{−2t}) y) dγ(y)`
/// evaluated at the grid points with a 64-node Gauss-Hermite rule.
pub fn mehler_oracle(half_width: f64, h: f64, f: &Function, t: f64) -> Result<Function> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative time {t}")));
    }
    let xs = grid_points(half_width, h)?;
    crate::error::check_len(xs.len(), f.len())?;
    let rule = gauss_hermite_probabilists(64);
    let total: f64 = rule.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Solver(format!("Gauss-Hermite weights sum to {total}")));
    }
    let a = (-t).exp();
    let b = (1.0 - (-2.0 * t).exp()).sqrt();
    Ok(DVector::from_iterator(
        xs.len(),
        xs.iter().map(|&x| rule.iter().map(|(y, w)| w * interpolate(&xs, f, a * x + b * y)).sum()),
    ))
}
