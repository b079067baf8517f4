//! Log-barrier Newton method for linear objectives under convex quadratic
//! constraints of squared-difference form.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `g(x) = Σ c (x_a − x_b)² + Σ a_k x_k + b ≤ 0` with every `c ≥ 0`.
#[derive(Debug, Clone, Default)]
pub struct QuadraticConstraint {
    pub squares: Vec<(usize, usize, f64)>,
    pub linear: Vec<(usize, f64)>,
    pub constant: f64,
}

impl QuadraticConstraint {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let q: f64 = self.squares.iter().map(|&(a, b, c)| c * (x[a] - x[b]).powi(2)).sum();
        let l: f64 = self.linear.iter().map(|&(k, a)| a * x[k]).sum();
        q + l + self.constant
    }
}

/// Same constraint with variables renumbered locally, for sparse assembly.
struct Compiled {
    vars: Vec<usize>,
    squares: Vec<(usize, usize, f64)>,
    linear: Vec<(usize, f64)>,
    constant: f64,
}

impl Compiled {
    fn new(c: &QuadraticConstraint) -> Self {
        let mut vars: Vec<usize> = c.squares.iter().flat_map(|&(a, b, _)| [a, b]).chain(c.linear.iter().map(|&(k, _)| k)).collect();
        vars.sort_unstable();
        vars.dedup();
        let local = |g: usize| vars.binary_search(&g).expect("variable collected above");
        let squares = c.squares.iter().map(|&(a, b, w)| (local(a), local(b), w)).collect();
        let linear = c.linear.iter().map(|&(k, a)| (local(k), a)).collect();
        Self { vars, squares, linear, constant: c.constant }
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let q: f64 = self.squares.iter().map(|&(a, b, c)| c * (x[self.vars[a]] - x[self.vars[b]]).powi(2)).sum();
        let l: f64 = self.linear.iter().map(|&(k, a)| a * x[self.vars[k]]).sum();
        q + l + self.constant
    }

    fn gradient(&self, x: &DVector<f64>) -> Vec<f64> {
        let mut g = vec![0.0; self.vars.len()];
        for &(a, b, c) in &self.squares {
            let d = 2.0 * c * (x[self.vars[a]] - x[self.vars[b]]);
            g[a] += d;
            g[b] -= d;
        }
        for &(k, a) in &self.linear {
            g[k] += a;
        }
        g
    }
}

#[derive(Debug, Clone)]
pub struct BarrierSettings {
    /// Target for the barrier gap estimate `p / t`.
    pub tol: f64,
    /// Factor by which `t` grows between centering steps.
    pub mu: f64,
    pub t0: f64,
    pub max_newton: usize,
    pub max_outer: usize,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self { tol: 1e-9, mu: 10.0, t0: 1.0, max_newton: 200, max_outer: 40 }
    }
}

#[derive(Debug, Clone)]
pub struct BarrierSolution {
    pub x: DVector<f64>,
    /// `λ_k = 1 / (t · (−g_k(x)))`, approximately optimal multipliers.
    pub multipliers: Vec<f64>,
    pub gap_estimate: f64,
    pub converged: bool,
    pub newton_steps: usize,
}

/// Minimizes `cᵀx` over `{g_k(x) ≤ 0}` with the variables marked in `fixed`
/// held at their starting values. `x0` must be strictly feasible.
pub fn minimize_linear(
    c: &DVector<f64>,
    constraints: &[QuadraticConstraint],
    fixed: &[bool],
    x0: DVector<f64>,
    settings: &BarrierSettings,
) -> Result<BarrierSolution> {
    let n = x0.len();
    if c.len() != n || fixed.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: c.len().min(fixed.len()) });
    }
    let compiled: Vec<Compiled> = constraints.iter().map(Compiled::new).collect();
    if let Some((k, v)) = compiled.iter().map(|g| g.value(&x0)).enumerate().find(|(_, v)| !(*v < 0.0)) {
        return Err(Error::Solver(format!("starting point violates constraint {k} (g = {v})")));
    }
    let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
    let mut pos = vec![usize::MAX; n];
    for (r, &i) in free.iter().enumerate() {
        pos[i] = r;
    }
    let p = compiled.len() as f64;
    let mut x = x0;
    let mut t = settings.t0;
    let mut newton_steps = 0;
    let mut converged = false;

    let barrier = |x: &DVector<f64>, t: f64| -> f64 {
        let mut v = t * c.dot(x);
        for g in &compiled {
            let gv = g.value(x);
            if gv >= 0.0 {
                return f64::INFINITY;
            }
            v -= (-gv).ln();
        }
        v
    };

    for _ in 0..settings.max_outer {
        let mut centered = false;
        for _ in 0..settings.max_newton {
            let nf = free.len();
            let mut grad = DVector::from_iterator(nf, free.iter().map(|&i| t * c[i]));
            let mut hess = DMatrix::<f64>::zeros(nf, nf);
            for g in &compiled {
                let s = -g.value(&x);
                let dg = g.gradient(&x);
                let loc: Vec<usize> = g.vars.iter().map(|&v| pos[v]).collect();
                for (a, &ra) in loc.iter().enumerate() {
                    if ra == usize::MAX {
                        continue;
                    }
                    grad[ra] += dg[a] / s;
                    for (b, &rb) in loc.iter().enumerate() {
                        if rb != usize::MAX {
                            hess[(ra, rb)] += dg[a] * dg[b] / (s * s);
                        }
                    }
                }
                for &(a, b, w) in &g.squares {
                    let (ra, rb) = (loc[a], loc[b]);
                    let h = 2.0 * w / s;
                    if ra != usize::MAX {
                        hess[(ra, ra)] += h;
                    }
                    if rb != usize::MAX {
                        hess[(rb, rb)] += h;
                    }
                    if ra != usize::MAX && rb != usize::MAX {
                        hess[(ra, rb)] -= h;
                        hess[(rb, ra)] -= h;
                    }
                }
            }
            let step = solve_spd(hess, &grad)?;
            let decrement = grad.dot(&step);
            newton_steps += 1;
            if decrement / 2.0 <= 1e-12 {
                centered = true;
                break;
            }
            let mut dx = DVector::zeros(n);
            for (r, &i) in free.iter().enumerate() {
                dx[i] = -step[r];
            }
            let f0 = barrier(&x, t);
            let mut alpha = 1.0;
            loop {
                let trial = &x + &dx * alpha;
                let f1 = barrier(&trial, t);
                if f1.is_finite() && f1 <= f0 - 0.25 * alpha * decrement {
                    x = trial;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    break;
                }
            }
            if alpha < 1e-14 {
                // roundoff floor reached: the current point is as centered as it gets
                centered = true;
                break;
            }
        }
        if !centered {
            break;
        }
        if p / t <= settings.tol {
            converged = true;
            break;
        }
        t *= settings.mu;
    }
    let multipliers = compiled.iter().map(|g| 1.0 / (t * -g.value(&x))).collect();
    Ok(BarrierSolution { x, multipliers, gap_estimate: p / t, converged, newton_steps })
}

/// Solves `H s = g` for symmetric positive (semi)definite `H`, regularizing
/// the diagonal when a plain Cholesky factorization fails.
pub(crate) fn solve_spd(h: DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    if h.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let n = h.nrows();
    let scale = h.diagonal().amax().max(1e-300);
    let band = (0..n).map(|r| (0..r).find(|&c| h[(r, c)] != 0.0).map_or(0, |c| r - c)).max().unwrap_or(0);
    let mut shift = 0.0;
    for _ in 0..20 {
        let mut m = h.clone();
        if shift > 0.0 {
            for i in 0..n {
                m[(i, i)] += shift;
            }
        }
        if 3 * band < n {
            if let Some(x) = banded_cholesky_solve(m, band, g) {
                return Ok(x);
            }
        } else if let Some(ch) = m.cholesky() {
            return Ok(ch.solve(g));
        }
        shift = if shift == 0.0 { 1e-14 * scale } else { shift * 100.0 };
    }
    Err(Error::Solver("Newton system is not positive definite".into()))
}

/// Cholesky factorization restricted to a band of half-width `b`, in place.
fn banded_cholesky_solve(mut a: DMatrix<f64>, b: usize, g: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    for j in 0..n {
        let lo = j.saturating_sub(b);
        let mut d = a[(j, j)];
        for k in lo..j {
            d -= a[(j, k)] * a[(j, k)];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in j + 1..(j + b + 1).min(n) {
            let mut v = a[(i, j)];
            for k in i.saturating_sub(b)..j {
                v -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = v / d;
        }
    }
    let mut y = g.clone();
    for i in 0..n {
        for k in i.saturating_sub(b)..i {
            y[i] -= a[(i, k)] * y[k];
        }
        y[i] /= a[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..(i + b + 1).min(n) {
            y[i] -= a[(k, i)] * y[k];
        }
        y[i] /= a[(i, i)];
    }
    Some(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    #[test]
    fn disc_maximum() {
        // max x + y on x² + y² ≤ 1, written as (x − z)² + (y − z)² ≤ 1 with z pinned at 0
        let g = QuadraticConstraint { squares: vec![(0, 2, 1.0), (1, 2, 1.0)], linear: vec![], constant: -1.0 };
        let sol = minimize_linear(&dvector![-1.0, -1.0, 0.0], &[g], &[false, false, true], dvector![0.0, 0.0, 0.0], &BarrierSettings::default())
            .unwrap();
        assert!(sol.converged);
        assert_abs_diff_eq!(sol.x[0], 0.5f64.sqrt(), epsilon = 1e-6);
        assert_abs_diff_eq!(sol.x[1], 0.5f64.sqrt(), epsilon = 1e-6);
        // KKT: c + λ ∇g = 0 gives λ = 1/√2
        assert_abs_diff_eq!(sol.multipliers[0], 0.5f64.sqrt(), epsilon = 1e-6);
    }

    #[test]
    fn linear_box() {
        // min −x subject to x − 2 ≤ 0 and −x ≤ 0
        let up = QuadraticConstraint { linear: vec![(0, 1.0)], constant: -2.0, ..Default::default() };
        let down = QuadraticConstraint { linear: vec![(0, -1.0)], ..Default::default() };
        let sol = minimize_linear(&dvector![-1.0], &[up, down], &[false], dvector![1.0], &BarrierSettings::default()).unwrap();
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn banded_solve_matches_dense() {
        let n = 12;
        let h = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => 4.0,
            1 => -1.0,
            2 => 0.5,
            _ => 0.0,
        });
        let g = DVector::from_fn(n, |i, _| (i as f64).sin());
        let banded = banded_cholesky_solve(h.clone(), 2, &g).unwrap();
        let dense = h.cholesky().unwrap().solve(&g);
        assert!((banded - dense).amax() < 1e-13);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let g = QuadraticConstraint { linear: vec![(0, 1.0)], constant: -1.0, ..Default::default() };
        assert!(minimize_linear(&dvector![1.0], &[g], &[false], dvector![1.0], &BarrierSettings::default()).is_err());
    }
}
