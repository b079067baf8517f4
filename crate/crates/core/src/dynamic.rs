//! Dynamic distances from the Dirichlet form.
//!
//! Upper bounds on `W_E` come from piecewise-linear mass curves. On a segment
//! the flux is held constant, so the edge weight `w̃_e(σ_s)` moves linearly and
//! its time-harmonic mean is the logarithmic mean of the endpoint weights; the
//! resulting action `Δt · vᵀ L_c⁺ v` dominates the exact action of the curve.
//! Lower bounds come from discrete Hamilton-Jacobi subsolutions.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::barrier::{minimize_linear, BarrierSettings, QuadraticConstraint};
use crate::certified::CertifiedInterval;
use crate::error::{check_len, Error, Result};
use crate::heat::{fisher, SpectralSemigroup};
use crate::intrinsic::{intrinsic_distance_bounds, GammaBallProgram};
use crate::space::{laplacian_pinv_solve, weighted_laplacian, Density, FiniteEnergySpace, Function, MassVector};
use crate::transport::{kantorovich, ExtendedDistanceMatrix};

/// `L_ρ` with edge weights `w̃_ij = w_ij (ρ_i + ρ_j) / 2`, so that
/// `fᵀ L_ρ f = ∫ Γ(f) ρ dm`.
#[derive(Debug, Clone)]
pub struct WeightedFormOperator {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl WeightedFormOperator {
    pub fn new(sp: &FiniteEnergySpace, rho: &Density) -> Result<Self> {
        check_len(sp.n(), rho.len())?;
        let r = rho.values();
        let edges = sp.edges().iter().map(|e| (e.i, e.j, e.w * (r[e.i] + r[e.j]) / 2.0)).collect();
        Ok(Self { n: sp.n(), edges })
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        weighted_laplacian(self.n, self.edges.iter().copied())
    }

    /// `fᵀ L_ρ f`.
    pub fn quadratic(&self, f: &Function) -> f64 {
        self.edges.iter().map(|&(i, j, c)| c * (f[i] - f[j]).powi(2)).sum()
    }

    /// `vᵀ L_ρ⁺ v`, or `+∞` when `v` has a component outside the range.
    pub fn dual_norm_sq(&self, v: &DVector<f64>) -> f64 {
        laplacian_pinv_solve(self.n, &self.edges, v).map_or(f64::INFINITY, |(q, _)| q.max(0.0))
    }
}

/// Mass curve on the uniform grid `t_k = k/N` of `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CECurve {
    slices: Vec<DVector<f64>>,
}

impl CECurve {
    pub fn new(slices: Vec<MassVector>) -> Result<Self> {
        if slices.len() < 2 {
            return Err(Error::InvalidArgument("a curve needs at least two slices".into()));
        }
        let n = slices[0].len();
        for s in &slices {
            check_len(n, s.len())?;
        }
        Ok(Self { slices: slices.into_iter().map(|s| s.values().clone()).collect() })
    }

    pub(crate) fn from_raw(slices: Vec<DVector<f64>>) -> Self {
        Self { slices }
    }

    /// `σ_k = (1 − k/N) σ_0 + (k/N) σ_N`.
    pub fn linear(sp: &FiniteEnergySpace, rho0: &Density, rho1: &Density, steps: usize) -> Result<Self> {
        if steps < 1 {
            return Err(Error::InvalidArgument("need at least one step".into()));
        }
        let (a, b) = (rho0.to_mass(sp), rho1.to_mass(sp));
        let slices = (0..=steps)
            .map(|k| {
                let s = k as f64 / steps as f64;
                a.values() * (1.0 - s) + b.values() * s
            })
            .collect();
        Ok(Self { slices })
    }

    pub fn steps(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps() as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|k| k as f64 * self.dt()).collect()
    }

    pub fn slice(&self, k: usize) -> &DVector<f64> {
        &self.slices[k]
    }

    pub fn slices(&self) -> &[DVector<f64>] {
        &self.slices
    }

    pub fn density(&self, sp: &FiniteEnergySpace, k: usize) -> Result<Density> {
        Density::normalized(sp, self.slices[k].component_div(sp.m()).map(|x| x.max(0.0)))
    }

    pub fn to_json(&self) -> Value {
        json!({ "times": self.times(), "slices": self.slices.iter().map(|s| s.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>() })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let slices = json_slices(v)?;
        let masses = slices.into_iter().map(MassVector::new).collect::<Result<Vec<_>>>()?;
        Self::new(masses)
    }
}

fn json_slices(v: &Value) -> Result<Vec<DVector<f64>>> {
    let rows = v["slices"].as_array().ok_or_else(|| Error::InvalidArgument("missing 'slices' array".into()))?;
    rows.iter()
        .enumerate()
        .map(|(k, r)| {
            let vals = r
                .as_array()
                .ok_or_else(|| Error::InvalidArgument(format!("slice {k} is not an array")))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| Error::InvalidArgument(format!("slice {k} has a non-number"))))
                .collect::<Result<Vec<f64>>>()?;
            Ok(DVector::from_vec(vals))
        })
        .collect()
}

/// Squared speed `σ̇ᵀ L_ρ⁺ σ̇` on step `k`, with `ρ` the density of the averaged
/// mass `(σ_k + σ_{k+1}) / 2`; `+∞` when no admissible flux exists.
pub fn curve_speed(sp: &FiniteEnergySpace, curve: &CECurve, k: usize) -> Result<f64> {
    check_len(sp.n(), curve.slice(0).len())?;
    if k >= curve.steps() {
        return Err(Error::InvalidArgument(format!("step {k} out of range for {} steps", curve.steps())));
    }
    let v = (curve.slice(k + 1) - curve.slice(k)) / curve.dt();
    let mid = (curve.slice(k) + curve.slice(k + 1)) * 0.5;
    let edges: Vec<(usize, usize, f64)> =
        sp.edges().iter().map(|e| (e.i, e.j, e.w * (mid[e.i] / sp.m()[e.i] + mid[e.j] / sp.m()[e.j]) / 2.0)).collect();
    Ok(laplacian_pinv_solve(sp.n(), &edges, &v).map_or(f64::INFINITY, |(q, _)| q.max(0.0)))
}

/// Sum of squared speeds times `Δt` at midpoint densities; second order but
/// not an upper bound.
pub fn midpoint_action(sp: &FiniteEnergySpace, curve: &CECurve) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..curve.steps() {
        total += curve.dt() * curve_speed(sp, curve, k)?;
    }
    Ok(total)
}

/// Logarithmic mean, `0` when either argument vanishes.
pub(crate) fn log_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let r = a / b - 1.0;
    if r.abs() < 1e-6 {
        b * (1.0 + r / 2.0 - r * r / 12.0)
    } else {
        (a - b) / (a.ln() - b.ln())
    }
}

/// `∂/∂a` of the logarithmic mean.
fn log_mean_da(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let r = a / b - 1.0;
    if r.abs() < 1e-6 {
        0.5 - r / 6.0
    } else {
        (1.0 - log_mean(a, b) / a) / (a / b).ln()
    }
}

fn tilde_weight(sp: &FiniteEnergySpace, sigma: &DVector<f64>, i: usize, j: usize, w: f64) -> f64 {
    w * (sigma[i] / sp.m()[i] + sigma[j] / sp.m()[j]) / 2.0
}

/// Certified action `Σ_k Δt v_kᵀ L_{c_k}⁺ v_k` of the piecewise-linear curve,
/// with `c_k` the logarithmic mean of the endpoint weights; optionally with the
/// gradient with respect to every slice.
fn action_eval(sp: &FiniteEnergySpace, slices: &[DVector<f64>], want_grad: bool) -> Option<(f64, Vec<DVector<f64>>)> {
    let n = sp.n();
    let steps = slices.len() - 1;
    let dt = 1.0 / steps as f64;
    let mut total = 0.0;
    let mut grad = if want_grad { vec![DVector::zeros(n); slices.len()] } else { Vec::new() };
    for k in 0..steps {
        let (s0, s1) = (&slices[k], &slices[k + 1]);
        let ab: Vec<(f64, f64)> =
            sp.edges().iter().map(|e| (tilde_weight(sp, s0, e.i, e.j, e.w), tilde_weight(sp, s1, e.i, e.j, e.w))).collect();
        let edges: Vec<(usize, usize, f64)> =
            sp.edges().iter().zip(&ab).map(|(e, &(a, b))| (e.i, e.j, log_mean(a, b))).collect();
        let v = (s1 - s0) / dt;
        let (q, x) = laplacian_pinv_solve(n, &edges, &v)?;
        total += dt * q.max(0.0);
        if want_grad {
            grad[k + 1] += &x * 2.0;
            grad[k] -= &x * 2.0;
            for (e, (&(a, b), &(_, _, c))) in sp.edges().iter().zip(ab.iter().zip(&edges)) {
                if c <= 0.0 {
                    continue;
                }
                let dq_dc = -(x[e.i] - x[e.j]).powi(2) * dt;
                let (da, db) = (log_mean_da(a, b), log_mean_da(b, a));
                for &p in &[e.i, e.j] {
                    let dw = e.w / (2.0 * sp.m()[p]);
                    grad[k][p] += dq_dc * da * dw;
                    grad[k + 1][p] += dq_dc * db * dw;
                }
            }
        }
    }
    Some((total, grad))
}

/// Certified upper bound on the squared `W_E` length of `curve`.
pub fn certified_action(sp: &FiniteEnergySpace, curve: &CECurve) -> Result<f64> {
    check_len(sp.n(), curve.slice(0).len())?;
    Ok(action_eval(sp, curve.slices(), false).map_or(f64::INFINITY, |(a, _)| a))
}

/// Settings shared by the geodesic and Hamilton-Jacobi solvers.
#[derive(Debug, Clone)]
pub struct DynamicSettings {
    /// Number of time steps `N`.
    pub steps: usize,
    /// Time horizon `δ` of the Hamilton-Jacobi program.
    pub delta: f64,
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub barrier: BarrierSettings,
}

impl Default for DynamicSettings {
    fn default() -> Self {
        Self { steps: 8, delta: 1.0, restarts: 2, seed: 0, max_iter: 3000, barrier: BarrierSettings::default() }
    }
}

impl DynamicSettings {
    pub fn with_steps(steps: usize) -> Self {
        Self { steps, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct GeodesicSolution {
    pub curve: CECurve,
    /// Certified upper bound on `W_E²`.
    pub action: f64,
    pub iterations: usize,
}

/// Component masses of a mass vector.
pub(crate) fn component_masses(sp: &FiniteEnergySpace, sigma: &DVector<f64>) -> Vec<f64> {
    let mut out = vec![0.0; sp.n_components()];
    for i in 0..sp.n() {
        out[sp.component_of(i)] += sigma[i];
    }
    out
}

fn same_component_masses(sp: &FiniteEnergySpace, a: &DVector<f64>, b: &DVector<f64>) -> bool {
    component_masses(sp, a).iter().zip(component_masses(sp, b)).all(|(x, y)| (x - y).abs() <= 1e-10)
}

/// Hop distances and BFS parents in the conductance graph.
fn hop_tables(sp: &FiniteEnergySpace) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let n = sp.n();
    let mut adj = vec![Vec::new(); n];
    for e in sp.edges() {
        adj[e.i].push(e.j);
        adj[e.j].push(e.i);
    }
    let mut dist = vec![vec![usize::MAX; n]; n];
    let mut parent = vec![vec![usize::MAX; n]; n];
    for s in 0..n {
        dist[s][s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[s][v] == usize::MAX {
                    dist[s][v] = dist[s][u] + 1;
                    parent[s][v] = u;
                    queue.push_back(v);
                }
            }
        }
    }
    (dist, parent)
}

/// Curve that carries each parcel of an optimal hop-distance plan along a
/// shortest path at constant speed; finite whenever every parcel needs at most
/// `N` hops, even when the endpoints vanish somewhere.
pub(crate) fn routing_curve(sp: &FiniteEnergySpace, s0: &DVector<f64>, s1: &DVector<f64>, steps: usize) -> Result<Option<CECurve>> {
    let n = sp.n();
    let (dist, parent) = hop_tables(sp);
    let d = DMatrix::from_fn(n, n, |i, j| if dist[i][j] == usize::MAX { f64::INFINITY } else { dist[i][j] as f64 });
    let d = ExtendedDistanceMatrix::new(d)?;
    let sol = kantorovich(&d, s0, s1, 2)?;
    let Some(plan) = sol.plan else { return Ok(None) };
    let mut slices = vec![DVector::zeros(n); steps + 1];
    for x in 0..n {
        for y in 0..n {
            let mass = plan.matrix()[(x, y)];
            if mass <= 0.0 {
                continue;
            }
            let hops = dist[x][y];
            if hops > steps {
                return Ok(None);
            }
            let mut path = vec![y];
            while *path.last().unwrap() != x {
                let last = *path.last().unwrap();
                path.push(parent[x][last]);
            }
            path.reverse();
            for (k, slice) in slices.iter_mut().enumerate() {
                let pos = hops as f64 * k as f64 / steps as f64;
                let j = (pos.floor() as usize).min(hops);
                let frac = pos - j as f64;
                if j == hops || frac == 0.0 {
                    slice[path[j]] += mass;
                } else {
                    slice[path[j]] += mass * (1.0 - frac);
                    slice[path[j + 1]] += mass * frac;
                }
            }
        }
    }
    slices[0] = s0.clone();
    slices[steps] = s1.clone();
    Ok(Some(CECurve { slices }))
}

pub(crate) type Terminal<'a> = &'a dyn Fn(&DVector<f64>) -> (f64, DVector<f64>);

/// Exponentiated-gradient descent on `scale · action + terminal(σ_N)` over the
/// interior slices (and the last one when `terminal` is given), each kept on
/// its component-mass simplex. Zero entries stay zero.
pub(crate) fn descend(sp: &FiniteEnergySpace, start: CECurve, scale: f64, terminal: Option<Terminal>, max_iter: usize) -> (CECurve, f64, usize) {
    let steps = start.steps();
    let last = if terminal.is_some() { steps } else { steps - 1 };
    let objective = |slices: &[DVector<f64>], grad: bool| -> Option<(f64, Vec<DVector<f64>>)> {
        let (a, mut g) = action_eval(sp, slices, grad)?;
        let mut v = scale * a;
        g.iter_mut().for_each(|x| *x *= scale);
        if let Some(term) = terminal {
            let (tv, tg) = term(&slices[steps]);
            v += tv;
            if grad {
                g[steps] += tg;
            }
        }
        Some((v, g))
    };
    let mut slices = start.slices;
    let Some((mut value, mut grad)) = objective(&slices, true) else {
        return (CECurve { slices }, f64::INFINITY, 0);
    };
    let masses: Vec<Vec<f64>> = (0..=steps).map(|k| component_masses(sp, &slices[k])).collect();
    let mut eta = 1.0 / (1.0 + (1..=last).map(|k| grad[k].amax()).fold(0.0, f64::max));
    let mut stall = 0;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = slices.clone();
            for k in 1..=last {
                let mut top = vec![f64::NEG_INFINITY; sp.n_components()];
                for i in 0..sp.n() {
                    if slices[k][i] > 0.0 {
                        let c = sp.component_of(i);
                        top[c] = top[c].max(-eta * grad[k][i]);
                    }
                }
                let mut totals = vec![0.0; sp.n_components()];
                for i in 0..sp.n() {
                    if slices[k][i] > 0.0 {
                        let c = sp.component_of(i);
                        trial[k][i] = slices[k][i] * (-eta * grad[k][i] - top[c]).exp();
                        totals[c] += trial[k][i];
                    }
                }
                for i in 0..sp.n() {
                    let c = sp.component_of(i);
                    if totals[c] > 0.0 {
                        trial[k][i] *= masses[k][c] / totals[c];
                    }
                }
            }
            match objective(&trial, true) {
                Some((v, g)) if v < value => {
                    let gain = (value - v) / value.abs().max(1e-300);
                    stall = if gain < 1e-13 { stall + 1 } else { 0 };
                    slices = trial;
                    value = v;
                    grad = g;
                    eta *= 1.5;
                    accepted = true;
                    break;
                }
                _ => eta *= 0.5,
            }
        }
        if !accepted || stall >= 20 {
            break;
        }
    }
    (CECurve { slices }, value, iterations)
}

/// Approximate `W_E` geodesic: best certified action over the linear and
/// routed starts plus seeded multiplicative perturbations.
pub fn we_geodesic(sp: &FiniteEnergySpace, rho0: &Density, rho1: &Density, settings: &DynamicSettings) -> Result<GeodesicSolution> {
    check_len(sp.n(), rho0.len())?;
    check_len(sp.n(), rho1.len())?;
    if settings.steps < 2 {
        return Err(Error::InvalidArgument(format!("need N ≥ 2 steps, got {}", settings.steps)));
    }
    let (s0, s1) = (rho0.to_mass(sp).values().clone(), rho1.to_mass(sp).values().clone());
    let linear = CECurve::linear(sp, rho0, rho1, settings.steps)?;
    if !same_component_masses(sp, &s0, &s1) {
        return Ok(GeodesicSolution { curve: linear, action: f64::INFINITY, iterations: 0 });
    }
    if (&s0 - &s1).amax() == 0.0 {
        return Ok(GeodesicSolution { curve: linear, action: 0.0, iterations: 0 });
    }
    let mut starts = Vec::new();
    if certified_action(sp, &linear)?.is_finite() {
        starts.push(linear.clone());
    }
    if let Some(routed) = routing_curve(sp, &s0, &s1, settings.steps)? {
        if certified_action(sp, &routed)?.is_finite() {
            starts.push(routed);
        }
    }
    let Some(base) = starts.first().cloned() else {
        return Ok(GeodesicSolution { curve: linear, action: f64::INFINITY, iterations: 0 });
    };
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    for _ in 0..settings.restarts {
        let mut slices = base.slices.clone();
        for k in 1..settings.steps {
            let masses = component_masses(sp, &slices[k]);
            for i in 0..sp.n() {
                slices[k][i] *= (rng.random::<f64>() - 0.5).exp();
            }
            let now = component_masses(sp, &slices[k]);
            for i in 0..sp.n() {
                let c = sp.component_of(i);
                if now[c] > 0.0 {
                    slices[k][i] *= masses[c] / now[c];
                }
            }
        }
        starts.push(CECurve { slices });
    }
    let mut best: Option<GeodesicSolution> = None;
    for start in starts {
        let (curve, _, iterations) = descend(sp, start, 1.0, None, settings.max_iter);
        let action = certified_action(sp, &curve)?;
        if best.as_ref().is_none_or(|b| action < b.action) {
            best = Some(GeodesicSolution { curve, action, iterations });
        }
    }
    Ok(best.expect("at least one start"))
}

/// Potentials `φ_k` on the grid `t_k = kδ/N` of `[0, δ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HJSubsolution {
    pub delta: f64,
    pub potentials: Vec<Function>,
}

impl HJSubsolution {
    pub fn steps(&self) -> usize {
        self.potentials.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.delta / self.steps() as f64
    }

    /// `2δ ∫ (φ_N ρ1 − φ_0 ρ0) dm`, a lower bound on `W_{E,*}²` when feasible.
    pub fn squared_lower_bound(&self, sp: &FiniteEnergySpace, rho0: &Density, rho1: &Density) -> f64 {
        let last = &self.potentials[self.steps()];
        let first = &self.potentials[0];
        let pair: f64 = (0..sp.n()).map(|i| sp.m()[i] * (last[i] * rho1.values()[i] - first[i] * rho0.values()[i])).sum();
        2.0 * self.delta * pair
    }

    pub fn to_json(&self) -> Value {
        let times: Vec<f64> = (0..=self.steps()).map(|k| k as f64 * self.dt()).collect();
        json!({ "delta": self.delta, "times": times, "slices": self.potentials.iter().map(|p| p.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>() })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let delta = v["delta"].as_f64().ok_or_else(|| Error::InvalidArgument("missing 'delta'".into()))?;
        let potentials = json_slices(v)?;
        if potentials.len() < 2 {
            return Err(Error::InvalidArgument("a subsolution needs at least two slices".into()));
        }
        Ok(Self { delta, potentials })
    }
}

/// Largest `(φ_{k+1,i} − φ_{k,i})/Δt + ½ max(Γ(φ_k)_i, Γ(φ_{k+1})_i)`, with `Γ`
/// recomputed directly from the conductance matrix.
pub fn hj_violation(sp: &FiniteEnergySpace, hj: &HJSubsolution) -> Result<f64> {
    let n = sp.n();
    let (w, m) = (sp.w(), sp.m());
    let gamma = |f: &Function| -> Vec<f64> {
        (0..n).map(|i| (0..n).map(|j| w[(i, j)] * (f[i] - f[j]).powi(2)).sum::<f64>() / (2.0 * m[i])).collect()
    };
    let mut worst = f64::NEG_INFINITY;
    for k in 0..hj.steps() {
        check_len(n, hj.potentials[k].len())?;
        let (g0, g1) = (gamma(&hj.potentials[k]), gamma(&hj.potentials[k + 1]));
        for i in 0..n {
            let slope = (hj.potentials[k + 1][i] - hj.potentials[k][i]) / hj.dt();
            worst = worst.max(slope + 0.5 * g0[i].max(g1[i]));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub subsolution: HJSubsolution,
    /// Certified lower bound on `W_{E,*}²`.
    pub squared_lower: f64,
    pub converged: bool,
}

/// Maximizes `∫ (φ_N ρ1 − φ_0 ρ0) dm` over discrete subsolutions on `[0, δ]`.
pub fn we_dual_lower(sp: &FiniteEnergySpace, rho0: &Density, rho1: &Density, settings: &DynamicSettings) -> Result<DualSolution> {
    let n = sp.n();
    check_len(n, rho0.len())?;
    check_len(n, rho1.len())?;
    let steps = settings.steps;
    if steps < 2 || !(settings.delta > 0.0) {
        return Err(Error::InvalidArgument(format!("need N ≥ 2 and δ > 0, got N = {steps}, δ = {}", settings.delta)));
    }
    let dt = settings.delta / steps as f64;
    let zero = HJSubsolution { delta: settings.delta, potentials: vec![DVector::zeros(n); steps + 1] };
    let (s0, s1) = (rho0.to_mass(sp).values().clone(), rho1.to_mass(sp).values().clone());
    if !same_component_masses(sp, &s0, &s1) {
        return Ok(DualSolution { subsolution: zero, squared_lower: f64::INFINITY, converged: true });
    }
    if (&s0 - &s1).amax() == 0.0 {
        return Ok(DualSolution { subsolution: zero, squared_lower: 0.0, converged: true });
    }
    let var = |k: usize, i: usize| k * n + i;
    let mut constraints = Vec::with_capacity(2 * steps * n);
    for k in 0..steps {
        for side in [k, k + 1] {
            for i in 0..n {
                let mut g = QuadraticConstraint { linear: vec![(var(k + 1, i), 1.0), (var(k, i), -1.0)], ..Default::default() };
                for j in 0..n {
                    let w = sp.w()[(i, j)];
                    if w > 0.0 {
                        g.squares.push((var(side, i), var(side, j), dt * w / (4.0 * sp.m()[i])));
                    }
                }
                constraints.push(g);
            }
        }
    }
    let nv = (steps + 1) * n;
    let mut c = DVector::zeros(nv);
    for i in 0..n {
        c[var(steps, i)] = -s1[i];
        c[var(0, i)] = s0[i];
    }
    let mut fixed = vec![false; nv];
    for nodes in sp.components() {
        fixed[var(0, nodes[0])] = true;
    }
    let x0 = DVector::from_fn(nv, |v, _| -((v / n) as f64) * dt);
    let sol = minimize_linear(&c, &constraints, &fixed, x0, &settings.barrier)?;
    let potentials: Vec<Function> = (0..=steps).map(|k| sol.x.rows(k * n, n).into_owned()).collect();
    let mut hj = HJSubsolution { delta: settings.delta, potentials };
    let viol = hj_violation(sp, &hj)?;
    if viol > 0.0 {
        // shift slopes down uniformly; Γ is unchanged by time-dependent constants
        let shift = viol * (1.0 + 1e-12) + 1e-300;
        for (k, p) in hj.potentials.iter_mut().enumerate() {
            p.add_scalar_mut(-(k as f64) * dt * shift);
        }
    }
    let squared_lower = hj.squared_lower_bound(sp, rho0, rho1).max(0.0);
    Ok(DualSolution { subsolution: hj, squared_lower, converged: sol.converged })
}

/// Certified enclosure shared by `W_{E,*} ≤ W_E`, with both witnesses.
#[derive(Debug, Clone)]
pub struct DynamicBounds {
    pub interval: CertifiedInterval,
    pub geodesic: GeodesicSolution,
    pub dual: DualSolution,
}

pub fn dynamic_bounds(sp: &FiniteEnergySpace, rho0: &Density, rho1: &Density, settings: &DynamicSettings) -> Result<DynamicBounds> {
    let geodesic = we_geodesic(sp, rho0, rho1, settings)?;
    let dual = we_dual_lower(sp, rho0, rho1, settings)?;
    let lower = dual.squared_lower.sqrt();
    let upper = geodesic.action.sqrt();
    let mut interval = if lower.is_infinite() {
        CertifiedInterval::infinite("endpoint masses differ on a conductance component")
    } else {
        // the solvers are independent, so tiny crossings are roundoff
        CertifiedInterval::new(lower.min(upper), upper, "discrete Hamilton-Jacobi subsolution", "piecewise-linear curve, log-mean action")?
    };
    interval.flagged = !dual.converged || lower > upper * (1.0 + 1e-9) + 1e-12;
    Ok(DynamicBounds { interval, geodesic, dual })
}

/// `W_E(ρ0, ρ1)`: upper bound from a curve, lower bound from the dual program.
pub fn we_distance(sp: &FiniteEnergySpace, rho0: &Density, rho1: &Density, settings: &DynamicSettings) -> Result<CertifiedInterval> {
    Ok(dynamic_bounds(sp, rho0, rho1, settings)?.interval)
}

/// `W_{E,*}(ρ0, ρ1)`: lower bound from a subsolution, upper bound from `W_E`.
pub fn we_dual(sp: &FiniteEnergySpace, rho0: &Density, rho1: &Density, settings: &DynamicSettings) -> Result<CertifiedInterval> {
    we_distance(sp, rho0, rho1, settings)
}

/// `W_{E,*,1}(ρ0, ρ1) = sup { ∫ φ (ρ1 − ρ0) dm : Γ(φ) ≤ 1 }`.
pub fn we_dual_l1(sp: &FiniteEnergySpace, rho0: &Density, rho1: &Density) -> Result<CertifiedInterval> {
    check_len(sp.n(), rho0.len())?;
    check_len(sp.n(), rho1.len())?;
    let c = (rho1.values() - rho0.values()).component_mul(sp.m());
    Ok(GammaBallProgram::new(sp, c)?.solve()?.value)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SandwichReport {
    pub wde_lower: f64,
    pub wde_upper: f64,
    pub we_star_lower: f64,
    pub we_upper: f64,
    pub we_star_l1_lower: f64,
    pub tol: f64,
    /// `W_{d_E}^lower − W_{E,*}^lower`, should be `≤ 2 tol`.
    pub chain_gap: f64,
    /// `W_{E,*}^lower − W_E^upper`, should be `≤ 2 tol`.
    pub dual_gap: f64,
    pub pass: bool,
}

/// Certified ordering `W_{d_E} ≤ W_{E,*} ≤ W_E`.
pub fn sandwich_check(sp: &FiniteEnergySpace, rho0: &Density, rho1: &Density, settings: &DynamicSettings, tol: f64) -> Result<SandwichReport> {
    let (lo, hi) = intrinsic_distance_bounds(sp)?;
    let (s0, s1) = (rho0.to_mass(sp).values().clone(), rho1.to_mass(sp).values().clone());
    let wde_lower = kantorovich(&lo, &s0, &s1, 2)?.distance(2);
    let wde_upper = kantorovich(&hi, &s0, &s1, 2)?.distance(2);
    let bounds = dynamic_bounds(sp, rho0, rho1, settings)?;
    let l1 = we_dual_l1(sp, rho0, rho1)?;
    let we_star_lower = bounds.dual.squared_lower.sqrt();
    let we_upper = bounds.geodesic.action.sqrt();
    let gap = |a: f64, b: f64| if a.is_infinite() && b.is_infinite() { 0.0 } else { a - b };
    let chain_gap = gap(wde_lower, we_star_lower);
    let dual_gap = gap(we_star_lower, we_upper);
    Ok(SandwichReport {
        wde_lower,
        wde_upper,
        we_star_lower,
        we_upper,
        we_star_l1_lower: l1.lower,
        tol,
        chain_gap,
        dual_gap,
        pass: chain_gap <= 2.0 * tol && dual_gap <= 2.0 * tol,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SpeedPoint {
    pub t: f64,
    /// Squared speed of the sampled trajectory on `[t, t + Δt]`.
    pub sampled_speed: f64,
    /// Squared speed of the exact velocity `−K ρ_t` at the step midpoint.
    pub exact_speed: f64,
    pub fisher: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SpeedReport {
    pub points: Vec<SpeedPoint>,
    /// `max (sampled_speed − fisher)`.
    pub max_excess: f64,
    /// `max (exact_speed − fisher)`, free of time discretization.
    pub max_exact_excess: f64,
}

/// Compares `‖ρ'_t‖²` along the heat flow with the Fisher information.
pub fn heat_curve_speed_bound(sp: &FiniteEnergySpace, sg: &SpectralSemigroup, rho0: &Density, tgrid: &[f64]) -> Result<SpeedReport> {
    if tgrid.len() < 2 || tgrid.windows(2).any(|w| w[1] <= w[0]) || tgrid[0] < 0.0 {
        return Err(Error::InvalidArgument("time grid must have at least two increasing nonnegative times".into()));
    }
    let k = sp.stiffness_matrix();
    let mut points = Vec::new();
    for w in tgrid.windows(2) {
        let (a, b) = (sg.apply_density(sp, rho0, w[0])?, sg.apply_density(sp, rho0, w[1])?);
        let curve = CECurve::from_raw(vec![a.to_mass(sp).values().clone(), b.to_mass(sp).values().clone()]);
        let sampled = curve_speed(sp, &curve, 0)? * (1.0 / (w[1] - w[0])).powi(2) * curve.dt().powi(2);
        let tm = 0.5 * (w[0] + w[1]);
        let mid = sg.apply_density(sp, rho0, tm)?;
        let velocity = -(&k * mid.values());
        let exact = WeightedFormOperator::new(sp, &mid)?.dual_norm_sq(&velocity);
        points.push(SpeedPoint { t: w[0], sampled_speed: sampled, exact_speed: exact, fisher: fisher(sp, &mid) });
    }
    let max_excess = points.iter().map(|p| p.sampled_speed - p.fisher).fold(f64::NEG_INFINITY, f64::max);
    let max_exact_excess = points.iter().map(|p| p.exact_speed - p.fisher).fold(f64::NEG_INFINITY, f64::max);
    Ok(SpeedReport { points, max_excess, max_exact_excess })
}
