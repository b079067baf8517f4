//! Checkers around the heat flow as a gradient flow of the entropy.
//!
//! Every checker consumes certified intervals and reports residuals in the
//! conservative direction: a positive residual is a certified violation.
//! Where useful a second, pessimistic residual built from the opposite bounds
//! is stored alongside.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::barrier::solve_spd;
use crate::certified::CertifiedInterval;
use crate::dynamic::{
    certified_action, descend, dynamic_bounds, hj_violation, routing_curve, we_dual_lower, CECurve, DynamicSettings,
    HJSubsolution,
};
use crate::error::{check_len, Error, Result};
use crate::heat::{entropy, fisher, SpectralSemigroup};
use crate::report::CheckReport;
use crate::space::{weighted_laplacian, Density, FiniteEnergySpace, Function};

/// `I_K(t) = ∫_0^t e^{Kr} dr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IKFunction {
    pub k: f64,
}

impl IKFunction {
    pub fn new(k: f64) -> Self {
        Self { k }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if self.k == 0.0 {
            t
        } else {
            (self.k * t).exp_m1() / self.k
        }
    }
}

pub type DistanceOracle<'a> = &'a (dyn Fn(&Density, &Density) -> Result<CertifiedInterval> + Sync);
pub type FlowOracle<'a> = &'a (dyn Fn(&Density, f64) -> Result<Density> + Sync);
pub type Functional<'a> = &'a (dyn Fn(&Density) -> f64 + Sync);

/// `W_E` enclosure on `sp`, as a distance oracle.
pub fn dynamic_oracle(sp: &FiniteEnergySpace, settings: DynamicSettings) -> impl Fn(&Density, &Density) -> Result<CertifiedInterval> + Sync + '_ {
    move |a, b| crate::dynamic::we_distance(sp, a, b, &settings)
}

/// Heat flow on `sp` as a flow oracle.
pub fn heat_oracle<'a>(sp: &'a FiniteEnergySpace, sg: &'a SpectralSemigroup) -> impl Fn(&Density, f64) -> Result<Density> + Sync + 'a {
    move |rho, t| sg.apply_density(sp, rho, t)
}

fn positive_times(tgrid: &[f64]) -> Result<()> {
    if tgrid.is_empty() || tgrid.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument("time grid must be nonempty with positive times".into()));
    }
    Ok(())
}

/// Integrated EVI:
/// `½W²(x_t,σ) − (e^{−Kt}/2)W²(x̄,σ) ≤ I_{−K}(t)(F(σ) − F(x_t))`.
#[allow(clippy::too_many_arguments)]
pub fn evi_integral_check(
    distance: DistanceOracle,
    flow: FlowOracle,
    functional: Functional,
    xbar: &Density,
    sigma: &Density,
    k: f64,
    tgrid: &[f64],
    tol: f64,
) -> Result<CheckReport> {
    positive_times(tgrid)?;
    let d0 = distance(xbar, sigma)?;
    let base = |r: CheckReport| r.num_param("K", k).num_param("tol", tol);
    if d0.upper.is_infinite() {
        let r = CheckReport::new("evi_integral", tgrid.to_vec(), vec![f64::NEG_INFINITY; tgrid.len()], tol);
        return Ok(base(r).detail("vacuous", true));
    }
    let f_sigma = functional(sigma);
    let rows: Vec<(f64, f64, f64, f64)> = tgrid
        .par_iter()
        .map(|&t| {
            let xt = flow(xbar, t)?;
            let dt = distance(&xt, sigma)?;
            let gain = IKFunction::new(-k).eval(t) * (f_sigma - functional(&xt));
            let decay = (-k * t).exp() / 2.0;
            let certified = 0.5 * dt.lower.powi(2) - decay * d0.upper.powi(2) - gain;
            let pessimistic = 0.5 * dt.upper.powi(2) - decay * d0.lower.powi(2) - gain;
            Ok((certified, pessimistic, dt.lower, dt.upper))
        })
        .collect::<Result<_>>()?;
    let r = CheckReport::new("evi_integral", tgrid.to_vec(), rows.iter().map(|r| r.0).collect(), tol)
        .series("pessimistic", rows.iter().map(|r| r.1).collect())
        .series("w_lower", rows.iter().map(|r| r.2).collect())
        .series("w_upper", rows.iter().map(|r| r.3).collect())
        .num_detail("w0_lower", d0.lower)
        .num_detail("w0_upper", d0.upper)
        .detail("vacuous", false);
    Ok(base(r))
}

/// Regularization estimate `F(x_t) ≤ F(y) + W²(x̄,y) / (2 I_K(t))`.
#[allow(clippy::too_many_arguments)]
pub fn evi_regularization_check(
    distance: DistanceOracle,
    flow: FlowOracle,
    functional: Functional,
    xbar: &Density,
    y: &Density,
    k: f64,
    tgrid: &[f64],
    tol: f64,
) -> Result<CheckReport> {
    positive_times(tgrid)?;
    let d0 = distance(xbar, y)?;
    let f_y = functional(y);
    let ik = IKFunction::new(k);
    let rows: Vec<(f64, f64)> = tgrid
        .par_iter()
        .map(|&t| {
            let ft = functional(&flow(xbar, t)?);
            let excess = ft - f_y;
            Ok((excess - d0.upper.powi(2) / (2.0 * ik.eval(t)), excess - d0.lower.powi(2) / (2.0 * ik.eval(t))))
        })
        .collect::<Result<_>>()?;
    Ok(CheckReport::new("evi_regularization", tgrid.to_vec(), rows.iter().map(|r| r.0).collect(), tol)
        .series("pessimistic", rows.iter().map(|r| r.1).collect())
        .num_param("K", k)
        .num_param("tol", tol)
        .num_detail("w_lower", d0.lower)
        .num_detail("w_upper", d0.upper))
}

/// Pairs `(P_t Γ(g), Γ(P_t g))` for every sample and time.
struct BESamples {
    rows: Vec<(f64, Function, Function)>,
}

impl BESamples {
    fn new(sp: &FiniteEnergySpace, sg: &SpectralSemigroup, fsamples: &[Function], tgrid: &[f64]) -> Result<Self> {
        let mut rows = Vec::new();
        for g in fsamples {
            check_len(sp.n(), g.len())?;
            let gamma = sp.gamma_sq(g)?;
            for &t in tgrid {
                rows.push((t, sg.apply(&gamma, t)?, sp.gamma_sq(&sg.apply(g, t)?)?));
            }
        }
        Ok(Self { rows })
    }

    /// Worst margin per time, in grid order.
    fn margins(&self, k: f64, tgrid: &[f64]) -> Vec<f64> {
        tgrid
            .iter()
            .map(|&t| {
                self.rows
                    .iter()
                    .filter(|r| r.0 == t)
                    .flat_map(|(t, pg, gp)| {
                        let decay = (-2.0 * k * t).exp();
                        pg.iter().zip(gp.iter()).map(move |(a, b)| decay * a - b)
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }
}

pub const BE_TOL: f64 = 1e-10;

/// Gradient contractivity `Γ(P_t g) ≤ e^{−2Kt} P_t Γ(g)` on sampled functions;
/// residuals are `−margin` per time.
pub fn be_check(sp: &FiniteEnergySpace, sg: &SpectralSemigroup, k: f64, fsamples: &[Function], tgrid: &[f64]) -> Result<CheckReport> {
    let margins = BESamples::new(sp, sg, fsamples, tgrid)?.margins(k, tgrid);
    let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CheckReport::new("be", tgrid.to_vec(), margins.iter().map(|m| -m).collect(), BE_TOL)
        .num_param("K", k)
        .num_param("samples", fsamples.len() as f64)
        .num_detail("margin", worst))
}

/// Largest `K` passing `be_check` on the samples, by bisection to `1e-9`.
pub fn be_best_k(sp: &FiniteEnergySpace, sg: &SpectralSemigroup, fsamples: &[Function], tgrid: &[f64]) -> Result<f64> {
    if fsamples.is_empty() {
        return Err(Error::InvalidArgument("be_best_k needs at least one sample".into()));
    }
    let samples = BESamples::new(sp, sg, fsamples, tgrid)?;
    let pass = |k: f64| samples.margins(k, tgrid).iter().all(|m| *m >= -BE_TOL);
    let (mut lo, mut hi) = (0.0, 1.0);
    while !pass(lo) {
        lo = 2.0 * lo - 1.0;
        if lo < -1e6 {
            return Ok(f64::NEG_INFINITY);
        }
    }
    hi = f64::max(hi, lo + 1.0);
    while pass(hi) {
        hi *= 2.0;
        if hi > 1e6 {
            return Ok(f64::INFINITY);
        }
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if pass(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Which dynamic distance a checker uses. Both are read off the same
/// enclosure `[HJ lower bound, curve upper bound]`, valid for either since
/// `W_{E,*} ≤ W_E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceSelector {
    We,
    WeStar,
}

impl DistanceSelector {
    pub fn name(&self) -> &'static str {
        match self {
            Self::We => "W_E",
            Self::WeStar => "W_E*",
        }
    }
}

/// `W(P_t ρ0, P_t ρ1) ≤ e^{−Kt} W(ρ0, ρ1)` along a time grid.
#[allow(clippy::too_many_arguments)]
pub fn contractivity_check(
    sp: &FiniteEnergySpace,
    sg: &SpectralSemigroup,
    selector: DistanceSelector,
    rho0: &Density,
    rho1: &Density,
    k: f64,
    tgrid: &[f64],
    settings: &DynamicSettings,
    tol: f64,
) -> Result<CheckReport> {
    positive_times(tgrid)?;
    let dist = |a: &Density, b: &Density| dynamic_bounds(sp, a, b, settings).map(|b| b.interval);
    let d0 = dist(rho0, rho1)?;
    if d0.upper.is_infinite() {
        return Err(Error::InvalidArgument("initial distance is not certified finite".into()));
    }
    let rows: Vec<(CertifiedInterval, f64)> = tgrid
        .par_iter()
        .map(|&t| Ok((dist(&sg.apply_density(sp, rho0, t)?, &sg.apply_density(sp, rho1, t)?)?, (-k * t).exp())))
        .collect::<Result<_>>()?;
    let ratio = |d: &CertifiedInterval| if d0.midpoint() > 0.0 { d.midpoint() / d0.midpoint() } else { 0.0 };
    Ok(CheckReport::new("contractivity", tgrid.to_vec(), rows.iter().map(|(d, f)| d.lower - f * d0.upper).collect(), tol)
        .series("pessimistic", rows.iter().map(|(d, f)| d.upper - f * d0.lower).collect())
        .series("ratio", rows.iter().map(|(d, _)| ratio(d)).collect())
        .series("factor", rows.iter().map(|(_, f)| *f).collect())
        .param("distance", selector.name())
        .num_param("K", k)
        .num_detail("w0_lower", d0.lower)
        .num_detail("w0_upper", d0.upper))
}

/// Backward solution of `∂_s ζ + tΔζ + ζΔφ_s + Γ(φ_s, ζ) = 0`, `ζ_1` given.
#[derive(Debug, Clone)]
pub struct HopfColeSolution {
    pub s: Vec<f64>,
    pub zeta: Vec<Function>,
    pub masses: Vec<f64>,
    /// `max_s ‖Δφ_s‖_∞`.
    pub d: f64,
    pub alpha: f64,
    pub beta: f64,
    pub max_mass_drift: f64,
    /// Excess over `α e^{−D(1−s)} ≤ ζ_s ≤ β e^{D(1−s)}`.
    pub max_bound_excess: f64,
    /// Excess over the implicit-Euler bounds `α(1+dsD)^{−j} ≤ ζ ≤ β(1−dsD)^{−j}`.
    pub max_discrete_bound_excess: f64,
}

fn interpolate_slices(slices: &[Function], s: f64) -> Function {
    let n = slices.len() - 1;
    let pos = (s * n as f64).clamp(0.0, n as f64);
    let k = (pos.floor() as usize).min(n - 1);
    let frac = pos - k as f64;
    &slices[k] * (1.0 - frac) + &slices[k + 1] * frac
}

/// Implicit Euler, `steps` steps from `s = 1` down to `s = 0`. `phi` holds the
/// subsolution at uniformly spaced `s`, re-verified before solving.
pub fn hopf_cole_solve(sp: &FiniteEnergySpace, t: f64, phi: &[Function], zeta1: &Function, steps: usize) -> Result<HopfColeSolution> {
    let n = sp.n();
    check_len(n, zeta1.len())?;
    if !(t > 0.0) || steps == 0 || phi.len() < 2 {
        return Err(Error::InvalidArgument("need t > 0, steps ≥ 1 and at least two potential slices".into()));
    }
    if zeta1.iter().any(|z| !(*z > 0.0)) {
        return Err(Error::InvalidArgument("final datum must be strictly positive".into()));
    }
    let hj = HJSubsolution { delta: 1.0, potentials: phi.to_vec() };
    let viol = hj_violation(sp, &hj)?;
    let scale = phi.iter().map(|p| p.amax()).fold(1.0, f64::max);
    if viol > 1e-9 * scale {
        return Err(Error::InvalidArgument(format!("potentials violate the Hamilton-Jacobi inequality by {viol:e}")));
    }
    let ds = 1.0 / steps as f64;
    let lap = sp.generator_matrix();
    let s_grid: Vec<f64> = (0..=steps).map(|j| j as f64 * ds).collect();
    let lap_phi: Vec<Function> = s_grid.iter().map(|&s| &lap * interpolate_slices(phi, s)).collect();
    let d = lap_phi.iter().map(|v| v.amax()).fold(0.0, f64::max);
    let (alpha, beta) = (zeta1.min(), zeta1.max());
    let mut zeta = vec![DVector::zeros(n); steps + 1];
    zeta[steps] = zeta1.clone();
    let mass1 = sp.m().dot(zeta1);
    let (mut drift, mut excess, mut discrete_excess) = (0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for j in (0..steps).rev() {
        let s = s_grid[j];
        let p = interpolate_slices(phi, s);
        let mut a = &lap * t;
        for i in 0..n {
            a[(i, i)] += lap_phi[j][i];
            for l in 0..n {
                let w = sp.w()[(i, l)];
                if w > 0.0 {
                    let c = w * (p[i] - p[l]) / (2.0 * sp.m()[i]);
                    a[(i, i)] += c;
                    a[(i, l)] -= c;
                }
            }
        }
        let sys = DMatrix::identity(n, n) - a * ds;
        let next = sys
            .lu()
            .solve(&zeta[j + 1])
            .ok_or_else(|| Error::Solver(format!("singular Hopf-Cole step at s = {s}")))?;
        let back = (steps - j) as i32;
        let lo_c = alpha * (-d * (1.0 - s)).exp();
        let hi_c = beta * (d * (1.0 - s)).exp();
        let lo_d = alpha * (1.0 + ds * d).powi(-back);
        let hi_d = if ds * d < 1.0 { beta * (1.0 - ds * d).powi(-back) } else { f64::INFINITY };
        let (zmin, zmax) = (next.min(), next.max());
        if !(zmin > 0.0) {
            return Err(Error::PositivityLoss { step: j, s, min_value: zmin, bound: lo_d });
        }
        excess = excess.max(lo_c - zmin).max(zmax - hi_c);
        discrete_excess = discrete_excess.max(lo_d - zmin).max(zmax - hi_d);
        drift = drift.max((sp.m().dot(&next) - mass1).abs());
        zeta[j] = next;
    }
    let masses = zeta.iter().map(|z| sp.m().dot(z)).collect();
    Ok(HopfColeSolution {
        s: s_grid,
        zeta,
        masses,
        d,
        alpha,
        beta,
        max_mass_drift: drift,
        max_bound_excess: excess,
        max_discrete_bound_excess: discrete_excess,
    })
}

/// Splits the dual expression for `½W²(P_tρ, σ) + tEnt(P_tρ) − t` along the
/// Hopf-Cole curve and compares it with
/// `(t/I_{2K}(t)) ½W²(ρ, σ) + tEnt(σ) − t`.
#[allow(clippy::too_many_arguments)]
pub fn evi_witness_from_hopf_cole(
    sp: &FiniteEnergySpace,
    sg: &SpectralSemigroup,
    t: f64,
    k: f64,
    rho: &Density,
    sigma: &Density,
    phi: &[Function],
    psi: &Function,
    w_upper: f64,
    steps: usize,
    tol: f64,
) -> Result<CheckReport> {
    check_len(sp.n(), psi.len())?;
    let zeta1 = psi.map(|x| (x / t).exp());
    let hc = hopf_cole_solve(sp, t, phi, &zeta1, steps)?;
    let m = sp.m();
    let integral = |f: &Function, dens: &DVector<f64>| -> f64 { (0..sp.n()).map(|i| m[i] * f[i] * dens[i]).sum() };
    let psi_s: Vec<Function> = hc.zeta.iter().map(|z| z.map(|x| t * x.ln())).collect();
    let u: Vec<Function> = hc
        .s
        .iter()
        .zip(&psi_s)
        .map(|(&s, ps)| sg.apply(&(interpolate_slices(phi, s) + ps), t * s))
        .collect::<Result<_>>()?;
    let (r, sg_vals) = (rho.values(), sigma.values());
    let last = phi.len() - 1;
    let value = integral(&sg.apply(&(&phi[last] + psi), t)?, r) - integral(&phi[0], sg_vals) - t * m.dot(&zeta1);
    let term1 = integral(&u[steps], r) - integral(&u[0], sg_vals);
    let term2 = integral(&psi_s[0], sg_vals) - t * m.dot(&hc.zeta[0]);
    let term3 = t * (m.dot(&hc.zeta[0]) - m.dot(&zeta1));
    let bound1 = t / IKFunction::new(2.0 * k).eval(t) * 0.5 * w_upper.powi(2);
    let bound2 = t * entropy(sp, sigma) - t;
    let ds = 1.0 / steps as f64;
    let mut locality = f64::NEG_INFINITY;
    for j in 0..steps {
        let mid = (&u[j] + &u[j + 1]) * 0.5;
        let weight = (2.0 * k * t * (hc.s[j] + 0.5 * ds)).exp() / 2.0;
        let g = sp.gamma_sq(&mid)?;
        for i in 0..sp.n() {
            locality = locality.max((u[j + 1][i] - u[j][i]) / ds + weight * g[i]);
        }
    }
    let residual = value - bound1 - bound2;
    Ok(CheckReport::new("evi_witness", vec![t], vec![residual], tol)
        .num_param("K", k)
        .num_param("steps", steps as f64)
        .num_detail("value", value)
        .num_detail("term1", term1)
        .num_detail("term2", term2)
        .num_detail("term3", term3)
        .num_detail("bound1", bound1)
        .num_detail("bound2", bound2)
        .num_detail("term1_excess", term1 - bound1)
        .num_detail("term2_excess", term2 - bound2)
        .num_detail("split_error", (value - term1 - term2 - term3).abs())
        .num_detail("mass_drift", hc.max_mass_drift)
        .num_detail("locality_defect", locality))
}

/// Runs the Hopf-Cole witness with `φ` from the dual program between `σ` and
/// `P_tρ` and `ψ = t log P_tρ`.
#[allow(clippy::too_many_arguments)]
pub fn evi_witness(
    sp: &FiniteEnergySpace,
    sg: &SpectralSemigroup,
    t: f64,
    k: f64,
    rho: &Density,
    sigma: &Density,
    settings: &DynamicSettings,
    steps: usize,
    tol: f64,
) -> Result<CheckReport> {
    let rho_t = sg.apply_density(sp, rho, t)?;
    if rho_t.values().iter().any(|x| !(*x > 0.0)) {
        return Err(Error::InvalidArgument("P_t ρ must be strictly positive".into()));
    }
    let dual = we_dual_lower(sp, sigma, &rho_t, &DynamicSettings { delta: 1.0, ..settings.clone() })?;
    if dual.squared_lower.is_infinite() {
        return Err(Error::InvalidArgument("σ and P_t ρ have different component masses".into()));
    }
    let w = dynamic_bounds(sp, rho, sigma, settings)?.interval;
    let psi = rho_t.values().map(|x| t * x.ln());
    evi_witness_from_hopf_cole(sp, sg, t, k, rho, sigma, &dual.subsolution.potentials, &psi, w.upper, steps, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JkoMetric {
    /// `(σ − σ_k)ᵀ L_{ρ_k}⁺ (σ − σ_k)` frozen at the current density.
    Linearized,
    /// Certified curve action, optimized jointly with the endpoint.
    Nested,
}

#[derive(Debug, Clone)]
pub struct JkoSettings {
    pub metric: JkoMetric,
    pub max_newton: usize,
    pub dynamic: DynamicSettings,
}

impl Default for JkoSettings {
    fn default() -> Self {
        Self { metric: JkoMetric::Linearized, max_newton: 100, dynamic: DynamicSettings::with_steps(4) }
    }
}

#[derive(Debug, Clone)]
pub struct JkoStep {
    pub density: Density,
    pub objective: f64,
    /// `Ent(ρ_k)`, the objective of staying put.
    pub stay_objective: f64,
    pub flagged: bool,
}

fn mass_entropy(sp: &FiniteEnergySpace, sigma: &DVector<f64>) -> f64 {
    (0..sp.n()).filter(|&i| sigma[i] > 0.0).map(|i| sigma[i] * (sigma[i] / sp.m()[i]).ln()).sum()
}

/// One minimizing-movement step for the entropy.
pub fn jko_step(sp: &FiniteEnergySpace, rho_k: &Density, tau: f64, settings: &JkoSettings) -> Result<JkoStep> {
    check_len(sp.n(), rho_k.len())?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("step size {tau} must be positive")));
    }
    let linear = jko_linearized(sp, rho_k, tau, settings.max_newton)?;
    match settings.metric {
        JkoMetric::Linearized => Ok(linear),
        JkoMetric::Nested => jko_nested(sp, rho_k, tau, &linear, &settings.dynamic),
    }
}

fn jko_linearized(sp: &FiniteEnergySpace, rho_k: &Density, tau: f64, max_newton: usize) -> Result<JkoStep> {
    let n = sp.n();
    let stay = entropy(sp, rho_k);
    let sigma_k = rho_k.to_mass(sp).values().clone();
    let r = rho_k.values();
    let edges: Vec<(usize, usize, f64)> =
        sp.edges().iter().map(|e| (e.i, e.j, e.w * (r[e.i] + r[e.j]) / 2.0)).filter(|e| e.2 > 0.0).collect();
    let l = weighted_laplacian(n, edges.iter().copied());
    let active: Vec<bool> = (0..n).map(|i| edges.iter().any(|e| e.0 == i || e.1 == i)).collect();
    let (labels, count) = crate::space::connected_components(n, edges.iter().map(|e| (e.0, e.1)));
    let mut free = active.clone();
    let mut pinned = vec![false; count];
    for i in 0..n {
        if active[i] && !pinned[labels[i]] {
            pinned[labels[i]] = true;
            free[i] = false;
        }
    }
    let free_idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
    let positive = |s: &DVector<f64>| (0..n).all(|i| !active[i] || s[i] > 0.0);
    let objective = |y: &DVector<f64>| -> Option<f64> {
        let s = &sigma_k + &l * y;
        positive(&s).then(|| mass_entropy(sp, &s) + y.dot(&(&l * y)) / (2.0 * tau))
    };
    let mut y = DVector::zeros(n);
    if !positive(&sigma_k) {
        let push = -rho_k.values();
        let mut eps = 1e-3 * tau;
        while !positive(&(&sigma_k + &l * (&push * eps))) {
            eps *= 0.5;
            if eps < 1e-300 {
                return Err(Error::Solver("no strictly positive start for the JKO step".into()));
            }
        }
        y = push * eps;
    }
    let mut value = objective(&y).expect("positive start");
    let mut converged = free_idx.is_empty();
    for _ in 0..max_newton {
        if free_idx.is_empty() {
            break;
        }
        let s = &sigma_k + &l * &y;
        let lg = DVector::from_fn(n, |i, _| if active[i] { (s[i] / sp.m()[i]).ln() + 1.0 } else { 0.0 });
        let grad = &l * (lg + &y / tau);
        let inv = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| if active[i] { 1.0 / s[i] } else { 0.0 }));
        let hess = &l * inv * &l + &l / tau;
        let h = DMatrix::from_fn(free_idx.len(), free_idx.len(), |a, b| hess[(free_idx[a], free_idx[b])]);
        let g = DVector::from_fn(free_idx.len(), |a, _| grad[free_idx[a]]);
        let step = solve_spd(h, &(-&g))?;
        let decrement = -g.dot(&step);
        if decrement <= 1e-14 * value.abs().max(1.0) {
            converged = true;
            break;
        }
        let mut dir = DVector::zeros(n);
        for (a, &i) in free_idx.iter().enumerate() {
            dir[i] = step[a];
        }
        let mut alpha = 1.0;
        let mut moved = false;
        while alpha > 1e-12 {
            let trial = &y + &dir * alpha;
            if let Some(v) = objective(&trial) {
                if v <= value - 1e-4 * alpha * decrement {
                    y = trial;
                    value = v;
                    moved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !moved {
            converged = decrement <= 1e-12 * value.abs().max(1.0);
            break;
        }
    }
    let s = (&sigma_k + &l * &y).map(|x| x.max(0.0));
    if value > stay {
        return Ok(JkoStep { density: rho_k.clone(), objective: stay, stay_objective: stay, flagged: true });
    }
    let density = Density::normalized(sp, s.component_div(sp.m()))?;
    Ok(JkoStep { density, objective: value, stay_objective: stay, flagged: !converged })
}

fn jko_nested(sp: &FiniteEnergySpace, rho_k: &Density, tau: f64, linear: &JkoStep, settings: &DynamicSettings) -> Result<JkoStep> {
    let stay = entropy(sp, rho_k);
    let s0 = rho_k.to_mass(sp).values().clone();
    let s1 = linear.density.to_mass(sp).values().clone();
    let steps = settings.steps.max(2);
    let lin = CECurve::from_raw((0..=steps).map(|j| {
        let a = j as f64 / steps as f64;
        &s0 * (1.0 - a) + &s1 * a
    }).collect());
    let start = if certified_action(sp, &lin)?.is_finite() {
        lin
    } else {
        match routing_curve(sp, &s0, &s1, steps)? {
            Some(c) => c,
            None => return Ok(JkoStep { flagged: true, ..linear.clone() }),
        }
    };
    let terminal = |s: &DVector<f64>| -> (f64, DVector<f64>) {
        let g = DVector::from_fn(s.len(), |i, _| if s[i] > 0.0 { (s[i] / sp.m()[i]).ln() + 1.0 } else { 0.0 });
        (mass_entropy(sp, s), g)
    };
    let (curve, _, _) = descend(sp, start, 1.0 / (2.0 * tau), Some(&terminal), settings.max_iter);
    let last = curve.slice(curve.steps()).clone();
    let objective = mass_entropy(sp, &last) + certified_action(sp, &curve)? / (2.0 * tau);
    if objective > stay {
        return Ok(JkoStep { density: rho_k.clone(), objective: stay, stay_objective: stay, flagged: true });
    }
    Ok(JkoStep { density: Density::normalized(sp, last.component_div(sp.m()))?, objective, stay_objective: stay, flagged: false })
}

/// `steps` JKO steps of size `tau`, starting densities included.
pub fn jko_trajectory(sp: &FiniteEnergySpace, rho0: &Density, tau: f64, steps: usize, settings: &JkoSettings) -> Result<Vec<Density>> {
    let mut out = vec![rho0.clone()];
    for _ in 0..steps {
        let next = jko_step(sp, out.last().expect("nonempty"), tau, settings)?;
        if next.flagged {
            log::warn!("JKO step flagged (objective {}, stay {})", next.objective, next.stay_objective);
        }
        out.push(next.density);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FunctionalSettings {
    pub samples: usize,
    /// Density floor `ϱ` for the Poincaré transport bound.
    pub floor: f64,
    pub seed: u64,
    pub dynamic: DynamicSettings,
}

impl Default for FunctionalSettings {
    fn default() -> Self {
        Self { samples: 20, floor: 0.1, seed: 0, dynamic: DynamicSettings::default() }
    }
}

fn random_density(sp: &FiniteEnergySpace, rng: &mut ChaCha8Rng, floor: f64, spread: f64) -> Result<Density> {
    let raw = DVector::from_fn(sp.n(), |_, _| rng.random::<f64>().powf(spread));
    let base = Density::normalized(sp, raw)?;
    Density::normalized(sp, base.values() * (1.0 - floor) + DVector::from_element(sp.n(), floor))
}

/// Poincaré transport bound, Talagrand and log-Sobolev on sampled densities.
///
/// Residuals per sample: `W_E^upper² − (c_P/ϱ)∫|ρ1−ρ0|² dm` and
/// `(K/2)(W_E^lower)² − Ent(μ)`; the verdict covers both.
pub fn functional_inequalities(sp: &FiniteEnergySpace, sg: &SpectralSemigroup, k: f64, fsamples: &[Function], settings: &FunctionalSettings) -> Result<CheckReport> {
    let c_p = sg.spectral_gap().map_or(f64::INFINITY, |g| 1.0 / g);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let uniform = Density::uniform(sp);
    let mut jobs = Vec::with_capacity(settings.samples);
    for j in 0..settings.samples {
        let a = random_density(sp, &mut rng, settings.floor, 1.0)?;
        let b = random_density(sp, &mut rng, settings.floor, 1.0)?;
        // sharper samples for the entropy inequalities
        let mu = random_density(sp, &mut rng, 0.0, 1.0 + 4.0 * j as f64 / settings.samples.max(1) as f64)?;
        jobs.push((a, b, mu));
    }
    let rows: Vec<(f64, f64, f64, f64)> = jobs
        .par_iter()
        .map(|(a, b, mu)| {
            let w = dynamic_bounds(sp, a, b, &settings.dynamic)?.interval;
            let l2: f64 = (0..sp.n()).map(|i| sp.m()[i] * (a.values()[i] - b.values()[i]).powi(2)).sum();
            let poincare = w.upper.powi(2) - c_p / settings.floor * l2;
            let wm = dynamic_bounds(sp, mu, &uniform, &settings.dynamic)?.interval;
            let ent = entropy(sp, mu);
            let talagrand = 0.5 * k * wm.lower.powi(2) - ent;
            let kt = if wm.lower > 0.0 { 2.0 * ent / wm.lower.powi(2) } else { f64::INFINITY };
            let f = fisher(sp, mu);
            let lsi = if f > 0.0 { 2.0 * ent / f } else { 0.0 };
            Ok((poincare, talagrand, kt, lsi))
        })
        .collect::<Result<_>>()?;
    let be_pass = if fsamples.is_empty() { None } else { Some(be_check(sp, sg, k, fsamples, &[0.05, 0.1, 0.5, 1.0])?.pass) };
    let grid: Vec<f64> = (0..rows.len()).map(|j| j as f64).collect();
    let residuals = rows.iter().map(|r| r.0.max(r.1)).collect();
    let k_talagrand = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let c_ls = rows.iter().map(|r| r.3).fold(0.0, f64::max);
    let mut report = CheckReport::new("functional_inequalities", grid, residuals, 0.0)
        .series("poincare", rows.iter().map(|r| r.0).collect())
        .series("talagrand", rows.iter().map(|r| r.1).collect())
        .series("lsi_ratio", rows.iter().map(|r| r.3).collect())
        .num_param("K", k)
        .num_param("floor", settings.floor)
        .num_detail("c_p", c_p)
        .num_detail("spectral_gap", sg.spectral_gap().unwrap_or(0.0))
        .num_detail("k_talagrand", k_talagrand)
        .num_detail("c_ls_sampled", c_ls)
        .num_detail("c_ls_from_k", if k > 0.0 { 1.0 / k } else { f64::INFINITY });
    if let Some(p) = be_pass {
        report = report.detail("be_pass", p);
    }
    Ok(report)
}

/// `Ent(ρ_t) ≤ (1−t)Ent(ρ_0) + tEnt(ρ_1) − (K/2)t(1−t)W²` on the interior nodes
/// of a curve, with the bound of `W²` that makes a violation certain.
pub fn entropy_convexity_check(sp: &FiniteEnergySpace, curve: &CECurve, k: f64, w: &CertifiedInterval, tol: f64) -> Result<CheckReport> {
    check_len(sp.n(), curve.slice(0).len())?;
    let w2 = if k >= 0.0 { w.lower.powi(2) } else { w.upper.powi(2) };
    let ent = |j: usize| mass_entropy(sp, curve.slice(j));
    let (e0, e1) = (ent(0), ent(curve.steps()));
    let times = curve.times();
    let inner: Vec<usize> = (1..curve.steps()).collect();
    let residuals = inner
        .iter()
        .map(|&j| {
            let s = times[j];
            ent(j) - ((1.0 - s) * e0 + s * e1 - 0.5 * k * s * (1.0 - s) * w2)
        })
        .collect();
    Ok(CheckReport::new("entropy_convexity", inner.iter().map(|&j| times[j]).collect(), residuals, tol).num_param("K", k))
}

/// Heat-regularized convexity along the nodes `x_n` of a curve:
/// `Ent(P_t x_n) ≤ (1−s_n)Ent(x_0) + s_nEnt(x_N) − (K/2)s_n(1−s_n)d² + ε² s_n(1−s_n)/(2I_K(t))`
/// with `ε² = N² max hop² − d²`, hops bounded by single-segment actions.
pub fn approximate_convexity_check(
    sp: &FiniteEnergySpace,
    sg: &SpectralSemigroup,
    curve: &CECurve,
    k: f64,
    t: f64,
    w: &CertifiedInterval,
    tol: f64,
) -> Result<CheckReport> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("flow time {t} must be positive")));
    }
    let steps = curve.steps();
    let d2 = w.lower.powi(2);
    let mut hop2 = 0.0f64;
    for j in 0..steps {
        let seg = CECurve::from_raw(vec![curve.slice(j).clone(), curve.slice(j + 1).clone()]);
        hop2 = hop2.max(certified_action(sp, &seg)?);
    }
    let eps2 = ((steps * steps) as f64 * hop2 - d2).max(0.0);
    let ent = |j: usize| mass_entropy(sp, curve.slice(j));
    let (e0, e1) = (ent(0), ent(steps));
    let ik = IKFunction::new(k).eval(t);
    let times = curve.times();
    let mut residuals = Vec::with_capacity(steps + 1);
    for (j, &s) in times.iter().enumerate() {
        let flowed = sg.apply_density(sp, &curve.density(sp, j)?, t)?;
        let rhs = (1.0 - s) * e0 + s * e1 - 0.5 * k * s * (1.0 - s) * d2 + eps2 * s * (1.0 - s) / (2.0 * ik);
        residuals.push(entropy(sp, &flowed) - rhs);
    }
    Ok(CheckReport::new("approximate_convexity", times, residuals, tol)
        .num_param("K", k)
        .num_param("t", t)
        .num_detail("eps_sq", eps2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamic::we_geodesic;
    use crate::spaces::{path, two_point};
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn t2_samples() -> Vec<Function> {
        vec![dvector![1.0, 0.0], dvector![0.3, -2.0], dvector![5.0, 4.5]]
    }

    #[test]
    fn ik_limits() {
        assert_eq!(IKFunction::new(0.0).eval(0.7), 0.7);
        for &k in &[1e-8, -1e-8] {
            for j in 0..=10 {
                let t = j as f64 / 10.0;
                assert!((IKFunction::new(k).eval(t) - t).abs() < 1e-7);
            }
        }
        assert_abs_diff_eq!(IKFunction::new(2.0).eval(1.0), (2f64.exp() - 1.0) / 2.0, epsilon = 1e-14);
        assert!(IKFunction::new(-3.0).eval(0.1) > 0.0);
    }

    #[test]
    fn be_on_two_points() {
        let sp = two_point();
        let sg = SpectralSemigroup::new(&sp).unwrap();
        let grid = [0.05, 0.2, 1.0];
        assert!(be_check(&sp, &sg, 4.0, &t2_samples(), &grid).unwrap().pass);
        assert!(!be_check(&sp, &sg, 4.01, &t2_samples(), &grid).unwrap().pass);
        let zero = be_check(&sp, &sg, 7.0, &t2_samples(), &[1e-300]).unwrap();
        assert!(zero.details["margin"].as_f64().unwrap().abs() < 1e-12);
        let k = be_best_k(&sp, &sg, &t2_samples(), &grid).unwrap();
        assert!((k - 4.0).abs() < 1e-6, "{k}");
    }

    #[test]
    fn be_on_disjoint_union() {
        let sp = two_point().disjoint_union(&two_point()).unwrap();
        let sg = SpectralSemigroup::new(&sp).unwrap();
        let f = vec![dvector![1.0, 0.0, 0.5, 2.0], dvector![0.0, 1.0, -1.0, 0.0]];
        let k = be_best_k(&sp, &sg, &f, &[0.1, 0.5]).unwrap();
        assert!((k - 4.0).abs() < 1e-6, "{k}");
    }

    #[test]
    fn hopf_cole_reduces_to_backward_heat() {
        let sp = path(5, 1.0).unwrap();
        let phi = vec![DVector::zeros(5); 3];
        let zeta1 = dvector![1.0, 2.0, 0.5, 3.0, 1.0];
        let hc = hopf_cole_solve(&sp, 0.5, &phi, &zeta1, 40).unwrap();
        assert!(hc.max_mass_drift < 1e-12);
        let heat = crate::heat::heat_implicit(&sp, &zeta1, 0.5, 40).unwrap();
        assert!((&hc.zeta[0] - heat).amax() < 1e-12);
        let flat = hopf_cole_solve(&sp, 0.5, &phi, &DVector::from_element(5, 2.0), 10).unwrap();
        assert!(flat.zeta.iter().all(|z| (z.add_scalar(-2.0)).amax() < 1e-13));
    }

    #[test]
    fn hopf_cole_on_two_points_keeps_mass() {
        let sp = two_point();
        let g = dvector![0.2, -0.1];
        let c = 0.5 * sp.gamma_sq(&g).unwrap().max();
        let phi: Vec<Function> = (0..=4).map(|j| g.add_scalar(-c * j as f64 / 4.0)).collect();
        let hc = hopf_cole_solve(&sp, 0.5, &phi, &dvector![1.0, 2.0], 20).unwrap();
        for m in &hc.masses {
            assert!((m - 1.5).abs() < 1e-10);
        }
        assert!(hc.max_discrete_bound_excess <= 1e-12);
        let bad: Vec<Function> = (0..=4).map(|j| g.add_scalar(j as f64)).collect();
        assert!(hopf_cole_solve(&sp, 0.5, &bad, &dvector![1.0, 2.0], 20).is_err());
    }

    #[test]
    fn jko_fixed_point_and_direction() {
        let sp = two_point();
        let one = jko_step(&sp, &Density::uniform(&sp), 0.1, &JkoSettings::default()).unwrap();
        assert!((one.density.values().add_scalar(-1.0)).amax() < 1e-9);
        let start = Density::new(&sp, dvector![2.0, 0.0]).unwrap();
        let step = jko_step(&sp, &start, 0.01, &JkoSettings::default()).unwrap();
        assert!(step.objective <= step.stay_objective);
        assert!(step.density.values()[0] < 2.0 && step.density.values()[1] > 0.0);
        let traj = jko_trajectory(&sp, &start, 0.05, 10, &JkoSettings::default()).unwrap();
        let ents: Vec<f64> = traj.iter().map(|r| entropy(&sp, r)).collect();
        assert!(ents.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn nested_jko_is_no_worse_than_staying() {
        let sp = path(3, 1.0).unwrap();
        let rho = Density::new(&sp, dvector![2.0, 0.6, 0.4]).unwrap();
        let settings = JkoSettings { metric: JkoMetric::Nested, ..JkoSettings::default() };
        let step = jko_step(&sp, &rho, 0.05, &settings).unwrap();
        assert!(step.objective <= step.stay_objective);
    }

    #[test]
    fn two_point_contraction_and_constants() {
        let sp = two_point();
        let sg = SpectralSemigroup::new(&sp).unwrap();
        let a = Density::new(&sp, dvector![1.6, 0.4]).unwrap();
        let b = Density::new(&sp, dvector![0.5, 1.5]).unwrap();
        let r = contractivity_check(&sp, &sg, DistanceSelector::We, &a, &b, 4.0, &[0.05, 0.2], &DynamicSettings::default(), 1e-3)
            .unwrap();
        for (ratio, f) in r.series["ratio"].iter().zip(&r.series["factor"]) {
            assert!((ratio - f).abs() < 1e-3, "{ratio} vs {f}");
        }
        let fi = functional_inequalities(&sp, &sg, 1.0, &t2_samples(), &FunctionalSettings { samples: 5, ..Default::default() }).unwrap();
        assert!((fi.details["c_p"].as_f64().unwrap() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn convexity_on_constant_curve_is_equality() {
        let sp = two_point();
        let rho = Density::new(&sp, dvector![1.2, 0.8]).unwrap();
        let curve = CECurve::linear(&sp, &rho, &rho, 4).unwrap();
        let r = entropy_convexity_check(&sp, &curve, 1.0, &CertifiedInterval::exact(0.0, "same"), 1e-12).unwrap();
        assert!(r.residuals.iter().all(|x| x.abs() < 1e-15));
        let a = Density::new(&sp, dvector![1.8, 0.2]).unwrap();
        let g = we_geodesic(&sp, &a, &rho, &DynamicSettings::default()).unwrap();
        let w = CertifiedInterval::new(0.3, 0.3, "closed form", "closed form").unwrap();
        assert!(!entropy_convexity_check(&sp, &g.curve, 1e3, &w, 1e-9).unwrap().pass);
    }
}
