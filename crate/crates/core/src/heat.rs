//! Heat semigroup, entropy and Fisher information.
//!
//! `P_t` is computed from the eigen-decomposition of the symmetrized generator
//! `M^{1/2} Δ M^{-1/2}`; an implicit-Euler path is kept alongside as an
//! independent route.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::quadrature::composite_gauss;
use crate::space::{Density, FiniteEnergySpace, Function};

/// Spectral representation of `P_t = exp(tΔ)`.
#[derive(Debug, Clone)]
pub struct SpectralSemigroup {
    /// Eigenvalues of `−Δ`, ascending, the first one zero.
    eigenvalues: DVector<f64>,
    /// Columns are eigenvectors, orthonormal in `L²(m)`.
    basis: DMatrix<f64>,
    m: DVector<f64>,
}

impl SpectralSemigroup {
    pub fn new(sp: &FiniteEnergySpace) -> Result<Self> {
        let n = sp.n();
        let sqrt_m = sp.m().map(f64::sqrt);
        let k = sp.stiffness_matrix();
        let s = DMatrix::from_fn(n, n, |i, j| k[(i, j)] / (sqrt_m[i] * sqrt_m[j]));
        let eig = SymmetricEigen::new(s);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let cutoff = 1e-12 * lmax.max(1.0);
        let mut eigenvalues = DVector::zeros(n);
        let mut basis = DMatrix::zeros(n, n);
        for (col, &idx) in order.iter().enumerate() {
            let lam = eig.eigenvalues[idx];
            eigenvalues[col] = if lam.abs() <= cutoff { 0.0 } else { lam };
            let mut v = eig.eigenvectors.column(idx).component_div(&sqrt_m);
            // fix sign so that the first nonzero entry is positive
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-14) {
                if *first < 0.0 {
                    v *= -1.0;
                }
            }
            basis.set_column(col, &v);
        }
        if eigenvalues[0] < 0.0 {
            return Err(Error::Solver(format!("negative eigenvalue {} of −Δ", eigenvalues[0])));
        }
        Ok(Self { eigenvalues, basis, m: sp.m().clone() })
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn n(&self) -> usize {
        self.m.len()
    }

    /// Smallest nonzero eigenvalue when the space is connected.
    pub fn spectral_gap(&self) -> Option<f64> {
        if self.n() < 2 || self.eigenvalues[1] == 0.0 {
            None
        } else {
            Some(self.eigenvalues[1])
        }
    }

    /// Sup-norm distance between `Δ` and `−V Λ Vᵀ M`.
    pub fn reconstruction_error(&self, sp: &FiniteEnergySpace) -> f64 {
        let lam = DMatrix::from_diagonal(&self.eigenvalues);
        let vtm = self.basis.transpose() * DMatrix::from_diagonal(&self.m);
        let rebuilt = -(&self.basis * lam * vtm);
        (sp.generator_matrix() - rebuilt).amax()
    }

    fn coefficients(&self, f: &Function) -> DVector<f64> {
        self.basis.tr_mul(&f.component_mul(&self.m))
    }

    /// Applies the spectral multiplier `λ ↦ g(λ)`.
    pub fn apply_multiplier(&self, f: &Function, g: impl Fn(f64) -> f64) -> Result<Function> {
        check_len(self.n(), f.len())?;
        let mut c = self.coefficients(f);
        for (ck, &lam) in c.iter_mut().zip(self.eigenvalues.iter()) {
            *ck *= g(lam);
        }
        Ok(&self.basis * c)
    }

    /// `P_t f`.
    pub fn apply(&self, f: &Function, t: f64) -> Result<Function> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative time {t}")));
        }
        self.apply_multiplier(f, |lam| (-lam * t).exp())
    }

    /// `P_t ρ` as a density; tiny negative roundoff is clipped.
    pub fn apply_density(&self, sp: &FiniteEnergySpace, rho: &Density, t: f64) -> Result<Density> {
        let mut v = self.apply(rho.values(), t)?;
        v.iter_mut().for_each(|x| *x = x.max(0.0));
        Density::normalized(sp, v)
    }
}

pub fn heat_apply(sg: &SpectralSemigroup, f: &Function, t: f64) -> Result<Function> {
    sg.apply(f, t)
}

/// `P_t f` by `steps` implicit-Euler steps `(M + dt K) u_{k+1} = M u_k`.
pub fn heat_implicit(sp: &FiniteEnergySpace, f: &Function, t: f64, steps: usize) -> Result<Function> {
    check_len(sp.n(), f.len())?;
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative time {t}")));
    }
    if t == 0.0 {
        return Ok(f.clone());
    }
    let dt = t / steps as f64;
    let m = DMatrix::from_diagonal(sp.m());
    let system = &m + sp.stiffness_matrix() * dt;
    let chol = system
        .cholesky()
        .ok_or_else(|| Error::Solver("implicit heat step matrix is not positive definite".into()))?;
    let mut u = f.clone();
    for _ in 0..steps {
        u = chol.solve(&u.component_mul(sp.m()));
    }
    Ok(u)
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// `Ent(ρm) = ∫ ρ log ρ dm`, with `0 log 0 = 0`.
pub fn entropy(sp: &FiniteEnergySpace, rho: &Density) -> f64 {
    sp.m().iter().zip(rho.values().iter()).map(|(m, r)| m * xlogx(*r)).sum()
}

/// `F(ρ) = ∫_{ρ>0} Γ(ρ)/ρ dm`.
pub fn fisher(sp: &FiniteEnergySpace, rho: &Density) -> f64 {
    let g = sp.gamma_sq(rho.values()).expect("density length matches space");
    (0..sp.n())
        .filter(|&i| rho.values()[i] > 0.0)
        .map(|i| sp.m()[i] * g[i] / rho.values()[i])
        .sum()
}

/// `|4E(√ρ) − F(ρ)|`; vanishes for strongly local forms, not for graphs.
pub fn fisher_defect(sp: &FiniteEnergySpace, rho: &Density) -> f64 {
    let root = rho.values().map(f64::sqrt);
    let e = sp.energy(&root, &root).expect("density length matches space");
    (4.0 * e - fisher(sp, rho)).abs()
}

/// `E(ρ, log ρ) = −d/dt Ent(P_t ρ)` for a strictly positive density.
pub fn entropy_dissipation(sp: &FiniteEnergySpace, rho: &Density) -> f64 {
    let v = rho.values();
    if v.iter().any(|x| *x <= 0.0) {
        return f64::INFINITY;
    }
    sp.edges().iter().map(|e| e.w * (v[e.i] - v[e.j]) * (v[e.i].ln() - v[e.j].ln())).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct DissipationPoint {
    pub t: f64,
    /// Centered difference `(Ent(t+dt) − Ent(t−dt)) / 2dt`.
    pub entropy_rate: f64,
    pub fisher: f64,
    /// Exact `E(ρ_t, log ρ_t)` on the graph.
    pub dissipation: f64,
    /// `|entropy_rate + fisher|`.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DissipationReport {
    pub dt: f64,
    pub points: Vec<DissipationPoint>,
    pub max_residual: f64,
    /// `max_t |E(ρ_t, log ρ_t) − F(ρ_t)|`, the part of the residual that survives `dt → 0`.
    pub max_locality_defect: f64,
}

/// Compares the entropy decay rate along `P_t ρ0` with the Fisher information.
pub fn entropy_dissipation_check(
    sp: &FiniteEnergySpace,
    sg: &SpectralSemigroup,
    rho0: &Density,
    tgrid: &[f64],
    dt: f64,
) -> Result<DissipationReport> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {dt} must be positive")));
    }
    if tgrid.windows(2).any(|w| w[1] <= w[0]) || tgrid.iter().any(|&t| t - dt < 0.0) {
        return Err(Error::InvalidArgument("time grid must be increasing with t ≥ dt".into()));
    }
    let mut points = Vec::with_capacity(tgrid.len());
    for &t in tgrid {
        let ent = |s: f64| -> Result<f64> { Ok(entropy(sp, &sg.apply_density(sp, rho0, s)?)) };
        let rate = (ent(t + dt)? - ent(t - dt)?) / (2.0 * dt);
        let rho_t = sg.apply_density(sp, rho0, t)?;
        let f = fisher(sp, &rho_t);
        points.push(DissipationPoint {
            t,
            entropy_rate: rate,
            fisher: f,
            dissipation: entropy_dissipation(sp, &rho_t),
            residual: (rate + f).abs(),
        });
    }
    let max_residual = points.iter().map(|p| p.residual).fold(0.0, f64::max);
    let max_locality_defect = points.iter().map(|p| (p.dissipation - p.fisher).abs()).fold(0.0, f64::max);
    Ok(DissipationReport { dt, points, max_residual, max_locality_defect })
}

/// Smooth bump `exp(−1/(r(1−r)))` on `(0, 1)`, unnormalized.
fn bump(r: f64) -> f64 {
    if r <= 0.0 || r >= 1.0 {
        0.0
    } else {
        (-1.0 / (r * (1.0 - r))).exp()
    }
}

fn mollifier_weights(panels: usize) -> (Vec<(f64, f64)>, f64) {
    let rule = composite_gauss(0.0, 1.0, panels);
    let total: f64 = rule.iter().map(|(r, w)| w * bump(*r)).sum();
    (rule, total)
}

/// `h^ε f = ∫ η(t/ε)/ε · e^{(K∧0)t} P_t f dt` with a normalized bump kernel.
pub fn mollify(sg: &SpectralSemigroup, f: &Function, eps: f64, k: f64) -> Result<Function> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("mollification scale {eps} must be positive")));
    }
    let (rule, total) = mollifier_weights(16);
    let (_, refined) = mollifier_weights(32);
    if ((total - refined) / refined).abs() > 1e-8 {
        return Err(Error::Solver(format!("mollifier quadrature did not converge: {total} vs {refined}")));
    }
    let kappa = k.min(0.0);
    let weights: Vec<(f64, f64)> = rule.iter().map(|(r, w)| (eps * r, w * bump(*r) / total)).collect();
    sg.apply_multiplier(f, |lam| weights.iter().map(|(s, a)| a * ((kappa - lam) * s).exp()).sum())
}

/// Heat trajectory `t ↦ P_t ρ0` sampled on a time grid.
#[derive(Debug, Clone)]
pub struct HeatTrajectory {
    pub times: Vec<f64>,
    pub densities: Vec<Density>,
}

impl HeatTrajectory {
    pub fn new(sp: &FiniteEnergySpace, sg: &SpectralSemigroup, rho0: &Density, times: &[f64]) -> Result<Self> {
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("trajectory times must be increasing".into()));
        }
        let densities = times.iter().map(|&t| sg.apply_density(sp, rho0, t)).collect::<Result<Vec<_>>>()?;
        Ok(Self { times: times.to_vec(), densities })
    }

    /// CSV with columns `t, point, density`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["t", "point", "density"])?;
        for (t, rho) in self.times.iter().zip(&self.densities) {
            for (i, v) in rho.values().iter().enumerate() {
                wtr.write_record([format!("{t}"), i.to_string(), format!("{v:e}")])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}
