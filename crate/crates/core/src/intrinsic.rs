//! Distances induced by the energy and by function families.

use nalgebra::{DMatrix, DVector};

use crate::barrier::{minimize_linear, BarrierSettings, QuadraticConstraint};
use crate::certified::CertifiedInterval;
use crate::error::{check_len, Error, Result};
use crate::space::{laplacian_pinv_solve, FiniteEnergySpace, Function};
use crate::transport::ExtendedDistanceMatrix;

/// `sup { cᵀf : Γ(f)_i ≤ 1 for all i }` for a weight vector `c`.
#[derive(Debug, Clone)]
pub struct GammaBallProgram<'a> {
    pub sp: &'a FiniteEnergySpace,
    pub c: Function,
    pub settings: BarrierSettings,
}

#[derive(Debug, Clone)]
pub struct GammaBallSolution {
    pub value: CertifiedInterval,
    /// Feasible `f` attaining the lower bound.
    pub witness: Function,
    /// Multipliers of `Γ(f)_i ≤ 1` behind the upper bound.
    pub multipliers: DVector<f64>,
}

impl<'a> GammaBallProgram<'a> {
    pub fn new(sp: &'a FiniteEnergySpace, c: Function) -> Result<Self> {
        check_len(sp.n(), c.len())?;
        Ok(Self { sp, c, settings: BarrierSettings::default() })
    }

    /// Solves component by component. The value is `+∞` exactly when `c` has
    /// nonzero total on some conductance component.
    pub fn solve(&self) -> Result<GammaBallSolution> {
        let sp = self.sp;
        let n = sp.n();
        let scale = self.c.abs().sum().max(1e-300);
        let mut witness = DVector::zeros(n);
        let mut multipliers = DVector::zeros(n);
        let (mut lower, mut upper) = (0.0, 0.0);
        let mut flagged = false;
        for nodes in sp.components() {
            let total: f64 = nodes.iter().map(|&i| self.c[i]).sum();
            if total.abs() > 1e-12 * scale {
                return Ok(GammaBallSolution {
                    value: CertifiedInterval::infinite("weights do not balance on a conductance component"),
                    witness,
                    multipliers,
                });
            }
            if nodes.len() < 2 || nodes.iter().all(|&i| self.c[i] == 0.0) {
                continue;
            }
            let (lo, hi, f, lam, ok) = self.solve_component(&nodes)?;
            lower += lo;
            upper += hi;
            flagged |= !ok;
            for (a, &i) in nodes.iter().enumerate() {
                witness[i] = f[a];
                multipliers[i] = lam[a];
            }
        }
        // the two bounds come from different computations; roundoff can cross them
        let upper = upper.max(lower);
        let mut value = CertifiedInterval::new(lower, upper, "feasible f with Γ(f) ≤ 1", "Lagrangian dual Σλ + ¼cᵀL_λ⁺c")?;
        value.flagged = flagged;
        Ok(GammaBallSolution { value, witness, multipliers })
    }

    fn solve_component(&self, nodes: &[usize]) -> Result<(f64, f64, Vec<f64>, Vec<f64>, bool)> {
        let sp = self.sp;
        let k = nodes.len();
        let mut local = vec![usize::MAX; sp.n()];
        for (a, &i) in nodes.iter().enumerate() {
            local[i] = a;
        }
        let mut constraints = vec![QuadraticConstraint { constant: -1.0, ..Default::default() }; k];
        for e in sp.edges() {
            let (a, b) = (local[e.i], local[e.j]);
            if a == usize::MAX {
                continue;
            }
            constraints[a].squares.push((a, b, e.w / (2.0 * sp.m()[e.i])));
            constraints[b].squares.push((a, b, e.w / (2.0 * sp.m()[e.j])));
        }
        let c = DVector::from_iterator(k, nodes.iter().map(|&i| -self.c[i]));
        let mut fixed = vec![false; k];
        fixed[0] = true;
        let sol = minimize_linear(&c, &constraints, &fixed, DVector::zeros(k), &self.settings)?;

        // exact feasibility of the witness, rescaling if roundoff pushed Γ above 1
        let mut full = DVector::zeros(sp.n());
        for (a, &i) in nodes.iter().enumerate() {
            full[i] = sol.x[a];
        }
        let g = sp.gamma_sq(&full)?;
        let worst = nodes.iter().map(|&i| g[i]).fold(0.0, f64::max);
        let mut f: Vec<f64> = sol.x.iter().copied().collect();
        if worst > 1.0 {
            let s = 1.0 / worst.sqrt();
            f.iter_mut().for_each(|x| *x *= s);
        }
        let lower: f64 = nodes.iter().enumerate().map(|(a, &i)| self.c[i] * f[a]).sum();

        let lam = sol.multipliers.clone();
        let upper = self.dual_bound(nodes, &lam);
        Ok((lower, upper, f, lam, sol.converged))
    }

    /// `Σλ_i + ¼ cᵀL_λ⁺c` where `L_λ` has edge weights `w_ij (λ_i/2m_i + λ_j/2m_j)`.
    fn dual_bound(&self, nodes: &[usize], lam: &[f64]) -> f64 {
        let sp = self.sp;
        let mut local = vec![usize::MAX; sp.n()];
        for (a, &i) in nodes.iter().enumerate() {
            local[i] = a;
        }
        let edges: Vec<(usize, usize, f64)> = sp
            .edges()
            .iter()
            .filter(|e| local[e.i] != usize::MAX)
            .map(|e| {
                let (a, b) = (local[e.i], local[e.j]);
                (a, b, e.w * (lam[a] / (2.0 * sp.m()[e.i]) + lam[b] / (2.0 * sp.m()[e.j])))
            })
            .collect();
        let c = DVector::from_iterator(nodes.len(), nodes.iter().map(|&i| self.c[i]));
        match laplacian_pinv_solve(nodes.len(), &edges, &c) {
            Some((q, _)) => lam.iter().sum::<f64>() + 0.25 * q,
            None => f64::INFINITY,
        }
    }
}

/// `d_E(x, y) = sup { f(y) − f(x) : Γ(f) ≤ 1 }`.
pub fn intrinsic_distance(sp: &FiniteEnergySpace, x: usize, y: usize) -> Result<CertifiedInterval> {
    let n = sp.n();
    if x >= n || y >= n {
        return Err(Error::InvalidArgument(format!("point index out of range: ({x}, {y}) with n = {n}")));
    }
    if x == y {
        return Ok(CertifiedInterval::exact(0.0, "x = y"));
    }
    if sp.component_of(x) != sp.component_of(y) {
        return Ok(CertifiedInterval::infinite("different conductance components"));
    }
    let mut c = DVector::zeros(n);
    c[y] = 1.0;
    c[x] = -1.0;
    Ok(GammaBallProgram::new(sp, c)?.solve()?.value)
}

/// Certified lower and upper `d_E` matrices, each closed under shortest paths
/// so that both satisfy the triangle inequality exactly.
pub fn intrinsic_distance_bounds(sp: &FiniteEnergySpace) -> Result<(ExtendedDistanceMatrix, ExtendedDistanceMatrix)> {
    let n = sp.n();
    let mut lo = DMatrix::zeros(n, n);
    let mut hi = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in x + 1..n {
            let d = intrinsic_distance(sp, x, y)?;
            lo[(x, y)] = d.lower;
            lo[(y, x)] = d.lower;
            hi[(x, y)] = d.upper;
            hi[(y, x)] = d.upper;
        }
    }
    Ok((ExtendedDistanceMatrix::new(shortest_paths(lo))?, ExtendedDistanceMatrix::new(shortest_paths(hi))?))
}

/// Floyd-Warshall closure; `∞` entries are missing edges.
pub(crate) fn shortest_paths(mut d: DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[(i, k)] + d[(k, j)];
                if via < d[(i, j)] {
                    d[(i, j)] = via;
                }
            }
        }
    }
    d
}

/// `d_A(x, y) = sup_{f ∈ A} |f(x) − f(y)|` and whether `A` separates points.
pub fn distance_from_family(family: &[Function]) -> Result<(ExtendedDistanceMatrix, bool)> {
    let first = family.first().ok_or_else(|| Error::InvalidArgument("function family is empty".into()))?;
    let n = first.len();
    for f in family {
        check_len(n, f.len())?;
    }
    let d = DMatrix::from_fn(n, n, |i, j| family.iter().map(|f| (f[i] - f[j]).abs()).fold(0.0, f64::max));
    let separates = (0..n).all(|i| (0..n).all(|j| i == j || d[(i, j)] > 0.0));
    let dist = if separates { ExtendedDistanceMatrix::new(d)? } else { ExtendedDistanceMatrix::semidistance(d)? };
    Ok((dist, separates))
}

/// `d^ε(x, y)`: infimum of chain lengths from `x` to `y` whose hops are all `≤ ε`.
pub fn epsilon_chain_distance(d: &ExtendedDistanceMatrix, eps: f64) -> Result<ExtendedDistanceMatrix> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("chain scale {eps} must be positive")));
    }
    let hops = d.matrix().map(|x| if x <= eps { x } else { f64::INFINITY });
    let closed = shortest_paths(hops);
    if d.is_semidistance() {
        ExtendedDistanceMatrix::semidistance(closed)
    } else {
        ExtendedDistanceMatrix::new(closed)
    }
}

/// Chain `x = z_0, …, z_N = y` with every hop `≤ √(d^{ε₀}(x, y)² + ε²) / N`,
/// choosing the smallest maximal hop; `None` when no such chain exists.
pub fn midpoint_chain(d: &ExtendedDistanceMatrix, x: usize, y: usize, steps: usize, eps: f64, eps0: f64) -> Result<Option<Vec<usize>>> {
    let n = d.n();
    if x >= n || y >= n {
        return Err(Error::InvalidArgument(format!("point index out of range: ({x}, {y}) with n = {n}")));
    }
    if steps == 0 || !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("need N ≥ 1 and ε > 0, got N = {steps}, ε = {eps}")));
    }
    if x == y {
        return Ok(Some(vec![x; steps + 1]));
    }
    let length = epsilon_chain_distance(d, eps0)?.get(x, y);
    if length.is_infinite() {
        return Ok(None);
    }
    let bound = (length * length + eps * eps).sqrt() / steps as f64;
    // best[k][z]: smallest achievable maximal hop over chains x → z of k hops
    let mut best = vec![vec![f64::INFINITY; n]; steps + 1];
    let mut parent = vec![vec![usize::MAX; n]; steps + 1];
    best[0][x] = 0.0;
    for k in 1..=steps {
        for z in 0..n {
            for prev in 0..n {
                let hop = d.get(prev, z);
                if best[k - 1][prev].is_infinite() || hop > bound {
                    continue;
                }
                let v = best[k - 1][prev].max(hop);
                if v < best[k][z] {
                    best[k][z] = v;
                    parent[k][z] = prev;
                }
            }
        }
    }
    if best[steps][y].is_infinite() {
        return Ok(None);
    }
    let mut chain = vec![y];
    let mut z = y;
    for k in (1..=steps).rev() {
        z = parent[k][z];
        chain.push(z);
    }
    chain.reverse();
    Ok(Some(chain))
}
