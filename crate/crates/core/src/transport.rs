//! Static optimal transport on finite spaces with possibly infinite costs.
//!
//! Finite-distance classes of an extended distance are equivalence classes,
//! so the finite-cost bipartite graph is a union of complete blocks: a finite
//! plan exists iff every class carries the same source and target mass, and
//! each block is solved independently by the transportation simplex.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde_json::Value;

use crate::error::{check_len, Error, Result};
use crate::space::{connected_components, Function};

const TRIANGLE_TOL: f64 = 1e-9;
const MARGINAL_TOL: f64 = 1e-9;

/// Pairwise distances with `+∞` allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedDistanceMatrix {
    d: DMatrix<f64>,
    semidistance: bool,
}

impl ExtendedDistanceMatrix {
    /// Validates a distance: symmetric, zero diagonal, positive off the
    /// diagonal, triangle inequality within `1e-9` with `∞` absorbing.
    pub fn new(d: DMatrix<f64>) -> Result<Self> {
        Self::validate(&d, false)?;
        Ok(Self { d, semidistance: false })
    }

    /// As [`Self::new`], but zero off-diagonal entries are allowed.
    pub fn semidistance(d: DMatrix<f64>) -> Result<Self> {
        Self::validate(&d, true)?;
        Ok(Self { d, semidistance: true })
    }

    fn validate(d: &DMatrix<f64>, semi: bool) -> Result<()> {
        let n = d.nrows();
        if d.ncols() != n {
            return Err(Error::InvalidDistance(format!("matrix is {}x{}", n, d.ncols())));
        }
        for i in 0..n {
            if d[(i, i)] != 0.0 {
                return Err(Error::InvalidDistance(format!("d[{i}][{i}] = {} is not zero", d[(i, i)])));
            }
            for j in 0..n {
                let x = d[(i, j)];
                if x.is_nan() || x < 0.0 {
                    return Err(Error::InvalidDistance(format!("d[{i}][{j}] = {x} is negative or NaN")));
                }
                if x != d[(j, i)] && (x - d[(j, i)]).abs() > TRIANGLE_TOL * x.max(1.0) {
                    return Err(Error::InvalidDistance(format!("d[{i}][{j}] = {x} differs from d[{j}][{i}]")));
                }
                if !semi && i != j && x == 0.0 {
                    return Err(Error::InvalidDistance(format!("d[{i}][{j}] = 0 for distinct points")));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let direct = d[(i, k)];
                    let via = d[(i, j)] + d[(j, k)];
                    if direct > via + TRIANGLE_TOL * direct.clamp(1.0, 1e300) {
                        return Err(Error::InvalidDistance(format!(
                            "triangle inequality fails: d[{i}][{k}] = {direct} > d[{i}][{j}] + d[{j}][{k}] = {via}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn is_semidistance(&self) -> bool {
        self.semidistance
    }

    /// `λ d` for `λ > 0`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("scale {lambda} must be positive")));
        }
        Ok(Self { d: self.d.map(|x| x * lambda), semidistance: self.semidistance })
    }

    /// `min(d, cap)`, a finite distance for every `cap > 0`.
    pub fn truncated(&self, cap: f64) -> Result<Self> {
        if !(cap > 0.0) {
            return Err(Error::InvalidArgument(format!("cap {cap} must be positive")));
        }
        Ok(Self { d: self.d.map(|x| x.min(cap)), semidistance: self.semidistance })
    }

    /// Labels of the classes `{d < ∞}` and their count.
    pub fn finite_classes(&self) -> (Vec<usize>, usize) {
        let n = self.n();
        let pairs = (0..n).flat_map(|i| (0..n).map(move |j| (i, j)));
        connected_components(n, pairs.filter(|&(i, j)| i < j && self.d[(i, j)].is_finite()).collect::<Vec<_>>().into_iter())
    }

    pub fn has_infinite_entries(&self) -> bool {
        self.d.iter().any(|x| x.is_infinite())
    }

    pub fn max_finite(&self) -> f64 {
        self.d.iter().filter(|x| x.is_finite()).fold(0.0, |a, &b| a.max(b))
    }

    /// JSON matrix with the string `"inf"` for infinite entries.
    pub fn to_json(&self) -> Value {
        Value::Array(
            (0..self.n())
                .map(|i| Value::Array((0..self.n()).map(|j| extended_to_json(self.d[(i, j)])).collect()))
                .collect(),
        )
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let rows = value.as_array().ok_or_else(|| Error::InvalidDistance("expected a JSON array of rows".into()))?;
        let n = rows.len();
        let mut d = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_array().ok_or_else(|| Error::InvalidDistance(format!("row {i} is not an array")))?;
            if row.len() != n {
                return Err(Error::InvalidDistance(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            for (j, v) in row.iter().enumerate() {
                d[(i, j)] = extended_from_json(v)
                    .ok_or_else(|| Error::InvalidDistance(format!("entry [{i}][{j}] = {v} is not a number or \"inf\"")))?;
            }
        }
        Self::semidistance(d).map(|m| {
            let strict = (0..n).all(|i| (0..n).all(|j| i == j || m.d[(i, j)] > 0.0));
            Self { semidistance: !strict, ..m }
        })
    }
}

/// `∞ ↦ "inf"`, finite values as numbers.
pub fn extended_to_json(x: f64) -> Value {
    if x.is_infinite() && x > 0.0 {
        Value::String("inf".into())
    } else {
        serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
    }
}

pub fn extended_from_json(v: &Value) -> Option<f64> {
    match v {
        Value::String(s) if s == "inf" => Some(f64::INFINITY),
        Value::Number(x) => x.as_f64(),
        _ => None,
    }
}

/// Coupling between a source and a target mass vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pi: DMatrix<f64>,
}

impl TransportPlan {
    /// Checks nonnegativity and both marginals within `1e-9`.
    pub fn new(pi: DMatrix<f64>, mu: &DVector<f64>, nu: &DVector<f64>) -> Result<Self> {
        check_len(mu.len(), pi.nrows())?;
        check_len(nu.len(), pi.ncols())?;
        if let Some(x) = pi.iter().find(|x| !(**x >= -MARGINAL_TOL)) {
            return Err(Error::InvalidArgument(format!("plan entry {x} is negative")));
        }
        let plan = Self { pi: pi.map(|x| x.max(0.0)) };
        for (i, (a, b)) in plan.source_marginal().iter().zip(mu.iter()).enumerate() {
            if (a - b).abs() > MARGINAL_TOL {
                return Err(Error::MarginalMismatch { index: i, left: *a, right: *b });
            }
        }
        for (j, (a, b)) in plan.target_marginal().iter().zip(nu.iter()).enumerate() {
            if (a - b).abs() > MARGINAL_TOL {
                return Err(Error::MarginalMismatch { index: j, left: *a, right: *b });
            }
        }
        Ok(plan)
    }

    pub fn diagonal(mass: &DVector<f64>) -> Self {
        Self { pi: DMatrix::from_diagonal(mass) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.pi
    }

    pub fn source_marginal(&self) -> DVector<f64> {
        DVector::from_iterator(self.pi.nrows(), self.pi.row_iter().map(|r| r.sum()))
    }

    pub fn target_marginal(&self) -> DVector<f64> {
        DVector::from_iterator(self.pi.ncols(), self.pi.column_iter().map(|c| c.sum()))
    }

    /// `Σ π_ij d_ij^p`, infinite if mass sits on an infinite cell.
    pub fn cost(&self, d: &ExtendedDistanceMatrix, power: u32) -> f64 {
        let mut total = 0.0;
        for i in 0..self.pi.nrows() {
            for j in 0..self.pi.ncols() {
                let x = self.pi[(i, j)];
                if x > 0.0 {
                    let c = d.get(i, j);
                    if c.is_infinite() {
                        return f64::INFINITY;
                    }
                    total += x * c.powi(power as i32);
                }
            }
        }
        total
    }

    /// CSV triplets `i, j, mass` for the nonzero entries.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["i", "j", "mass"])?;
        for i in 0..self.pi.nrows() {
            for j in 0..self.pi.ncols() {
                if self.pi[(i, j)] > 0.0 {
                    wtr.write_record([i.to_string(), j.to_string(), format!("{:e}", self.pi[(i, j)])])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Optimal cost `Σ π d^p = W_p^p`, an optimal plan and Kantorovich potentials
/// `(φ, ψ)` with `ψ_j − φ_i ≤ d_ij^p` on finite pairs.
#[derive(Debug, Clone)]
pub struct KantorovichSolution {
    pub value: f64,
    pub dual_value: f64,
    pub plan: Option<TransportPlan>,
    pub potentials: Option<(Function, Function)>,
}

impl KantorovichSolution {
    /// `W_p = value^{1/p}`.
    pub fn distance(&self, power: u32) -> f64 {
        if self.value.is_infinite() {
            f64::INFINITY
        } else {
            self.value.max(0.0).powf(1.0 / power as f64)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

fn check_masses(n: usize, mu: &DVector<f64>, nu: &DVector<f64>) -> Result<()> {
    check_len(n, mu.len())?;
    check_len(n, nu.len())?;
    for (i, x) in mu.iter().chain(nu.iter()).enumerate() {
        if !(x.is_finite() && *x >= 0.0) {
            return Err(Error::InvalidArgument(format!("mass entry {i} = {x} is not a nonnegative number")));
        }
    }
    let (a, b) = (mu.sum(), nu.sum());
    if (a - b).abs() > MARGINAL_TOL {
        return Err(Error::MassMismatch { source_mass: a, target_mass: b });
    }
    Ok(())
}

/// Solves `min Σ π_ij d_ij^p` over couplings of `μ` and `ν`.
pub fn kantorovich(d: &ExtendedDistanceMatrix, mu: &DVector<f64>, nu: &DVector<f64>, power: u32) -> Result<KantorovichSolution> {
    if power != 1 && power != 2 {
        return Err(Error::InvalidArgument(format!("power must be 1 or 2, got {power}")));
    }
    let n = d.n();
    check_masses(n, mu, nu)?;
    let (class, n_classes) = d.finite_classes();
    let mut members = vec![Vec::new(); n_classes];
    for i in 0..n {
        members[class[i]].push(i);
    }
    for group in &members {
        let a: f64 = group.iter().map(|&i| mu[i]).sum();
        let b: f64 = group.iter().map(|&i| nu[i]).sum();
        if (a - b).abs() > MARGINAL_TOL {
            return Ok(KantorovichSolution { value: f64::INFINITY, dual_value: f64::INFINITY, plan: None, potentials: None });
        }
    }

    let cost = |i: usize, j: usize| d.get(i, j).powi(power as i32);
    let mut pi = DMatrix::zeros(n, n);
    let mut phi = DVector::zeros(n);
    let mut psi = DVector::zeros(n);
    for group in &members {
        let sources: Vec<usize> = group.iter().copied().filter(|&i| mu[i] > 0.0).collect();
        let targets: Vec<usize> = group.iter().copied().filter(|&j| nu[j] > 0.0).collect();
        if sources.is_empty() || targets.is_empty() {
            continue;
        }
        let supply: Vec<f64> = sources.iter().map(|&i| mu[i]).collect();
        let mut demand: Vec<f64> = targets.iter().map(|&j| nu[j]).collect();
        // absorb the sub-tolerance imbalance in the largest demand
        let imbalance = supply.iter().sum::<f64>() - demand.iter().sum::<f64>();
        let k = (0..demand.len()).max_by(|&a, &b| demand[a].total_cmp(&demand[b])).unwrap();
        demand[k] = (demand[k] + imbalance).max(0.0);
        let c = DMatrix::from_fn(sources.len(), targets.len(), |a, b| cost(sources[a], targets[b]));
        let sol = transportation_simplex(&supply, &demand, &c)?;
        for (a, &i) in sources.iter().enumerate() {
            for (b, &j) in targets.iter().enumerate() {
                pi[(i, j)] = sol.plan[(a, b)];
            }
        }
        // φ = −u on the sources; ψ as the c-transform of φ over the whole class
        let mut phi_src = vec![0.0; sources.len()];
        for a in 0..sources.len() {
            phi_src[a] = -sol.u[a];
        }
        for &j in group {
            psi[j] = sources.iter().enumerate().map(|(a, &i)| cost(i, j) + phi_src[a]).fold(f64::INFINITY, f64::min);
        }
        for &i in group {
            phi[i] = match sources.iter().position(|&s| s == i) {
                Some(a) => phi_src[a],
                None => group.iter().map(|&j| psi[j] - cost(i, j)).fold(f64::NEG_INFINITY, f64::max),
            };
        }
    }
    let plan = TransportPlan::new(pi, mu, nu)?;
    let value = plan.cost(d, power);
    let dual_value = nu.dot(&psi) - mu.dot(&phi);
    Ok(KantorovichSolution { value, dual_value, plan: Some(plan), potentials: Some((phi, psi)) })
}

/// `W_p(μ, ν)`.
pub fn wasserstein(d: &ExtendedDistanceMatrix, mu: &DVector<f64>, nu: &DVector<f64>, power: u32) -> Result<f64> {
    Ok(kantorovich(d, mu, nu, power)?.distance(power))
}

/// Largest violation of `ψ_j − φ_i ≤ d_ij^p` over finite pairs.
pub fn dual_infeasibility(d: &ExtendedDistanceMatrix, phi: &Function, psi: &Function, power: u32) -> f64 {
    let n = d.n();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if d.get(i, j).is_finite() {
                worst = worst.max(psi[j] - phi[i] - d.get(i, j).powi(power as i32));
            }
        }
    }
    worst
}

struct SimplexSolution {
    plan: DMatrix<f64>,
    u: Vec<f64>,
}

/// Balanced transportation problem by the simplex method on spanning-tree
/// bases: northwest-corner start, MODI pricing, Bland's rule.
fn transportation_simplex(supply: &[f64], demand: &[f64], cost: &DMatrix<f64>) -> Result<SimplexSolution> {
    let (m, n) = (supply.len(), demand.len());
    let mut x = DMatrix::zeros(m, n);
    let mut basic = vec![vec![false; n]; m];
    let (mut s, mut dm) = (supply.to_vec(), demand.to_vec());
    let (mut i, mut j) = (0, 0);
    let mut count = 0;
    while i < m && j < n {
        basic[i][j] = true;
        count += 1;
        if i == m - 1 && j == n - 1 {
            x[(i, j)] = s[i].max(0.0);
            break;
        }
        if j == n - 1 || (i < m - 1 && s[i] <= dm[j]) {
            x[(i, j)] = s[i];
            dm[j] -= s[i];
            s[i] = 0.0;
            i += 1;
        } else {
            x[(i, j)] = dm[j];
            s[i] -= dm[j];
            dm[j] = 0.0;
            j += 1;
        }
    }
    if count != m + n - 1 {
        return Err(Error::Solver(format!("initial basis has {count} cells, expected {}", m + n - 1)));
    }

    let scale = 1.0 + cost.amax();
    let eps = 1e-12 * scale;
    let max_iter = 50 * (m + n) * (m + n) + 1000;
    for _ in 0..max_iter {
        let (u, v) = modi_potentials(&basic, cost)?;
        let entering = (0..m)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .find(|&(i, j)| !basic[i][j] && cost[(i, j)] - u[i] - v[j] < -eps);
        let Some((ei, ej)) = entering else {
            return Ok(SimplexSolution { plan: x, u });
        };
        let path = tree_path(&basic, ei, m + ej)
            .ok_or_else(|| Error::Solver("basis is not a spanning tree".into()))?;
        // path runs row ei → … → column ej; its cells alternate −, +, − … from the column end
        let cells: Vec<(usize, usize)> = path
            .windows(2)
            .map(|w| if w[0] < m { (w[0], w[1] - m) } else { (w[1], w[0] - m) })
            .collect();
        let minus: Vec<(usize, usize)> = cells.iter().rev().step_by(2).copied().collect();
        let plus: Vec<(usize, usize)> = cells.iter().rev().skip(1).step_by(2).copied().collect();
        let theta = minus.iter().map(|&(a, b)| x[(a, b)]).fold(f64::INFINITY, f64::min);
        let leaving = *minus
            .iter()
            .filter(|&&(a, b)| x[(a, b)] <= theta)
            .min()
            .expect("cycle has a decreasing cell");
        for &(a, b) in &plus {
            x[(a, b)] += theta;
        }
        for &(a, b) in &minus {
            x[(a, b)] = (x[(a, b)] - theta).max(0.0);
        }
        x[leaving] = 0.0;
        basic[leaving.0][leaving.1] = false;
        basic[ei][ej] = true;
        x[(ei, ej)] = theta;
    }
    Err(Error::Solver(format!("transportation simplex exceeded {max_iter} pivots")))
}

fn modi_potentials(basic: &[Vec<bool>], cost: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let (m, n) = (basic.len(), basic[0].len());
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    u[0] = 0.0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(node) = queue.pop_front() {
        if node < m {
            for j in 0..n {
                if basic[node][j] && v[j].is_nan() {
                    v[j] = cost[(node, j)] - u[node];
                    queue.push_back(m + j);
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                if basic[i][j] && u[i].is_nan() {
                    u[i] = cost[(i, j)] - v[j];
                    queue.push_back(i);
                }
            }
        }
    }
    if u.iter().chain(v.iter()).any(|x| x.is_nan()) {
        return Err(Error::Solver("basis does not span all rows and columns".into()));
    }
    Ok((u, v))
}

/// Node path from `from` to `to` in the basis tree (rows `0..m`, columns `m..m+n`).
fn tree_path(basic: &[Vec<bool>], from: usize, to: usize) -> Option<Vec<usize>> {
    let (m, n) = (basic.len(), basic[0].len());
    let mut parent = vec![usize::MAX; m + n];
    parent[from] = from;
    let mut queue = VecDeque::from([from]);
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        let neighbours: Vec<usize> = if node < m {
            (0..n).filter(|&j| basic[node][j]).map(|j| m + j).collect()
        } else {
            (0..m).filter(|&i| basic[i][node - m]).collect()
        };
        for next in neighbours {
            if parent[next] == usize::MAX {
                parent[next] = node;
                queue.push_back(next);
            }
        }
    }
    if parent[to] == usize::MAX {
        return None;
    }
    let mut path = vec![to];
    let mut node = to;
    while node != from {
        node = parent[node];
        path.push(node);
    }
    path.reverse();
    Some(path)
}

/// `W_1` by duality: the value and a 1-Lipschitz `f` with `∫ f d(ν − μ) = W_1(μ, ν)`.
pub fn w1_dual(d: &ExtendedDistanceMatrix, mu: &DVector<f64>, nu: &DVector<f64>) -> Result<(f64, Function)> {
    let sol = kantorovich(d, mu, nu, 1)?;
    let n = d.n();
    let Some((phi, _)) = sol.potentials else {
        return Ok((f64::INFINITY, DVector::zeros(n)));
    };
    // f(x) = min_i φ_i + d(i, x): 1-Lipschitz, f ≤ φ on sources, f ≥ ψ on targets
    let witness = DVector::from_iterator(
        n,
        (0..n).map(|x| (0..n).filter(|&i| d.get(i, x).is_finite()).map(|i| phi[i] + d.get(i, x)).fold(f64::INFINITY, f64::min)),
    );
    let value = nu.dot(&witness) - mu.dot(&witness);
    Ok((value.max(sol.value), witness))
}

/// Largest `|f_i − f_j| − d_ij` over finite pairs; `≤ 0` iff `f` is 1-Lipschitz.
pub fn lipschitz_excess(d: &ExtendedDistanceMatrix, f: &Function) -> f64 {
    let n = d.n();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j && d.get(i, j).is_finite() {
                worst = worst.max((f[i] - f[j]).abs() - d.get(i, j));
            }
        }
    }
    worst
}

/// `Q_t φ(y) = min_x φ(x) + d²(x, y)/(2t)`.
pub fn hopf_lax(d: &ExtendedDistanceMatrix, phi: &Function, t: f64) -> Result<Function> {
    check_len(d.n(), phi.len())?;
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("Hopf-Lax time {t} must be positive")));
    }
    let n = d.n();
    Ok(DVector::from_iterator(
        n,
        (0..n).map(|y| {
            (0..n)
                .filter(|&x| d.get(x, y).is_finite())
                .map(|x| phi[x] + d.get(x, y).powi(2) / (2.0 * t))
                .fold(f64::INFINITY, f64::min)
        }),
    ))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct HopfLaxDualityReport {
    /// `½ W²(μ, ν)` from the primal LP.
    pub half_w2: f64,
    /// `∫ Q_1 φ dν − ∫ φ dμ` at `φ = φ_LP / 2`.
    pub dual_at_potentials: f64,
    /// Best value over the sampled potentials.
    pub max_sampled: f64,
    pub gap: f64,
    pub sampled_exceeds_bound: bool,
}

/// Compares `½W²` with `sup_φ ∫ Q_1 φ dν − ∫ φ dμ` on sampled potentials and at
/// the rescaled LP potentials, where equality holds.
pub fn hopf_lax_duality_check(
    d: &ExtendedDistanceMatrix,
    mu: &DVector<f64>,
    nu: &DVector<f64>,
    samples: &[Function],
) -> Result<HopfLaxDualityReport> {
    if d.has_infinite_entries() {
        return Err(Error::InvalidArgument("Hopf-Lax duality check needs a finite distance".into()));
    }
    let sol = kantorovich(d, mu, nu, 2)?;
    let half_w2 = 0.5 * sol.value;
    let objective = |phi: &Function| -> Result<f64> { Ok(nu.dot(&hopf_lax(d, phi, 1.0)?) - mu.dot(phi)) };
    let (phi, _) = sol.potentials.expect("finite instance has potentials");
    let dual_at_potentials = objective(&(phi * 0.5))?;
    let mut max_sampled = f64::NEG_INFINITY;
    for s in samples {
        max_sampled = max_sampled.max(objective(s)?);
    }
    Ok(HopfLaxDualityReport {
        half_w2,
        dual_at_potentials,
        max_sampled,
        gap: (half_w2 - dual_at_potentials).abs(),
        sampled_exceeds_bound: max_sampled > half_w2 + 1e-8,
    })
}

/// Composes `π1 ∈ Π(μ, ν)` and `π2 ∈ Π(ν, λ)` through the shared marginal `ν`.
pub fn glue_plans(pi1: &TransportPlan, pi2: &TransportPlan) -> Result<TransportPlan> {
    let (a, b) = (pi1.matrix(), pi2.matrix());
    check_len(a.ncols(), b.nrows())?;
    let left = pi1.target_marginal();
    let right = pi2.source_marginal();
    for (y, (l, r)) in left.iter().zip(right.iter()).enumerate() {
        if (l - r).abs() > MARGINAL_TOL {
            return Err(Error::MarginalMismatch { index: y, left: *l, right: *r });
        }
    }
    let mut glued = DMatrix::zeros(a.nrows(), b.ncols());
    for y in 0..a.ncols() {
        let mass = 0.5 * (left[y] + right[y]);
        if mass <= 0.0 {
            continue;
        }
        for x in 0..a.nrows() {
            if a[(x, y)] == 0.0 {
                continue;
            }
            for z in 0..b.ncols() {
                glued[(x, z)] += a[(x, y)] * b[(y, z)] / mass;
            }
        }
    }
    TransportPlan::new(glued, &pi1.source_marginal(), &pi2.target_marginal())
}
