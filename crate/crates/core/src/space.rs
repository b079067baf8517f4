//! Finite energy-measure spaces.
//!
//! A space is a finite set of points carrying a probability measure `m` and a
//! symmetric conductance matrix `w`. The Dirichlet form, its carré du champ
//! and the Laplacian are evaluated in closed form:
//!
//! ```text
//! E(f, g)   = ½ Σ_ij w_ij (f_i − f_j)(g_i − g_j)
//! Γ(f, g)_i = (1 / 2m_i) Σ_j w_ij (f_i − f_j)(g_i − g_j)
//! Δf_i      = (1 / m_i)  Σ_j w_ij (f_j − f_i)
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Real function on the points of a space.
pub type Function = DVector<f64>;

const MASS_TOL: f64 = 1e-12;
const DENSITY_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;

/// Edge of the conductance graph, `i < j`, `w > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

#[derive(Debug, Clone)]
pub struct FiniteEnergySpace {
    m: DVector<f64>,
    w: DMatrix<f64>,
    edges: Vec<Edge>,
    component: Vec<usize>,
    n_components: usize,
}

impl FiniteEnergySpace {
    /// Builds a space, normalizing `m` to unit mass.
    ///
    /// Rejects nonpositive weights, asymmetric or negative conductances and a
    /// nonzero diagonal; the error names the first offending index.
    pub fn new(m: Vec<f64>, w: DMatrix<f64>) -> Result<Self> {
        let n = m.len();
        if n == 0 {
            return Err(Error::InvalidSpace("empty point set".into()));
        }
        if w.nrows() != n || w.ncols() != n {
            return Err(Error::InvalidSpace(format!(
                "conductance matrix is {}x{}, expected {n}x{n}",
                w.nrows(),
                w.ncols()
            )));
        }
        for (i, &mi) in m.iter().enumerate() {
            if !(mi.is_finite() && mi > 0.0) {
                return Err(Error::InvalidSpace(format!("m[{i}] = {mi} is not a positive weight")));
            }
        }
        for i in 0..n {
            if w[(i, i)] != 0.0 {
                return Err(Error::InvalidSpace(format!("w[{i}][{i}] = {} is not zero", w[(i, i)])));
            }
            for j in 0..n {
                let wij = w[(i, j)];
                if !(wij.is_finite() && wij >= 0.0) {
                    return Err(Error::InvalidSpace(format!("w[{i}][{j}] = {wij} is not a nonnegative conductance")));
                }
                let wji = w[(j, i)];
                if (wij - wji).abs() > SYMMETRY_TOL * wij.abs().max(wji.abs()).max(1.0) {
                    return Err(Error::InvalidSpace(format!("w[{i}][{j}] = {wij} differs from w[{j}][{i}] = {wji}")));
                }
            }
        }
        let total: f64 = m.iter().sum();
        let m = DVector::from_iterator(n, m.iter().map(|x| x / total));
        let w = (&w + w.transpose()) * 0.5;

        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if w[(i, j)] > 0.0 {
                    edges.push(Edge { i, j, w: w[(i, j)] });
                }
            }
        }
        let (component, n_components) = connected_components(n, edges.iter().map(|e| (e.i, e.j)));
        Ok(Self { m, w, edges, component, n_components })
    }

    pub fn from_rows(m: Vec<f64>, w: Vec<Vec<f64>>) -> Result<Self> {
        let n = m.len();
        if w.len() != n || w.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidSpace(format!("conductance rows do not form a {n}x{n} matrix")));
        }
        let mat = DMatrix::from_fn(n, n, |i, j| w[i][j]);
        Self::new(m, mat)
    }

    pub fn n(&self) -> usize {
        self.m.len()
    }

    pub fn m(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn component_of(&self, i: usize) -> usize {
        self.component[i]
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn is_connected(&self) -> bool {
        self.n_components == 1
    }

    /// Point indices grouped by conductance component, in order of first appearance.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_components];
        for (i, &c) in self.component.iter().enumerate() {
            groups[c].push(i);
        }
        groups
    }

    fn check(&self, f: &Function) -> Result<()> {
        check_len(self.n(), f.len())
    }

    pub fn energy(&self, f: &Function, g: &Function) -> Result<f64> {
        self.check(f)?;
        self.check(g)?;
        Ok(self
            .edges
            .iter()
            .map(|e| e.w * (f[e.i] - f[e.j]) * (g[e.i] - g[e.j]))
            .sum())
    }

    pub fn gamma(&self, f: &Function, g: &Function) -> Result<Function> {
        self.check(f)?;
        self.check(g)?;
        let mut out = DVector::zeros(self.n());
        for e in &self.edges {
            let p = e.w * (f[e.i] - f[e.j]) * (g[e.i] - g[e.j]);
            out[e.i] += p;
            out[e.j] += p;
        }
        for i in 0..self.n() {
            out[i] /= 2.0 * self.m[i];
        }
        Ok(out)
    }

    /// Γ(f) = Γ(f, f).
    pub fn gamma_sq(&self, f: &Function) -> Result<Function> {
        self.gamma(f, f)
    }

    pub fn laplacian(&self, f: &Function) -> Result<Function> {
        self.check(f)?;
        let mut out = DVector::zeros(self.n());
        for e in &self.edges {
            let d = e.w * (f[e.j] - f[e.i]);
            out[e.i] += d;
            out[e.j] -= d;
        }
        for i in 0..self.n() {
            out[i] /= self.m[i];
        }
        Ok(out)
    }

    pub fn integrate(&self, f: &Function) -> Result<f64> {
        self.check(f)?;
        Ok(self.m.dot(f))
    }

    /// Matrix of Δ, i.e. `M⁻¹(W − D)`.
    pub fn generator_matrix(&self) -> DMatrix<f64> {
        let mut a = self.stiffness_matrix() * -1.0;
        for i in 0..self.n() {
            let mi = self.m[i];
            a.row_mut(i).iter_mut().for_each(|x| *x /= mi);
        }
        a
    }

    /// Symmetric matrix `K = D − W` with `fᵀ K g = E(f, g)`.
    pub fn stiffness_matrix(&self) -> DMatrix<f64> {
        weighted_laplacian(self.n(), self.edges.iter().map(|e| (e.i, e.j, e.w)))
    }

    pub fn to_file(&self) -> SpaceFile {
        SpaceFile {
            m: self.m.iter().copied().collect(),
            w: (0..self.n()).map(|i| self.w.row(i).iter().copied().collect()).collect(),
        }
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SpaceFile = serde_json::from_str(text)?;
        Self::from_rows(file.m, file.w)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    /// Disjoint union: points of `other` follow those of `self`, masses and
    /// conductances are halved so that each component keeps its generator.
    pub fn disjoint_union(&self, other: &FiniteEnergySpace) -> Result<Self> {
        let (n1, n2) = (self.n(), other.n());
        let n = n1 + n2;
        let mut w = DMatrix::zeros(n, n);
        w.view_mut((0, 0), (n1, n1)).copy_from(&(&self.w * 0.5));
        w.view_mut((n1, n1), (n2, n2)).copy_from(&(&other.w * 0.5));
        let m = self.m.iter().chain(other.m.iter()).copied().collect();
        Self::new(m, w)
    }
}

/// Serialized space: `{"m": [...], "w": [[...]]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpaceFile {
    pub m: Vec<f64>,
    pub w: Vec<Vec<f64>>,
}

/// Probability density with respect to the space measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Density(DVector<f64>);

impl Density {
    pub fn new(sp: &FiniteEnergySpace, values: DVector<f64>) -> Result<Self> {
        check_len(sp.n(), values.len())?;
        let mut values = values;
        for (i, v) in values.iter_mut().enumerate() {
            if !v.is_finite() || *v < -MASS_TOL {
                return Err(Error::InvalidDensity(format!("value {v} at point {i}")));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let mass = sp.m().dot(&values);
        if (mass - 1.0).abs() > DENSITY_TOL {
            return Err(Error::InvalidDensity(format!("integral {mass} differs from 1")));
        }
        Ok(Self(values))
    }

    /// Rescales a nonnegative, non-null vector to unit integral.
    pub fn normalized(sp: &FiniteEnergySpace, values: DVector<f64>) -> Result<Self> {
        check_len(sp.n(), values.len())?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDensity("negative or non-finite entries".into()));
        }
        let mass = sp.m().dot(&values);
        if mass <= 0.0 {
            return Err(Error::InvalidDensity("zero mass".into()));
        }
        Ok(Self(values / mass))
    }

    pub fn uniform(sp: &FiniteEnergySpace) -> Self {
        Self(DVector::from_element(sp.n(), 1.0))
    }

    /// Density `δ_i / m_i` of the unit point mass at `i`.
    pub fn point_mass(sp: &FiniteEnergySpace, i: usize) -> Self {
        let mut v = DVector::zeros(sp.n());
        v[i] = 1.0 / sp.m()[i];
        Self(v)
    }

    pub fn from_mass(sp: &FiniteEnergySpace, mass: &MassVector) -> Result<Self> {
        check_len(sp.n(), mass.len())?;
        Ok(Self(mass.0.component_div(sp.m())))
    }

    pub fn to_mass(&self, sp: &FiniteEnergySpace) -> MassVector {
        MassVector(self.0.component_mul(sp.m()))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Nonnegative vector of point masses with unit total mass.
#[derive(Debug, Clone, PartialEq)]
pub struct MassVector(DVector<f64>);

impl MassVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        let mut values = values;
        for (i, v) in values.iter_mut().enumerate() {
            if !v.is_finite() || *v < -MASS_TOL {
                return Err(Error::InvalidDensity(format!("mass {v} at point {i}")));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let total = values.sum();
        if (total - 1.0).abs() > DENSITY_TOL {
            return Err(Error::InvalidDensity(format!("total mass {total} differs from 1")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Symmetric weighted graph Laplacian `Σ c_ij (e_i − e_j)(e_i − e_j)ᵀ`.
pub(crate) fn weighted_laplacian(n: usize, edges: impl Iterator<Item = (usize, usize, f64)>) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(n, n);
    for (i, j, c) in edges {
        k[(i, i)] += c;
        k[(j, j)] += c;
        k[(i, j)] -= c;
        k[(j, i)] -= c;
    }
    k
}

/// `vᵀL⁺v` and a potential `x` with `Lx = v`, for the Laplacian of the given
/// weighted edges; `None` when `v` does not sum to zero on every connected
/// component of those edges.
pub(crate) fn laplacian_pinv_solve(n: usize, edges: &[(usize, usize, f64)], v: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
    let live: Vec<(usize, usize, f64)> = edges.iter().copied().filter(|e| e.2 > 0.0).collect();
    let (label, count) = connected_components(n, live.iter().map(|&(i, j, _)| (i, j)));
    let scale = v.abs().sum();
    let mut x = DVector::zeros(n);
    if scale == 0.0 {
        return Some((0.0, x));
    }
    let mut members = vec![Vec::new(); count];
    for i in 0..n {
        members[label[i]].push(i);
    }
    let full = weighted_laplacian(n, live.iter().copied());
    let mut value = 0.0;
    for nodes in &members {
        let total: f64 = nodes.iter().map(|&i| v[i]).sum();
        let local: f64 = nodes.iter().map(|&i| v[i].abs()).sum();
        if total.abs() > 1e-10 * scale.max(1e-300) && total.abs() > 1e-13 {
            return None;
        }
        if nodes.len() < 2 || local == 0.0 {
            continue;
        }
        let shift = total / nodes.len() as f64;
        let rest = &nodes[1..];
        let k = DMatrix::from_fn(rest.len(), rest.len(), |a, b| full[(rest[a], rest[b])]);
        let rhs = DVector::from_iterator(rest.len(), rest.iter().map(|&i| v[i] - shift));
        let sol = k.cholesky()?.solve(&rhs);
        for (a, &i) in rest.iter().enumerate() {
            x[i] = sol[a];
            value += sol[a] * rhs[a];
        }
    }
    Some((value, x))
}

/// Union-find labelling; labels are numbered by first appearance.
pub(crate) fn connected_components(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> (Vec<usize>, usize) {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut out = vec![0; n];
    let mut count = 0;
    for i in 0..n {
        let r = find(&mut parent, i);
        if label[r] == usize::MAX {
            label[r] = count;
            count += 1;
        }
        out[i] = label[r];
    }
    (out, count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    pub(crate) fn two_point() -> FiniteEnergySpace {
        FiniteEnergySpace::from_rows(vec![0.5, 0.5], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn two_point_energy() {
        let sp = two_point();
        let f = dvector![0.0, 1.0];
        assert_abs_diff_eq!(sp.energy(&f, &f).unwrap(), 1.0);
        assert_abs_diff_eq!(sp.energy(&f, &dvector![1.0, 0.0]).unwrap(), -1.0);
        assert_abs_diff_eq!(sp.energy(&dvector![3.0, 3.0], &f).unwrap(), 0.0);
    }

    #[test]
    fn two_point_gamma_and_laplacian() {
        let sp = two_point();
        assert_eq!(sp.gamma_sq(&dvector![0.0, 1.0]).unwrap(), dvector![1.0, 1.0]);
        assert_eq!(sp.gamma_sq(&dvector![0.0, 2.0]).unwrap(), dvector![4.0, 4.0]);
        assert_eq!(sp.gamma_sq(&dvector![2.0, 2.0]).unwrap(), dvector![0.0, 0.0]);
        assert_eq!(sp.laplacian(&dvector![0.0, 1.0]).unwrap(), dvector![2.0, -2.0]);
        assert_eq!(sp.laplacian(&dvector![1.0, -1.0]).unwrap(), dvector![-4.0, 4.0]);
        assert_eq!(sp.laplacian(&dvector![5.0, 5.0]).unwrap(), dvector![0.0, 0.0]);
    }

    #[test]
    fn integration() {
        let sp = two_point();
        assert_abs_diff_eq!(sp.integrate(&dvector![1.0, 1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(sp.integrate(&dvector![0.0, 1.0]).unwrap(), 0.5);
        assert_abs_diff_eq!(sp.integrate(&dvector![2.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        let sp = two_point();
        let err = sp.energy(&dvector![1.0], &dvector![1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, got: 1 }));
        assert!(sp.integrate(&dvector![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn measure_is_normalized() {
        let sp = FiniteEnergySpace::from_rows(vec![2.0, 6.0], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(sp.m()[0], 0.25);
        assert_abs_diff_eq!(sp.m().sum(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn loader_reports_first_violation() {
        let bad_m = FiniteEnergySpace::from_json(r#"{"m": [1.0, 0.0], "w": [[0, 1], [1, 0]]}"#).unwrap_err();
        assert!(bad_m.to_string().contains("m[1]"), "{bad_m}");
        let asym = FiniteEnergySpace::from_json(r#"{"m": [1, 1], "w": [[0, 1], [2, 0]]}"#).unwrap_err();
        assert!(asym.to_string().contains("w[0][1]"), "{asym}");
        let diag = FiniteEnergySpace::from_json(r#"{"m": [1, 1], "w": [[0, 1], [1, 3]]}"#).unwrap_err();
        assert!(diag.to_string().contains("w[1][1]"), "{diag}");
        let neg = FiniteEnergySpace::from_json(r#"{"m": [1, 1, 1], "w": [[0, -1, 0], [-1, 0, 0], [0, 0, 0]]}"#).unwrap_err();
        assert!(neg.to_string().contains("w[0][1]"), "{neg}");
    }

    #[test]
    fn json_round_trip() {
        let sp = two_point();
        let back = FiniteEnergySpace::from_json(&sp.to_json().unwrap()).unwrap();
        assert_eq!(back.to_file(), sp.to_file());
    }

    #[test]
    fn components_of_disconnected_graph() {
        let t2 = two_point();
        let u = t2.disjoint_union(&t2).unwrap();
        assert_eq!(u.n_components(), 2);
        assert_eq!(u.components(), vec![vec![0, 1], vec![2, 3]]);
        assert_abs_diff_eq!(u.m()[3], 0.25);
    }

    #[test]
    fn density_validation() {
        let sp = two_point();
        assert!(Density::new(&sp, dvector![2.0, 0.0]).is_ok());
        assert!(Density::new(&sp, dvector![1.0, 0.0]).is_err());
        assert!(Density::new(&sp, dvector![3.0, -1.0]).is_err());
        let d = Density::normalized(&sp, dvector![3.0, 1.0]).unwrap();
        assert_abs_diff_eq!(d.values()[0], 1.5);
        assert_eq!(Density::point_mass(&sp, 1).values(), &dvector![0.0, 2.0]);
    }
}
