//! Acceptance criteria 1–13. Each test prints one `criterion NN: PASS|FAIL` line
//! and fails when its criterion fails.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use mmlab::dynamic::{dynamic_bounds, sandwich_check, we_dual_l1, DynamicSettings};
use mmlab::flows::{
    be_best_k, contractivity_check, dynamic_oracle, evi_integral_check, functional_inequalities, heat_oracle, hopf_cole_solve,
    jko_trajectory, DistanceSelector, FunctionalSettings, JkoSettings,
};
use mmlab::heat::{entropy, entropy_dissipation_check, fisher_defect, heat_apply};
use mmlab::intrinsic::{epsilon_chain_distance, intrinsic_distance, intrinsic_distance_bounds};
use mmlab::scenario::{run_scenario_file, RunOptions};
use mmlab::spaces::{degenerate_grid, mehler_oracle, ou_grid, ou_grid_points, path, two_point};
use mmlab::transport::{hopf_lax_duality_check, kantorovich, ExtendedDistanceMatrix};
use mmlab::{Density, FiniteEnergySpace, Function, SpectralSemigroup};
use nalgebra::{dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sci(v: &[f64]) -> String {
    let cells: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", cells.join(", "))
}

fn verdict(id: u32, name: &str, pass: bool, start: Instant, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    // straight to the handle so the line survives libtest output capture
    let line = format!("\ncriterion {id:02}: {tag} {name} ({:.2}s) {detail}\n", start.elapsed().as_secs_f64());
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {id} failed: {detail}");
}

fn random_space(rng: &mut ChaCha8Rng, n: usize, connected: bool) -> FiniteEnergySpace {
    let m: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let chain = connected && j == i + 1;
            if chain || rng.random::<f64>() < 0.3 {
                let c = rng.random_range(0.1..3.0);
                w[(i, j)] = c;
                w[(j, i)] = c;
            }
        }
    }
    FiniteEnergySpace::new(m, w).unwrap()
}

fn random_fn(rng: &mut ChaCha8Rng, n: usize) -> Function {
    DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0))
}

fn random_density(rng: &mut ChaCha8Rng, sp: &FiniteEnergySpace, floor: f64) -> Density {
    Density::normalized(sp, DVector::from_fn(sp.n(), |_, _| floor + rng.random::<f64>())).unwrap()
}

/// `E(f, g) = ½ Σ_ij w_ij (f_i − f_j)(g_i − g_j)`, written out independently.
fn energy_oracle(sp: &FiniteEnergySpace, f: &Function, g: &Function) -> f64 {
    let n = sp.n();
    let mut e = 0.0;
    for i in 0..n {
        for j in 0..n {
            e += 0.5 * sp.w()[(i, j)] * (f[i] - f[j]) * (g[i] - g[j]);
        }
    }
    e
}

#[test]
fn criterion_01_carre_du_champ_identity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=20);
        let sp = random_space(&mut rng, n, false);
        let f = random_fn(&mut rng, n);
        let phi = random_fn(&mut rng, n);
        let gamma = sp.gamma_sq(&f).unwrap();
        let lhs: f64 = (0..n).map(|i| sp.m()[i] * gamma[i] * phi[i]).sum();
        let scale: f64 = (0..n).map(|i| sp.m()[i] * gamma[i] * phi[i].abs()).sum::<f64>().max(1e-300);
        let f2 = f.component_mul(&f);
        let fphi = f.component_mul(&phi);
        let rhs = -0.5 * sp.energy(&f2, &phi).unwrap() + sp.energy(&f, &fphi).unwrap();
        let oracle = -0.5 * energy_oracle(&sp, &f2, &phi) + energy_oracle(&sp, &f, &fphi);
        worst = worst.max((lhs - rhs).abs() / scale).max((lhs - oracle).abs() / scale);
    }
    verdict(1, "carre du champ identity", worst <= 1e-12, start, format!("max relative error {worst:.2e} (tol 1e-12)"));
}

#[test]
fn criterion_02_integration_by_parts() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=20);
        let sp = random_space(&mut rng, n, false);
        let f = random_fn(&mut rng, n);
        let g = random_fn(&mut rng, n);
        let lap = sp.laplacian(&f).unwrap();
        let lhs: f64 = (0..n).map(|i| sp.m()[i] * lap[i] * g[i]).sum();
        let scale: f64 = (0..n).map(|i| sp.m()[i] * (lap[i] * g[i]).abs()).sum::<f64>().max(1e-300);
        let rhs = -energy_oracle(&sp, &f, &g);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    verdict(2, "integration by parts", worst <= 1e-12, start, format!("max relative error {worst:.2e} (tol 1e-12)"));
}

/// Minimum cost over all basic feasible solutions of the transportation polytope.
fn vertex_brute_force(cost: &DMatrix<f64>, mu: &DVector<f64>, nu: &DVector<f64>) -> f64 {
    let n = mu.len();
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| cost[(i, j)].is_finite()).collect();
    let rhs = DVector::from_fn(2 * n, |r, _| if r < n { mu[r] } else { nu[r - n] });
    let mut best = f64::INFINITY;
    let incidence = |cols: &[usize]| {
        DMatrix::from_fn(2 * n, cols.len(), |r, c| {
            let (i, j) = cells[cols[c]];
            if (r < n && r == i) || (r >= n && r - n == j) { 1.0 } else { 0.0 }
        })
    };
    // one redundant row per connected block of finite cells
    let all: Vec<usize> = (0..cells.len()).collect();
    let basis = incidence(&all).rank(1e-10);
    if basis == 0 {
        return best;
    }
    let mut pick: Vec<usize> = (0..basis).collect();
    loop {
        let a = incidence(&pick);
        let svd = a.clone().svd(true, true);
        if svd.rank(1e-10) == basis {
            let x = svd.solve(&rhs, 1e-12).unwrap();
            if (&a * &x - &rhs).amax() < 1e-10 && x.iter().all(|v| *v >= -1e-12) {
                let c: f64 = (0..basis).map(|c| x[c] * cost[cells[pick[c]]]).sum();
                best = best.min(c);
            }
        }
        // next combination
        let mut k = basis;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if pick[k] < cells.len() - basis + k {
                pick[k] += 1;
                for l in k + 1..basis {
                    pick[l] = pick[l - 1] + 1;
                }
                break;
            }
        }
    }
}

fn random_extended_metric(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> (ExtendedDistanceMatrix, Vec<usize>) {
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let class: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let d = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else if class[i] != class[j] {
            f64::INFINITY
        } else {
            ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt()
        }
    });
    (ExtendedDistanceMatrix::new(d).unwrap(), class)
}

fn random_mass(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.random::<f64>() + 0.01);
    let s = v.sum();
    v / s
}

#[test]
fn criterion_03_kantorovich_duality() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_gap, mut inf_ok, mut brute_gap) = (0.0f64, true, 0.0f64);
    for case in 0..50 {
        let n = rng.random_range(2..=20);
        let classes = if case % 3 == 0 { 2 } else { 1 };
        let (d, class) = random_extended_metric(&mut rng, n, classes);
        let mu = random_mass(&mut rng, n);
        let mut nu = random_mass(&mut rng, n);
        if case % 6 == 3 {
            // class-balanced target, so the cost stays finite
            for c in 0..classes {
                let (ms, ns): (f64, f64) = (0..n).filter(|&i| class[i] == c).fold((0.0, 0.0), |a, i| (a.0 + mu[i], a.1 + nu[i]));
                for i in (0..n).filter(|&i| class[i] == c) {
                    if ns > 0.0 {
                        nu[i] *= ms / ns;
                    }
                }
            }
            nu /= nu.sum();
        }
        let power = 1 + (case % 2) as u32;
        let sol = kantorovich(&d, &mu, &nu, power).unwrap();
        let infinite = (0..classes).any(|c| {
            let (a, b) = (0..n).filter(|&i| class[i] == c).fold((0.0, 0.0), |s, i| (s.0 + mu[i], s.1 + nu[i]));
            (a - b).abs() > 1e-12
        });
        inf_ok &= infinite == sol.value.is_infinite();
        if sol.value.is_finite() {
            worst_gap = worst_gap.max((sol.value - sol.dual_value).abs());
        }
        if n <= 4 {
            let cost = d.matrix().map(|x| x.powi(power as i32));
            brute_gap = brute_gap.max(if sol.value.is_infinite() {
                if vertex_brute_force(&cost, &mu, &nu).is_infinite() { 0.0 } else { f64::INFINITY }
            } else {
                (vertex_brute_force(&cost, &mu, &nu) - sol.value).abs()
            });
        }
    }
    // a few extra tiny instances for the brute-force comparison
    for _ in 0..20 {
        let n = rng.random_range(2..=4);
        let (d, _) = random_extended_metric(&mut rng, n, 1);
        let (mu, nu) = (random_mass(&mut rng, n), random_mass(&mut rng, n));
        let sol = kantorovich(&d, &mu, &nu, 2).unwrap();
        brute_gap = brute_gap.max((vertex_brute_force(&d.matrix().map(|x| x * x), &mu, &nu) - sol.value).abs());
    }
    let pass = worst_gap <= 1e-8 && inf_ok && brute_gap <= 1e-8;
    verdict(3, "Kantorovich duality", pass, start, format!("max gap {worst_gap:.2e}, infinity detection {inf_ok}, brute force gap {brute_gap:.2e}"));
}

#[test]
fn criterion_04_hopf_lax_duality() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst, mut sampled_ok) = (0.0f64, true);
    for _ in 0..30 {
        let n = rng.random_range(2..=12);
        let (d, _) = random_extended_metric(&mut rng, n, 1);
        let (mu, nu) = (random_mass(&mut rng, n), random_mass(&mut rng, n));
        let samples: Vec<Function> = (0..10).map(|_| random_fn(&mut rng, n)).collect();
        let r = hopf_lax_duality_check(&d, &mu, &nu, &samples).unwrap();
        worst = worst.max(r.gap);
        sampled_ok &= !r.sampled_exceeds_bound;
    }
    verdict(4, "Hopf-Lax duality", worst <= 1e-6 && sampled_ok, start, format!("max |LP − dual| {worst:.2e}, sampled potentials below bound {sampled_ok}"));
}

#[test]
fn criterion_05_two_point_closed_forms() {
    let start = Instant::now();
    let sp = two_point();
    let sg = SpectralSemigroup::new(&sp).unwrap();
    let a = Density::new(&sp, dvector![2.0, 0.0]).unwrap();
    let b = Density::new(&sp, dvector![0.0, 2.0]).unwrap();
    // closed forms: Γ(f) = (f_a − f_b)², so d_E = 1; mass 1 moves distance 1;
    // w̃ ≡ 1 so W_E = |Δσ_a| = 1; σ_a − ½ decays like e^{−4t}, giving K = 4
    let de = intrinsic_distance(&sp, 0, 1).unwrap();
    let (lo, hi) = intrinsic_distance_bounds(&sp).unwrap();
    let (ma, mb) = (a.to_mass(&sp).values().clone(), b.to_mass(&sp).values().clone());
    let wd = kantorovich(&lo, &ma, &mb, 1).unwrap().value;
    let wd_hi = kantorovich(&hi, &ma, &mb, 1).unwrap().value;
    let l1 = we_dual_l1(&sp, &a, &b).unwrap();
    let bounds = dynamic_bounds(&sp, &a, &b, &DynamicSettings::default()).unwrap();
    let samples = vec![dvector![1.0, 0.0], dvector![0.3, -2.0], dvector![5.0, 4.5]];
    let k = be_best_k(&sp, &sg, &samples, &[0.05, 0.2, 1.0]).unwrap();
    let r0 = Density::new(&sp, dvector![1.6, 0.4]).unwrap();
    let r1 = Density::new(&sp, dvector![0.5, 1.5]).unwrap();
    let tgrid = [0.05, 0.1, 0.25, 0.5];
    let c = contractivity_check(&sp, &sg, DistanceSelector::We, &r0, &r1, 4.0, &tgrid, &DynamicSettings::default(), 1e-3).unwrap();
    let contraction = c.series["ratio"].iter().zip(&c.series["factor"]).map(|(r, f)| (r - f).abs()).fold(0.0, f64::max);
    let checks = [
        ("d_E", (de.lower - 1.0).abs().max((de.upper - 1.0).abs()) <= 1e-6),
        ("W_d", (wd - 1.0).abs().max((wd_hi - 1.0).abs()) <= 1e-6),
        ("W_E*1", (l1.lower - 1.0).abs().max((l1.upper - 1.0).abs()) <= 1e-6),
        ("W_E", bounds.interval.lower >= 1.0 - 1e-3 && bounds.interval.upper <= 1.0 + 1e-3),
        ("W_E* lower", bounds.dual.squared_lower.sqrt() >= 1.0 - 2e-3),
        ("BE K", (k - 4.0).abs() <= 1e-6),
        ("contraction", contraction <= 1e-3),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = format!(
        "d_E [{:.9}, {:.9}], W_d [{wd:.9}, {wd_hi:.9}], W_E*1 [{:.7}, {:.7}], W_E [{:.6}, {:.6}], K {k:.9}, contraction error {contraction:.2e}, failed {failed:?}",
        de.lower, de.upper, l1.lower, l1.upper, bounds.interval.lower, bounds.interval.upper
    );
    verdict(5, "two-point closed forms", failed.is_empty(), start, detail);
}

#[test]
fn criterion_06_sandwich() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tol = 1e-3;
    let (mut fails, mut worst_chain, mut worst_dual) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..20 {
        let n = rng.random_range(2..=8);
        let sp = random_space(&mut rng, n, true);
        let a = random_density(&mut rng, &sp, 0.05);
        let b = random_density(&mut rng, &sp, 0.05);
        let r = sandwich_check(&sp, &a, &b, &DynamicSettings::default(), tol).unwrap();
        worst_chain = worst_chain.max(r.chain_gap);
        worst_dual = worst_dual.max(r.dual_gap);
        fails += usize::from(!r.pass);
    }
    let detail = format!(
        "{fails}/20 instances fail; max (W_dE lower − W_E* lower) {worst_chain:.3e}, max (W_E* lower − W_E upper) {worst_dual:.3e}, allowed 2e-3"
    );
    verdict(6, "sandwich W_dE ≤ W_E* ≤ W_E", fails == 0, start, detail);
}

#[test]
fn criterion_07_hopf_cole_mass_and_bounds() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut drift, mut excess, mut discrete) = (0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for case in 0..20 {
        let sp = if case % 2 == 0 { two_point() } else { path(10, 1.0).unwrap() };
        let n = sp.n();
        // φ_s = g − s c with c ≥ ½ max Γ(g) is a subsolution
        let g = random_fn(&mut rng, n) * 0.2;
        let c = 0.5 * sp.gamma_sq(&g).unwrap().max() + rng.random::<f64>() * 0.1;
        let phi: Vec<Function> = (0..=8).map(|j| g.add_scalar(-c * j as f64 / 8.0)).collect();
        let zeta1 = DVector::from_fn(n, |_, _| rng.random_range(0.5..3.0));
        let hc = hopf_cole_solve(&sp, 0.5, &phi, &zeta1, 64).unwrap();
        drift = drift.max(hc.max_mass_drift);
        excess = excess.max(hc.max_bound_excess);
        discrete = discrete.max(hc.max_discrete_bound_excess);
    }
    let pass = drift <= 1e-10 && excess <= 1e-10;
    verdict(7, "Hopf-Cole mass and bounds", pass, start, format!("max mass drift {drift:.2e}, max excess over α e^(−D(1−s)) ≤ ζ ≤ β e^(D(1−s)) {excess:.2e}, over implicit-Euler bounds {discrete:.2e}"));
}

fn observed_orders(residuals: &[f64]) -> Vec<f64> {
    residuals.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[test]
fn criterion_08_entropy_dissipation_order() {
    let start = Instant::now();
    let t2 = two_point();
    let ou = ou_grid(4.0, 0.25).unwrap();
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, sp, rho) in [
        ("T2", t2.clone(), Density::new(&t2, dvector![1.7, 0.3]).unwrap()),
        ("ou_grid(0.25)", ou.clone(), {
            let x = ou_grid_points(4.0, 0.25).unwrap();
            Density::normalized(&ou, DVector::from_iterator(x.len(), x.iter().map(|x| (-(x - 1.0).powi(2)).exp() + 0.1))).unwrap()
        }),
    ] {
        let sg = SpectralSemigroup::new(&sp).unwrap();
        let dts = [0.04, 0.02, 0.01, 0.005];
        let mut res = Vec::new();
        let mut defect = 0.0;
        for dt in dts {
            let r = entropy_dissipation_check(&sp, &sg, &rho, &[0.1, 0.2, 0.3], dt).unwrap();
            res.push(r.max_residual);
            defect = r.max_locality_defect;
        }
        let orders = observed_orders(&res);
        let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
        pass &= min_order >= 1.8;
        lines.push(format!("{name}: residuals {}, orders {orders:.2?}, |E(ρ,log ρ) − F| {defect:.3e}", sci(&res)));
    }
    verdict(8, "entropy dissipation O(dt²)", pass, start, lines.join("; "));
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

#[test]
fn criterion_09_ou_refinement() {
    let start = Instant::now();
    let hs = [0.5, 0.25, 0.125];
    let (mut mehler, mut best_k, mut evi, mut defect) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut interior = Vec::new();
    for &h in &hs {
        let sp = ou_grid(4.0, h).unwrap();
        let sg = SpectralSemigroup::new(&sp).unwrap();
        let x = ou_grid_points(4.0, h).unwrap();
        let grid_fn = |f: &dyn Fn(f64) -> f64| DVector::from_iterator(x.len(), x.iter().map(|v| f(*v)));
        let smooth = grid_fn(&|v| (-(v * v) / 2.0).exp() * (1.0 + 0.5 * v.sin()));
        let diff = heat_apply(&sg, &smooth, 0.5).unwrap() - mehler_oracle(4.0, h, &smooth, 0.5).unwrap();
        mehler.push(diff.amax());
        interior.push((0..x.len()).filter(|&i| x[i].abs() <= 3.0).map(|i| diff[i].abs()).fold(0.0, f64::max));
        let samples = vec![grid_fn(&|v| v), grid_fn(&|v| v.sin()), grid_fn(&|v| v * v), grid_fn(&|v| (-(v * v)).exp())];
        best_k.push(be_best_k(&sp, &sg, &samples, &[0.05, 0.1, 0.25, 0.5, 1.0]).unwrap());
        let xbar = Density::normalized(&sp, grid_fn(&|v| (-(v - 1.0).powi(2) / 2.0).exp() + 0.2)).unwrap();
        let sigma = Density::normalized(&sp, grid_fn(&|v| 1.0 + 0.5 * (v / 2.0).tanh())).unwrap();
        let distance = dynamic_oracle(&sp, DynamicSettings::with_steps(6));
        let flow = heat_oracle(&sp, &sg);
        let ent = |r: &Density| entropy(&sp, r);
        let r = evi_integral_check(&distance, &flow, &ent, &xbar, &sigma, 1.0, &[0.1, 0.3, 0.6], 1e-3).unwrap();
        evi.push(r.max_violation);
        let bump = Density::normalized(&sp, grid_fn(&|v| 0.1 + (-(v * v)).exp())).unwrap();
        defect.push(fisher_defect(&sp, &bump));
    }
    let dist_k: Vec<f64> = best_k.iter().map(|k| (k - 1.0).abs()).collect();
    let a = strictly_decreasing(&mehler);
    let b = (0.8..=1.2).contains(&best_k[2]) && strictly_decreasing(&dist_k);
    let c = strictly_decreasing(&evi);
    let d = strictly_decreasing(&defect);
    let detail = format!(
        "(a) {a} Mehler gaps {} (|x| ≤ 3 only: {}); (b) {b} best K {best_k:.4?}; (c) {c} EVI max violation {}; (d) {d} Fisher defect {}",
        sci(&mehler),
        sci(&interior),
        sci(&evi),
        sci(&defect)
    );
    verdict(9, "OU refinement", a && b && c && d, start, detail);
}

#[test]
fn criterion_10_jko_identification() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    let p6 = path(6, 1.0).unwrap();
    for (name, sp, rho) in [
        ("T2", two_point(), Density::new(&two_point(), dvector![1.8, 0.2]).unwrap()),
        ("path6", p6.clone(), Density::normalized(&p6, dvector![3.0, 2.0, 1.0, 0.5, 0.3, 0.2]).unwrap()),
    ] {
        let sg = SpectralSemigroup::new(&sp).unwrap();
        let heat = sg.apply_density(&sp, &rho, 0.5).unwrap();
        let mut gaps = Vec::new();
        for steps in [10usize, 20, 40, 80] {
            let traj = jko_trajectory(&sp, &rho, 0.5 / steps as f64, steps, &JkoSettings::default()).unwrap();
            let end = traj.last().unwrap();
            gaps.push((0..sp.n()).map(|i| sp.m()[i] * (end.values()[i] - heat.values()[i]).abs()).sum::<f64>());
        }
        let ratios: Vec<f64> = gaps.windows(2).map(|w| w[0] / w[1]).collect();
        pass &= ratios.iter().all(|r| (1.5..=3.0).contains(r));
        lines.push(format!("{name}: L1 gaps {}, ratios {ratios:.3?}", sci(&gaps)));
    }
    verdict(10, "JKO identification", pass, start, lines.join("; "));
}

#[test]
fn criterion_11_epsilon_chains_and_degenerate_grid() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut monotone = true;
    for case in 0..50 {
        let n = rng.random_range(2..=10);
        let (d, _) = random_extended_metric(&mut rng, n, 1 + case % 3);
        let mut prev: Option<ExtendedDistanceMatrix> = None;
        for eps in [0.05, 0.1, 0.2, 0.4, 0.8, 1.6] {
            let de = epsilon_chain_distance(&d, eps).unwrap();
            if let Some(p) = &prev {
                monotone &= (0..n).all(|i| (0..n).all(|j| de.get(i, j) <= p.get(i, j)));
            }
            prev = Some(de);
        }
    }
    let sp = degenerate_grid(3, 2, 1.0).unwrap();
    // points b*rows + a: column b = 0 holds 0..3, column 1 holds 3..6
    let mut cross_inf = true;
    let mut within_finite = true;
    for x in 0..6 {
        for y in 0..6 {
            if x == y {
                continue;
            }
            let d = intrinsic_distance(&sp, x, y).unwrap();
            if x / 3 != y / 3 {
                cross_inf &= d.lower.is_infinite();
            } else {
                within_finite &= d.upper.is_finite();
            }
        }
    }
    let (lo, _) = intrinsic_distance_bounds(&sp).unwrap();
    let mut mu = DVector::zeros(6);
    mu[0] = 1.0;
    let mut nu = DVector::zeros(6);
    nu[3] = 1.0;
    let kinf = kantorovich(&lo, &mu, &nu, 2).unwrap().value.is_infinite();
    let pass = monotone && cross_inf && within_finite && kinf;
    verdict(11, "epsilon chains and degenerate grid", pass, start, format!("monotone {monotone}, cross-column +inf {cross_inf}, same-column finite {within_finite}, transport +inf {kinf}"));
}

#[test]
fn criterion_12_functional_inequalities() {
    let start = Instant::now();
    let t2 = two_point();
    let sg = SpectralSemigroup::new(&t2).unwrap();
    let samples = vec![dvector![1.0, 0.0], dvector![0.3, -2.0]];
    let r = functional_inequalities(&t2, &sg, 1.0, &samples, &FunctionalSettings { samples: 20, floor: 0.1, ..Default::default() }).unwrap();
    let c_p = r.details["c_p"].as_f64().unwrap();
    let poincare_ok = r.series["poincare"].iter().all(|x| *x <= 0.0);
    let ou = ou_grid(4.0, 0.5).unwrap();
    let sgo = SpectralSemigroup::new(&ou).unwrap();
    let x = ou_grid_points(4.0, 0.5).unwrap();
    let smooth = vec![DVector::from_iterator(x.len(), x.iter().copied()), DVector::from_iterator(x.len(), x.iter().map(|v| v.sin()))];
    let settings = FunctionalSettings { samples: 10, floor: 0.1, seed: 12, dynamic: DynamicSettings::with_steps(6) };
    let o = functional_inequalities(&ou, &sgo, 0.8, &smooth, &settings).unwrap();
    let talagrand_ok = o.series["talagrand"].iter().all(|x| *x <= 0.0);
    let kt = o.details["k_talagrand"].as_f64().unwrap();
    let pass = (c_p - 0.25).abs() <= 1e-12 && poincare_ok && talagrand_ok;
    verdict(12, "functional inequalities", pass, start, format!("T2 c_P {c_p:.15}, Poincaré bound on 20 pairs {poincare_ok}, OU Talagrand at K=0.8 {talagrand_ok} (empirical K_T {kt:.4}, BE pass {})", o.details.get("be_pass").map_or("n/a".to_string(), |v| v.to_string())));
}

#[test]
fn criterion_13_determinism() {
    let start = Instant::now();
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut names = Vec::new();
    let mut identical = true;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let run = |jobs| {
            let out = tempfile::tempdir().unwrap();
            let opts = RunOptions { out_dir: Some(out.path().to_path_buf()), seed: Some(13), jobs };
            let outcome = run_scenario_file(&path, &opts).unwrap();
            let mut files = BTreeMap::new();
            for f in std::fs::read_dir(out.path()).unwrap() {
                let f = f.unwrap().path();
                if f.extension().and_then(|e| e.to_str()) == Some("json") {
                    files.insert(f.file_name().unwrap().to_owned(), std::fs::read(&f).unwrap());
                }
            }
            (outcome.json_bytes, files)
        };
        let (a, fa) = run(1);
        let (b, fb) = run(4);
        identical &= a == b && fa == fb && !fa.is_empty();
        names.push(path.file_name().unwrap().to_string_lossy().into_owned());
    }
    names.sort();
    let pass = identical && !names.is_empty();
    verdict(13, "determinism", pass, start, format!("scenarios {names:?}, byte-identical across runs and job counts {identical}"));
}
