//! TOML scenarios: a space, a list of experiments and where to write reports.
//!
//! ```toml
//! name = "demo"
//! seed = 7
//! [space]
//! builder = "path"
//! params = { n = 5 }
//! [[experiment]]
//! id = "gap"
//! check = "be_best_k"
//! params = { samples = "eigen" }
//! ```
//!
//! Densities are given as arrays (normalized against `m`) or as recipes:
//! `"uniform"`, `"point:i"`, `"bump:c:w:floor"` and `"tilt:a"`, the last two
//! evaluated at the point coordinates (grid positions for `ou_grid`, indices
//! otherwise).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::certified::CertifiedInterval;
use crate::dynamic::{dynamic_bounds, sandwich_check, we_geodesic, DynamicSettings};
use crate::error::{Error, Result};
use crate::flows::{
    approximate_convexity_check, be_best_k, be_check, contractivity_check, dynamic_oracle, entropy_convexity_check, evi_integral_check,
    evi_regularization_check, evi_witness, functional_inequalities, heat_oracle, hopf_cole_solve, jko_trajectory, DistanceSelector,
    FunctionalSettings, JkoMetric, JkoSettings,
};
use crate::heat::{entropy, entropy_dissipation_check, fisher_defect, heat_apply, SpectralSemigroup};
use crate::intrinsic::{intrinsic_distance, intrinsic_distance_bounds};
use crate::report::{suite_json, CheckReport};
use crate::space::{Density, FiniteEnergySpace, Function};
use crate::spaces::{build_space, mehler_oracle, ou_grid_points};
use crate::transport::kantorovich;

pub const CHECKS: [&str; 19] = [
    "approximate_convexity",
    "be_best_k",
    "be_check",
    "contractivity",
    "entropy_convexity",
    "entropy_dissipation",
    "evi_integral",
    "evi_regularization",
    "evi_witness",
    "fisher_defect",
    "functional_inequalities",
    "heat_mehler",
    "hopf_cole",
    "intrinsic_distance",
    "jko",
    "kantorovich",
    "sandwich",
    "we_distance",
    "spectral_gap",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub builder: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl SpaceSpec {
    pub fn build(&self) -> Result<FiniteEnergySpace> {
        build_space(&self.builder, &self.params)
    }

    /// Point coordinates used by density and function recipes.
    pub fn coords(&self, n: usize) -> Result<Vec<f64>> {
        if self.builder == "ou_grid" {
            let h = self.params.get("h").copied().ok_or_else(|| Error::InvalidArgument("missing parameter 'h'".into()))?;
            ou_grid_points(self.params.get("L").copied().unwrap_or(4.0), h)
        } else {
            Ok((0..n).map(|i| i as f64).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub id: String,
    pub check: String,
    /// Overrides the scenario space for this experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceSpec>,
    #[serde(default)]
    pub params: BTreeMap<String, toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    pub dir: PathBuf,
    #[serde(default = "yes")]
    pub csv: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub space: SpaceSpec,
    #[serde(default, rename = "experiment")]
    pub experiments: Vec<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Output>,
}

impl Scenario {
    /// Parses and validates builder and check names.
    pub fn from_toml(text: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))
    }

    fn validate(&self) -> Result<()> {
        let known_space = |s: &SpaceSpec| {
            if crate::spaces::BUILDERS.contains(&s.builder.as_str()) {
                Ok(())
            } else {
                Err(Error::Scenario(format!("unknown space builder '{}'", s.builder)))
            }
        };
        known_space(&self.space)?;
        let mut ids = std::collections::BTreeSet::new();
        for (k, e) in self.experiments.iter().enumerate() {
            if !CHECKS.contains(&e.check.as_str()) {
                return Err(Error::Scenario(format!("experiment[{k}] '{}': unknown check '{}'", e.id, e.check)));
            }
            if !ids.insert(e.id.clone()) {
                return Err(Error::Scenario(format!("experiment[{k}]: duplicate id '{}'", e.id)));
            }
            if let Some(s) = &e.space {
                known_space(s)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub pass: bool,
    pub reports: Vec<(String, CheckReport)>,
    pub json_bytes: Vec<u8>,
    pub written: Vec<PathBuf>,
}

/// Runs every experiment, writes `<name>.json` plus one CSV per experiment.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<RunOutcome> {
    let seed = opts.seed.unwrap_or(sc.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Scenario(format!("thread pool: {e}")))?;
    let reports: Vec<(String, CheckReport)> = pool.install(|| {
        sc.experiments
            .par_iter()
            .enumerate()
            .map(|(k, e)| {
                let space = e.space.as_ref().unwrap_or(&sc.space);
                log::info!("running {} ({}) on {}", e.id, e.check, space.builder);
                let report = run_check(&e.check, space, &e.params, seed.wrapping_add(k as u64)).unwrap_or_else(|err| {
                    log::error!("experiment {} failed: {err}", e.id);
                    CheckReport::new(e.check.clone(), vec![], vec![], 0.0).with_pass(false).detail("error", err.to_string())
                });
                (e.id.clone(), report)
            })
            .collect()
    });
    let json = suite_json(&sc.name, seed, &reports);
    let mut json_bytes = serde_json::to_vec_pretty(&json)?;
    json_bytes.push(b'\n');
    let mut written = Vec::new();
    let dir = opts.out_dir.clone().or_else(|| sc.output.as_ref().map(|o| o.dir.clone()));
    if let Some(dir) = dir {
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.json", sc.name));
        std::fs::write(&path, &json_bytes)?;
        written.push(path);
        if sc.output.as_ref().is_none_or(|o| o.csv) {
            for (id, r) in &reports {
                let path = dir.join(format!("{}__{id}.csv", sc.name));
                r.write_csv(std::fs::File::create(&path)?)?;
                written.push(path);
            }
        }
    }
    let pass = reports.iter().all(|(_, r)| r.pass);
    Ok(RunOutcome { pass, reports, json_bytes, written })
}

pub fn run_scenario_file(path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    run_scenario(&Scenario::load(path)?, opts)
}

type Params = BTreeMap<String, toml::Value>;

fn num(p: &Params, key: &str, default: Option<f64>) -> Result<f64> {
    match p.get(key) {
        Some(toml::Value::Float(x)) => Ok(*x),
        Some(toml::Value::Integer(x)) => Ok(*x as f64),
        Some(toml::Value::String(s)) if s == "inf" => Ok(f64::INFINITY),
        Some(other) => Err(Error::Scenario(format!("parameter '{key}': expected a number, got {other}"))),
        None => default.ok_or_else(|| Error::Scenario(format!("missing parameter '{key}'"))),
    }
}

fn count(p: &Params, key: &str, default: usize) -> Result<usize> {
    let v = num(p, key, Some(default as f64))?;
    if v < 0.0 || v.fract() != 0.0 {
        return Err(Error::Scenario(format!("parameter '{key}' = {v} is not a count")));
    }
    Ok(v as usize)
}

fn text<'a>(p: &'a Params, key: &str, default: &'a str) -> Result<&'a str> {
    match p.get(key) {
        Some(toml::Value::String(s)) => Ok(s),
        Some(other) => Err(Error::Scenario(format!("parameter '{key}': expected a string, got {other}"))),
        None => Ok(default),
    }
}

fn numbers(v: &toml::Value, key: &str) -> Result<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| Error::Scenario(format!("parameter '{key}': expected an array")))?;
    arr.iter()
        .map(|x| match x {
            toml::Value::Float(f) => Ok(*f),
            toml::Value::Integer(i) => Ok(*i as f64),
            other => Err(Error::Scenario(format!("parameter '{key}': non-numeric entry {other}"))),
        })
        .collect()
}

fn list(p: &Params, key: &str, default: &[f64]) -> Result<Vec<f64>> {
    p.get(key).map_or(Ok(default.to_vec()), |v| numbers(v, key))
}

fn recipe_parts(s: &str) -> (&str, Vec<f64>) {
    let mut it = s.split(':');
    let head = it.next().unwrap_or("");
    (head, it.filter_map(|x| x.parse().ok()).collect())
}

fn density(sp: &FiniteEnergySpace, coords: &[f64], p: &Params, key: &str, default: &str) -> Result<Density> {
    let values = match p.get(key) {
        Some(v @ toml::Value::Array(_)) => DVector::from_vec(numbers(v, key)?),
        Some(toml::Value::String(s)) => recipe(sp, coords, s)?,
        Some(other) => return Err(Error::Scenario(format!("parameter '{key}': expected array or recipe, got {other}"))),
        None => recipe(sp, coords, default)?,
    };
    Density::normalized(sp, values)
}

fn recipe(sp: &FiniteEnergySpace, coords: &[f64], s: &str) -> Result<DVector<f64>> {
    let (head, args) = recipe_parts(s);
    let n = sp.n();
    let at = |i: usize, d: f64| args.get(i).copied().unwrap_or(d);
    match head {
        "uniform" => Ok(DVector::from_element(n, 1.0)),
        "point" => {
            let i = at(0, 0.0) as usize;
            if i >= n {
                return Err(Error::Scenario(format!("point index {i} out of range")));
            }
            let mut v = DVector::zeros(n);
            v[i] = 1.0 / sp.m()[i];
            Ok(v)
        }
        "bump" => {
            let (c, w, floor) = (at(0, 0.0), at(1, 1.0), at(2, 0.05));
            Ok(DVector::from_iterator(n, coords.iter().map(|x| (-(x - c).powi(2) / (2.0 * w * w)).exp() + floor)))
        }
        "tilt" => {
            let a = at(0, 0.5);
            Ok(DVector::from_iterator(n, coords.iter().map(|x| 1.0 + a * (x / 2.0).tanh())))
        }
        other => Err(Error::Scenario(format!("unknown density recipe '{other}'"))),
    }
}

/// Test functions: `"smooth"` (x, sin x, x², e^{−x²} at the coordinates),
/// `"eigen"` (nonconstant eigenfunctions) or `"random"`.
fn samples(sg: &SpectralSemigroup, coords: &[f64], kind: &str, rng: &mut ChaCha8Rng) -> Result<Vec<Function>> {
    let n = coords.len();
    let f = |g: &dyn Fn(f64) -> f64| DVector::from_iterator(n, coords.iter().map(|x| g(*x)));
    match kind {
        "smooth" => Ok(vec![f(&|x| x), f(&|x| x.sin()), f(&|x| x * x), f(&|x| (-x * x).exp())]),
        "eigen" => Ok((1..n.min(6)).map(|k| sg.basis().column(k).into_owned()).collect()),
        "random" => Ok((0..6).map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).collect()),
        other => Err(Error::Scenario(format!("unknown sample family '{other}'"))),
    }
}

fn dynamic_settings(p: &Params, seed: u64) -> Result<DynamicSettings> {
    Ok(DynamicSettings { steps: count(p, "steps", 8)?, seed, restarts: count(p, "restarts", 2)?, ..DynamicSettings::default() })
}

/// Scalar result compared with an optional `expect` value.
fn scalar_report(check: &str, value: f64, p: &Params) -> Result<CheckReport> {
    let tol = num(p, "tol", Some(1e-6))?;
    let r = match p.get("expect") {
        Some(_) => {
            let expect = num(p, "expect", None)?;
            let err = if value == expect { 0.0 } else { (value - expect).abs() };
            CheckReport::new(check, vec![0.0], vec![err], tol).num_param("expect", expect)
        }
        None => CheckReport::new(check, vec![], vec![], tol),
    };
    Ok(r.num_detail("value", value))
}

fn interval_report(check: &str, d: &CertifiedInterval, p: &Params) -> Result<CheckReport> {
    let tol = num(p, "tol", Some(1e-6))?;
    let r = match p.get("expect") {
        Some(_) => {
            let expect = num(p, "expect", None)?;
            let miss = if expect.is_infinite() && d.lower.is_infinite() {
                0.0
            } else {
                (d.lower - expect).max(expect - d.upper).max(0.0)
            };
            CheckReport::new(check, vec![0.0], vec![miss], tol).num_param("expect", expect)
        }
        None => CheckReport::new(check, vec![], vec![], tol),
    };
    Ok(r.num_detail("lower", d.lower).num_detail("upper", d.upper).detail("flagged", d.flagged))
}

/// Runs one registered check.
pub fn run_check(check: &str, space: &SpaceSpec, p: &Params, seed: u64) -> Result<CheckReport> {
    let sp = space.build()?;
    let sg = SpectralSemigroup::new(&sp)?;
    let coords = space.coords(sp.n())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tgrid = list(p, "tgrid", &[0.05, 0.1, 0.25, 0.5])?;
    let report = match check {
        "spectral_gap" => scalar_report(check, sg.spectral_gap().unwrap_or(0.0), p)?,
        "be_check" => be_check(&sp, &sg, num(p, "K", None)?, &samples(&sg, &coords, text(p, "samples", "eigen")?, &mut rng)?, &tgrid)?,
        "be_best_k" => {
            let fs = samples(&sg, &coords, text(p, "samples", "eigen")?, &mut rng)?;
            scalar_report(check, be_best_k(&sp, &sg, &fs, &tgrid)?, p)?
        }
        "contractivity" => {
            let (a, b) = (density(&sp, &coords, p, "rho0", "bump:0:1")?, density(&sp, &coords, p, "rho1", "tilt:0.5")?);
            let selector = if text(p, "distance", "W_E")? == "W_E*" { DistanceSelector::WeStar } else { DistanceSelector::We };
            contractivity_check(&sp, &sg, selector, &a, &b, num(p, "K", None)?, &tgrid, &dynamic_settings(p, seed)?, num(p, "tol", Some(1e-3))?)?
        }
        "evi_integral" | "evi_regularization" => {
            let xbar = density(&sp, &coords, p, "xbar", "bump:1:1:0.2")?;
            let sigma = density(&sp, &coords, p, "sigma", "tilt:0.5")?;
            let distance = dynamic_oracle(&sp, dynamic_settings(p, seed)?);
            let flow = heat_oracle(&sp, &sg);
            let ent = |r: &Density| entropy(&sp, r);
            let (k, tol) = (num(p, "K", None)?, num(p, "tol", Some(1e-3))?);
            if check == "evi_integral" {
                evi_integral_check(&distance, &flow, &ent, &xbar, &sigma, k, &tgrid, tol)?
            } else {
                evi_regularization_check(&distance, &flow, &ent, &xbar, &sigma, k, &tgrid, tol)?
            }
        }
        "evi_witness" => {
            let rho = density(&sp, &coords, p, "rho", "bump:1:1:0.2")?;
            let sigma = density(&sp, &coords, p, "sigma", "tilt:0.5")?;
            evi_witness(&sp, &sg, num(p, "t", Some(0.5))?, num(p, "K", None)?, &rho, &sigma, &dynamic_settings(p, seed)?, count(p, "hc_steps", 64)?, num(p, "tol", Some(1e-3))?)?
        }
        "hopf_cole" => {
            let n = sp.n();
            let amp = num(p, "amplitude", Some(0.2))?;
            let g = DVector::from_fn(n, |_, _| amp * rng.random_range(-1.0..1.0));
            let c = 0.5 * sp.gamma_sq(&g)?.max();
            let phi: Vec<Function> = (0..=8).map(|j| g.add_scalar(-c * j as f64 / 8.0)).collect();
            let zeta1 = match p.get("zeta1") {
                Some(v) => DVector::from_vec(numbers(v, "zeta1")?),
                None => DVector::from_fn(n, |_, _| rng.random_range(0.5..3.0)),
            };
            let hc = hopf_cole_solve(&sp, num(p, "t", Some(0.5))?, &phi, &zeta1, count(p, "hc_steps", 64)?)?;
            let mass1 = hc.masses[hc.masses.len() - 1];
            CheckReport::new(check, hc.s.clone(), hc.masses.iter().map(|m| (m - mass1).abs()).collect(), 1e-10)
                .num_detail("mass", mass1)
                .num_detail("D", hc.d)
                .num_detail("bound_excess", hc.max_bound_excess)
                .num_detail("discrete_bound_excess", hc.max_discrete_bound_excess)
        }
        "jko" => {
            let rho0 = density(&sp, &coords, p, "rho0", "bump:0:1")?;
            let (tau, steps) = (num(p, "tau", Some(0.05))?, count(p, "jko_steps", 10)?);
            let metric = if text(p, "metric", "linearized")? == "nested" { JkoMetric::Nested } else { JkoMetric::Linearized };
            let traj = jko_trajectory(&sp, &rho0, tau, steps, &JkoSettings { metric, ..JkoSettings::default() })?;
            let heat = sg.apply_density(&sp, &rho0, tau * steps as f64)?;
            let ents: Vec<f64> = traj.iter().map(|r| entropy(&sp, r)).collect();
            let gap: f64 = (0..sp.n()).map(|i| sp.m()[i] * (traj[steps].values()[i] - heat.values()[i]).abs()).sum();
            let grid: Vec<f64> = (1..=steps).map(|k| k as f64 * tau).collect();
            CheckReport::new(check, grid, ents.windows(2).map(|w| w[1] - w[0]).collect(), 1e-12)
                .series("entropy", ents[1..].to_vec())
                .num_param("tau", tau)
                .num_detail("l1_gap_to_heat", gap)
        }
        "functional_inequalities" => {
            let fs = samples(&sg, &coords, text(p, "samples", "eigen")?, &mut rng)?;
            let settings = FunctionalSettings {
                samples: count(p, "pairs", 20)?,
                floor: num(p, "floor", Some(0.1))?,
                seed,
                dynamic: dynamic_settings(p, seed)?,
            };
            functional_inequalities(&sp, &sg, num(p, "K", None)?, &fs, &settings)?
        }
        "entropy_convexity" | "approximate_convexity" => {
            let (a, b) = (density(&sp, &coords, p, "rho0", "bump:0:1")?, density(&sp, &coords, p, "rho1", "tilt:0.5")?);
            let settings = dynamic_settings(p, seed)?;
            let geo = we_geodesic(&sp, &a, &b, &settings)?;
            let w = dynamic_bounds(&sp, &a, &b, &settings)?.interval;
            let (k, tol) = (num(p, "K", None)?, num(p, "tol", Some(1e-3))?);
            if check == "entropy_convexity" {
                entropy_convexity_check(&sp, &geo.curve, k, &w, tol)?
            } else {
                approximate_convexity_check(&sp, &sg, &geo.curve, k, num(p, "t", Some(0.1))?, &w, tol)?
            }
        }
        "entropy_dissipation" => {
            let rho = density(&sp, &coords, p, "rho", "bump:1:1:0.1")?;
            let r = entropy_dissipation_check(&sp, &sg, &rho, &tgrid, num(p, "dt", Some(0.01))?)?;
            let tol = num(p, "tol", Some(f64::INFINITY))?;
            CheckReport::new(check, tgrid.clone(), r.points.iter().map(|q| q.residual).collect(), tol)
                .series("entropy_rate", r.points.iter().map(|q| q.entropy_rate).collect())
                .series("fisher", r.points.iter().map(|q| q.fisher).collect())
                .series("dissipation", r.points.iter().map(|q| q.dissipation).collect())
                .num_detail("max_locality_defect", r.max_locality_defect)
        }
        "heat_mehler" => {
            if space.builder != "ou_grid" {
                return Err(Error::Scenario("heat_mehler needs an ou_grid space".into()));
            }
            let f = DVector::from_iterator(coords.len(), coords.iter().map(|x| (-x * x / 2.0).exp() * (1.0 + 0.5 * x.sin())));
            let (l, h) = (space.params.get("L").copied().unwrap_or(4.0), space.params["h"]);
            let gaps = tgrid
                .iter()
                .map(|&t| Ok((heat_apply(&sg, &f, t)? - mehler_oracle(l, h, &f, t)?).amax()))
                .collect::<Result<Vec<f64>>>()?;
            CheckReport::new(check, tgrid.clone(), gaps, num(p, "tol", Some(f64::INFINITY))?)
        }
        "fisher_defect" => {
            let rho = density(&sp, &coords, p, "rho", "bump:0:1:0.1")?;
            scalar_report(check, fisher_defect(&sp, &rho), p)?
        }
        "sandwich" => {
            let (a, b) = (density(&sp, &coords, p, "rho0", "bump:0:1")?, density(&sp, &coords, p, "rho1", "tilt:0.5")?);
            let tol = num(p, "tol", Some(1e-3))?;
            let r = sandwich_check(&sp, &a, &b, &dynamic_settings(p, seed)?, tol)?;
            CheckReport::new(check, vec![0.0, 1.0], vec![r.chain_gap, r.dual_gap], 2.0 * tol)
                .num_detail("wde_lower", r.wde_lower)
                .num_detail("wde_upper", r.wde_upper)
                .num_detail("we_star_lower", r.we_star_lower)
                .num_detail("we_upper", r.we_upper)
                .num_detail("we_star_l1_lower", r.we_star_l1_lower)
        }
        "we_distance" => {
            let (a, b) = (density(&sp, &coords, p, "rho0", "bump:0:1")?, density(&sp, &coords, p, "rho1", "tilt:0.5")?);
            interval_report(check, &dynamic_bounds(&sp, &a, &b, &dynamic_settings(p, seed)?)?.interval, p)?
        }
        "intrinsic_distance" => {
            let d = intrinsic_distance(&sp, count(p, "x", 0)?, count(p, "y", 1)?)?;
            interval_report(check, &d, p)?
        }
        "kantorovich" => {
            let (a, b) = (density(&sp, &coords, p, "rho0", "point:0")?, density(&sp, &coords, p, "rho1", "uniform")?);
            let power = count(p, "power", 1)? as u32;
            let (lo, hi) = intrinsic_distance_bounds(&sp)?;
            let (ma, mb) = (a.to_mass(&sp).values().clone(), b.to_mass(&sp).values().clone());
            let lower = kantorovich(&lo, &ma, &mb, power)?.distance(power);
            let upper = kantorovich(&hi, &ma, &mb, power)?.distance(power);
            let d = CertifiedInterval::new(lower, upper.max(lower), "transport over d_E lower bounds", "transport over d_E upper bounds")?;
            interval_report(check, &d, p)?
        }
        other => return Err(Error::Unknown { kind: "check", name: other.to_string() }),
    };
    let params: BTreeMap<String, Value> =
        p.iter().map(|(k, v)| (k.clone(), serde_json::to_value(v).unwrap_or(Value::Null))).collect();
    let mut report = report;
    for (k, v) in params {
        report.params.entry(k).or_insert(v);
    }
    report.params.insert("space".into(), Value::String(space.builder.clone()));
    Ok(report)
}
