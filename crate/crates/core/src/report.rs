//! Check reports: JSON with `"inf"` for `+∞`, CSV with an empty cell and a
//! companion `*_is_inf` column.

use std::collections::BTreeMap;
use std::io::Write;

use serde_json::{Map, Value};

use crate::error::Result;
use crate::transport::extended_to_json;

/// Outcome of one checker on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub check: String,
    pub params: BTreeMap<String, Value>,
    pub grid: Vec<f64>,
    /// Signed residuals, positive means the inequality is violated.
    pub residuals: Vec<f64>,
    pub max_violation: f64,
    pub tol: f64,
    pub pass: bool,
    /// Extra per-grid columns, same length as `grid`.
    pub series: BTreeMap<String, Vec<f64>>,
    /// Scalar findings outside the grid.
    pub details: BTreeMap<String, Value>,
}

impl CheckReport {
    /// `max_violation` is the largest residual (`−∞` on an empty grid);
    /// the check passes iff it stays within `tol`.
    pub fn new(check: impl Into<String>, grid: Vec<f64>, residuals: Vec<f64>, tol: f64) -> Self {
        let max_violation = residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pass = residuals.iter().all(|r| *r <= tol);
        Self {
            check: check.into(),
            params: BTreeMap::new(),
            grid,
            residuals,
            max_violation,
            tol,
            pass,
            series: BTreeMap::new(),
            details: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    pub fn num_param(self, key: &str, value: f64) -> Self {
        self.param(key, extended_to_json(value))
    }

    pub fn series(mut self, key: &str, values: Vec<f64>) -> Self {
        self.series.insert(key.into(), values);
        self
    }

    pub fn detail(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.details.insert(key.into(), value.into());
        self
    }

    pub fn num_detail(self, key: &str, value: f64) -> Self {
        self.detail(key, extended_to_json(value))
    }

    /// Overrides the verdict, for checks whose pass rule is not `residual ≤ tol`.
    pub fn with_pass(mut self, pass: bool) -> Self {
        self.pass = pass;
        self
    }

    pub fn to_json(&self) -> Value {
        let nums = |v: &[f64]| Value::Array(v.iter().map(|x| extended_to_json(*x)).collect());
        let mut out = Map::new();
        out.insert("check".into(), Value::String(self.check.clone()));
        out.insert("params".into(), Value::Object(self.params.clone().into_iter().collect()));
        out.insert("grid".into(), nums(&self.grid));
        out.insert("residuals".into(), nums(&self.residuals));
        out.insert("max_violation".into(), extended_to_json(self.max_violation));
        out.insert("tol".into(), extended_to_json(self.tol));
        out.insert("pass".into(), Value::Bool(self.pass));
        if !self.series.is_empty() {
            out.insert("series".into(), Value::Object(self.series.iter().map(|(k, v)| (k.clone(), nums(v))).collect()));
        }
        if !self.details.is_empty() {
            out.insert("details".into(), Value::Object(self.details.clone().into_iter().collect()));
        }
        Value::Object(out)
    }

    /// One row per grid point: `grid, residual, residual_is_inf`, then every
    /// series with its own `_is_inf` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["grid".to_string(), "residual".into(), "residual_is_inf".into()];
        for k in self.series.keys() {
            header.push(k.clone());
            header.push(format!("{k}_is_inf"));
        }
        wtr.write_record(&header)?;
        for (row, g) in self.grid.iter().enumerate() {
            let mut rec = vec![csv_cell(*g)];
            let mut push = |x: Option<f64>| {
                let x = x.unwrap_or(f64::NAN);
                rec.push(csv_cell(x));
                rec.push(x.is_infinite().to_string());
            };
            push(self.residuals.get(row).copied());
            for v in self.series.values() {
                push(v.get(row).copied());
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_cell(x: f64) -> String {
    if x.is_finite() {
        format!("{x:e}")
    } else {
        String::new()
    }
}

/// Collection written by one scenario run.
pub fn suite_json(scenario: &str, seed: u64, reports: &[(String, CheckReport)]) -> Value {
    let all_pass = reports.iter().all(|(_, r)| r.pass);
    let items: Vec<Value> = reports
        .iter()
        .map(|(id, r)| {
            let mut v = r.to_json();
            v.as_object_mut().expect("report is an object").insert("id".into(), Value::String(id.clone()));
            v
        })
        .collect();
    serde_json::json!({ "scenario": scenario, "seed": seed, "pass": all_pass, "reports": items })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinity_in_json_and_csv() {
        let r = CheckReport::new("demo", vec![0.0, 1.0], vec![-1.0, f64::INFINITY], 1e-9)
            .series("w", vec![2.0, f64::INFINITY])
            .num_param("K", 1.0);
        assert!(!r.pass);
        let v = r.to_json();
        assert_eq!(v["residuals"][1], "inf");
        assert_eq!(v["max_violation"], "inf");
        assert_eq!(v["series"]["w"][1], "inf");
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "grid,residual,residual_is_inf,w,w_is_inf");
        assert_eq!(lines[2], "1e0,,true,,true");
    }

    #[test]
    fn empty_report_passes() {
        let r = CheckReport::new("empty", vec![], vec![], 0.0);
        assert!(r.pass);
        assert_eq!(r.to_json()["max_violation"], Value::Null);
    }
}
