//! Lower/upper bound pairs backed by feasible witnesses.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::transport::extended_to_json;

/// A certified enclosure `lower ≤ value ≤ upper`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifiedInterval {
    #[serde(serialize_with = "ser_extended")]
    pub lower: f64,
    #[serde(serialize_with = "ser_extended")]
    pub upper: f64,
    /// How each bound was obtained.
    pub lower_certificate: String,
    pub upper_certificate: String,
    /// Set when a solver stopped before reaching its tolerance.
    pub flagged: bool,
}

fn ser_extended<S: serde::Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    extended_to_json(*x).serialize(s)
}

impl CertifiedInterval {
    pub fn new(lower: f64, upper: f64, lower_certificate: impl Into<String>, upper_certificate: impl Into<String>) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(Error::CrossedBounds { lower, upper });
        }
        Ok(Self {
            lower,
            upper,
            lower_certificate: lower_certificate.into(),
            upper_certificate: upper_certificate.into(),
            flagged: false,
        })
    }

    /// `[x, x]`, for values known in closed form.
    pub fn exact(x: f64, certificate: impl Into<String>) -> Self {
        let c = certificate.into();
        Self { lower: x, upper: x, lower_certificate: c.clone(), upper_certificate: c, flagged: false }
    }

    pub fn infinite(certificate: impl Into<String>) -> Self {
        Self::exact(f64::INFINITY, certificate)
    }

    pub fn flagged(mut self) -> Self {
        self.flagged = true;
        self
    }

    pub fn width(&self) -> f64 {
        if self.lower == self.upper {
            0.0
        } else {
            self.upper - self.lower
        }
    }

    pub fn midpoint(&self) -> f64 {
        if self.lower.is_infinite() || self.upper.is_infinite() {
            self.upper
        } else {
            0.5 * (self.lower + self.upper)
        }
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lower - tol && x <= self.upper + tol
    }

    /// Enclosure of `√x` from an enclosure of `x ≥ 0`.
    pub fn sqrt(&self) -> Self {
        Self { lower: self.lower.max(0.0).sqrt(), upper: self.upper.max(0.0).sqrt(), ..self.clone() }
    }

    /// Enclosure of `x²` from an enclosure of `x ≥ 0`.
    pub fn square(&self) -> Self {
        Self { lower: self.lower.max(0.0).powi(2), upper: self.upper.max(0.0).powi(2), ..self.clone() }
    }

    /// Intersection of two enclosures of the same value.
    pub fn intersect(&self, other: &Self) -> Result<Self> {
        let (lower, lower_certificate) =
            if other.lower > self.lower { (other.lower, &other.lower_certificate) } else { (self.lower, &self.lower_certificate) };
        let (upper, upper_certificate) =
            if other.upper < self.upper { (other.upper, &other.upper_certificate) } else { (self.upper, &self.upper_certificate) };
        let mut out = Self::new(lower, upper, lower_certificate.clone(), upper_certificate.clone())?;
        out.flagged = self.flagged || other.flagged;
        Ok(out)
    }
}
