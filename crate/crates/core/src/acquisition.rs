//! Acquisition criteria computed from a GP posterior and the orderings they induce.

use serde::{Deserialize, Serialize};
use statrs::function::erf;

use crate::error::{Error, Result};

/// Criterion used to rank candidate points for true evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AcquisitionSpec {
    /// `μ + √var·u_α`, smaller is better.
    Quantile { alpha: f64 },
    /// Probability of improving on the best value so far.
    Poi,
    /// Probability of falling below a fixed threshold `T ≤ f_min`.
    PoiThreshold { threshold: f64 },
    /// Expected improvement over the best value so far.
    Ei,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        AcquisitionSpec::Ei
    }
}

impl AcquisitionSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            AcquisitionSpec::Quantile { alpha } if !(*alpha > 0.0 && *alpha < 1.0) => {
                Err(Error::param("alpha must lie in (0,1)"))
            }
            AcquisitionSpec::PoiThreshold { threshold } if !threshold.is_finite() => {
                Err(Error::NonFinite("threshold"))
            }
            _ => Ok(()),
        }
    }

    /// Whether larger criterion values are preferred.
    pub fn maximizes(&self) -> bool {
        !matches!(self, AcquisitionSpec::Quantile { .. })
    }

    /// Criterion value for a posterior `(mu, var)` given the best true fitness so far.
    pub fn evaluate(&self, mu: f64, var: f64, f_min: f64) -> Result<f64> {
        match *self {
            AcquisitionSpec::Quantile { alpha } => Ok(quantile_criterion(mu, var, alpha)?),
            AcquisitionSpec::Poi => Ok(poi(mu, var, f_min)),
            AcquisitionSpec::PoiThreshold { threshold } => {
                if threshold > f_min {
                    return Err(Error::param(format!(
                        "PoI threshold {threshold} exceeds the best value found so far {f_min}"
                    )));
                }
                Ok(poi(mu, var, threshold))
            }
            AcquisitionSpec::Ei => Ok(ei(mu, var, f_min)),
        }
    }

    pub fn evaluate_all(&self, posterior: &[(f64, f64)], f_min: f64) -> Result<Vec<f64>> {
        posterior.iter().map(|&(mu, var)| self.evaluate(mu, var, f_min)).collect()
    }
}

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// `u_α`, the α-quantile of `N(0, 1)`.
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha must lie in (0,1)"));
    }
    if alpha == 0.5 {
        return Ok(0.0);
    }
    let mut z = -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * alpha);
    // Polish the rational approximation against the accurate cdf.
    for _ in 0..2 {
        let pdf = normal_pdf(z);
        if pdf == 0.0 {
            break;
        }
        let r = (normal_cdf(z) - alpha) / pdf;
        z -= r / (1.0 + 0.5 * z * r);
    }
    Ok(z)
}

/// `μ + √var·u_α`.
pub fn quantile_criterion(mu: f64, var: f64, alpha: f64) -> Result<f64> {
    let u = normal_quantile(alpha)?;
    if var <= 0.0 {
        return Ok(mu);
    }
    Ok(mu + var.sqrt() * u)
}

/// `Φ((threshold − μ)/√var)`; with zero variance, 1 on strict improvement else 0.
pub fn poi(mu: f64, var: f64, threshold: f64) -> f64 {
    if var <= 0.0 {
        return if mu < threshold { 1.0 } else { 0.0 };
    }
    normal_cdf((threshold - mu) / var.sqrt())
}

/// Closed-form expected improvement `√var·(νΦ(ν) + φ(ν))`, `ν = (f_min − μ)/√var`.
pub fn ei(mu: f64, var: f64, f_min: f64) -> f64 {
    if var <= 0.0 {
        return (f_min - mu).max(0.0);
    }
    let s = var.sqrt();
    let nu = (f_min - mu) / s;
    (s * (nu * normal_cdf(nu) + normal_pdf(nu))).max(0.0)
}

/// Candidate indices ordered best first under the criterion's ordering.
/// Ties keep their original index order.
pub fn rank_candidates(values: &[f64], spec: &AcquisitionSpec) -> Result<Vec<usize>> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NanCriterion);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    if spec.maximizes() {
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    } else {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    }
    Ok(order)
}
