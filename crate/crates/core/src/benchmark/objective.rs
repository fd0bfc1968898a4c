use std::f64::consts::PI;

use nalgebra::DVector;

use crate::control::BlackBox;
use crate::error::{Error, Result};

/// Standard test functions, all minimized at `shift` (rosenbrock at `shift + 1`).
///
/// With `z = x − shift`:
///
/// * sphere: `Σ zᵢ²`
/// * ellipsoid: `Σ c^((i−1)/(d−1)) zᵢ²`, `c` the condition number
/// * rosenbrock: `Σ_{i<d} 100(zᵢ₊₁ − zᵢ²)² + (1 − zᵢ)²`
/// * rastrigin: `10d + Σ (zᵢ² − 10 cos 2πzᵢ)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveKind {
    Sphere,
    Ellipsoid { condition: f64 },
    Rosenbrock,
    Rastrigin,
}

impl ObjectiveKind {
    pub fn value(&self, z: &DVector<f64>) -> f64 {
        let d = z.len();
        match *self {
            ObjectiveKind::Sphere => z.norm_squared(),
            ObjectiveKind::Ellipsoid { condition } => z
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let exp = if d > 1 { i as f64 / (d - 1) as f64 } else { 0.0 };
                    condition.powf(exp) * v * v
                })
                .sum(),
            ObjectiveKind::Rosenbrock => (0..d.saturating_sub(1))
                .map(|i| 100.0 * (z[i + 1] - z[i] * z[i]).powi(2) + (1.0 - z[i]).powi(2))
                .sum(),
            ObjectiveKind::Rastrigin => {
                10.0 * d as f64 + z.iter().map(|v| v * v - 10.0 * (2.0 * PI * v).cos()).sum::<f64>()
            }
        }
    }
}

/// A test function with an evaluation counter.
#[derive(Debug, Clone)]
pub struct Objective {
    kind: ObjectiveKind,
    shift: DVector<f64>,
    count: u64,
}

impl Objective {
    pub fn new(kind: ObjectiveKind, dim: usize, shift: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("objective dimension must be >= 1"));
        }
        if let ObjectiveKind::Ellipsoid { condition } = kind {
            if !(condition >= 1.0 && condition.is_finite()) {
                return Err(Error::param(format!("ellipsoid condition must be >= 1, got {condition}")));
            }
        }
        if kind == ObjectiveKind::Rosenbrock && dim < 2 {
            return Err(Error::param("rosenbrock needs dimension >= 2"));
        }
        let shift = match shift {
            Some(s) if s.len() != dim => {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.len(),
                })
            }
            Some(s) => DVector::from_vec(s),
            None => DVector::zeros(dim),
        };
        Ok(Self { kind, shift, count: 0 })
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn evaluate(&mut self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.shift.len() {
            return Err(Error::DimensionMismatch {
                expected: self.shift.len(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("objective input"));
        }
        self.count += 1;
        Ok(self.kind.value(&(x - &self.shift)))
    }
}

impl BlackBox for Objective {
    fn dim(&self) -> usize {
        self.shift.len()
    }

    fn evaluate(&mut self, x: &DVector<f64>) -> Result<f64> {
        Objective::evaluate(self, x)
    }
}
