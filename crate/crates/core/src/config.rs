//! Experiment configuration: a single JSON document.
//!
//! Only `objective.kind` and `objective.dim` are required. Defaults:
//!
//! | field | default |
//! |---|---|
//! | `objective.shift` | origin |
//! | `objective.target` | none |
//! | `objective.budget` | `1000·dim` true evaluations |
//! | `objective.hw_batch_size` | 1 |
//! | `cma.lambda` | `4 + ⌊3 ln d⌋` |
//! | `cma.sigma0` | 1.0 |
//! | `cma.mean0` | `(3, …, 3)` |
//! | `cma.update` | `standard` |
//! | `gp.kernel` | squared exponential, `length_scale` 2 |
//! | `gp.metric` | `mahalanobis` (live `σ²C`) |
//! | `gp.sigma_noise` | 0 |
//! | `gp.mean_prior` | `deterministic` with `mean` aggregate |
//! | `gp.n_train` | `5·λ` |
//! | `gp.scale_targets` | true |
//! | `acquisition` | `ei` |
//! | `strategy` | `none` |
//! | `execution.seeds` | `[0]` |
//! | `execution.jobs` | 1 |
//! | `execution.stagnation` | 50 generations |

use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionSpec;
use crate::benchmark::{Objective, ObjectiveKind};
use crate::cma::UpdateMode;
use crate::control::{StrategyConfig, SurrogateConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveName,
    /// Condition number, ellipsoid only (default 1e6).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<f64>,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default)]
    pub hw_batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    Sphere,
    Ellipsoid,
    Rosenbrock,
    Rastrigin,
}

impl ObjectiveConfig {
    pub fn objective_kind(&self) -> Result<ObjectiveKind> {
        match (self.kind, self.condition) {
            (ObjectiveName::Ellipsoid, c) => Ok(ObjectiveKind::Ellipsoid {
                condition: c.unwrap_or(1e6),
            }),
            (_, Some(_)) => Err(Error::config("objective.condition", "only valid for the ellipsoid")),
            (ObjectiveName::Sphere, None) => Ok(ObjectiveKind::Sphere),
            (ObjectiveName::Rosenbrock, None) => Ok(ObjectiveKind::Rosenbrock),
            (ObjectiveName::Rastrigin, None) => Ok(ObjectiveKind::Rastrigin),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CmaConfig {
    #[serde(default)]
    pub lambda: Option<usize>,
    #[serde(default)]
    pub sigma0: Option<f64>,
    #[serde(default)]
    pub mean0: Option<Vec<f64>>,
    #[serde(default)]
    pub update: UpdateMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default = "default_stagnation")]
    pub stagnation: usize,
    /// Output directory used when the CLI gets no `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_jobs() -> usize {
    1
}

fn default_stagnation() -> usize {
    50
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            jobs: default_jobs(),
            stagnation: default_stagnation(),
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub cma: CmaConfig,
    #[serde(default)]
    pub gp: SurrogateConfig,
    #[serde(default)]
    pub acquisition: AcquisitionSpec,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub execution: ExecutionConfig,
}

/// Parse and validate a config document. Unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    /// Minimal config for `kind` in `dim` dimensions, everything else default.
    pub fn new(kind: ObjectiveName, dim: usize) -> Self {
        Self {
            objective: ObjectiveConfig {
                kind,
                condition: None,
                dim,
                shift: None,
                target: None,
                budget: None,
                hw_batch_size: None,
            },
            cma: CmaConfig::default(),
            gp: SurrogateConfig::default(),
            acquisition: AcquisitionSpec::default(),
            strategy: StrategyConfig::None,
            execution: ExecutionConfig::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.objective.dim
    }

    pub fn lambda(&self) -> usize {
        self.cma
            .lambda
            .unwrap_or_else(|| 4 + (3.0 * (self.dim().max(1) as f64).ln()).floor() as usize)
    }

    pub fn sigma0(&self) -> f64 {
        self.cma.sigma0.unwrap_or(1.0)
    }

    pub fn mean0(&self) -> Vec<f64> {
        self.cma.mean0.clone().unwrap_or_else(|| vec![3.0; self.dim()])
    }

    pub fn budget(&self) -> u64 {
        self.objective.budget.unwrap_or(1000 * self.dim() as u64)
    }

    /// Batch size of the hardware cost model.
    pub fn hw_batch_size(&self) -> usize {
        self.strategy
            .hardware_batch()
            .or(self.objective.hw_batch_size)
            .unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::config("objective.dim", "must be >= 1"));
        }
        Objective::new(self.objective.objective_kind()?, d, self.objective.shift.clone())
            .map_err(|e| Error::config("objective", e.to_string()))?;
        if self.objective.hw_batch_size == Some(0) {
            return Err(Error::config("objective.hw_batch_size", "must be >= 1"));
        }
        if let Some(t) = self.objective.target {
            if !t.is_finite() {
                return Err(Error::config("objective.target", "must be finite"));
            }
        }
        if self.lambda() < 2 {
            return Err(Error::config("cma.lambda", "population size must be >= 2"));
        }
        let s = self.sigma0();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::config("cma.sigma0", format!("must be positive, got {s}")));
        }
        let m = self.mean0();
        if m.len() != d {
            return Err(Error::config("cma.mean0", format!("expected {d} entries, got {}", m.len())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("cma.mean0", "must be finite"));
        }
        self.gp.validate().map_err(|e| Error::config("gp", e.to_string()))?;
        if let AcquisitionSpec::Quantile { alpha } = self.acquisition {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::config("acquisition.alpha", "alpha must lie in (0,1)"));
            }
        }
        self.acquisition
            .validate()
            .map_err(|e| Error::config("acquisition", e.to_string()))?;
        self.strategy.validate(self.lambda(), d)?;
        if self.execution.seeds.is_empty() {
            return Err(Error::config("execution.seeds", "at least one seed required"));
        }
        if self.execution.jobs == 0 {
            return Err(Error::config("execution.jobs", "must be >= 1"));
        }
        if self.execution.stagnation == 0 {
            return Err(Error::config("execution.stagnation", "must be >= 1"));
        }
        Ok(())
    }

    /// Same experiment with every default written out.
    pub fn canonical(&self) -> Self {
        let mut c = self.clone();
        if self.objective.kind == ObjectiveName::Ellipsoid {
            c.objective.condition = Some(self.objective.condition.unwrap_or(1e6));
        }
        c.objective.budget = Some(self.budget());
        c.objective.hw_batch_size = Some(self.objective.hw_batch_size.unwrap_or(1));
        c.cma.lambda = Some(self.lambda());
        c.cma.sigma0 = Some(self.sigma0());
        c.cma.mean0 = Some(self.mean0());
        c.gp.n_train = Some(self.gp.training_window(self.lambda()));
        c.strategy = self.strategy.canonical(self.lambda());
        c
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
