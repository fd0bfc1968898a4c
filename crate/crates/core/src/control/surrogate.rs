//! Building GP surrogates from true-evaluated points under the current
//! search distribution.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cma::{CmaState, EvaluatedPopulation, MahalanobisMetric};
use crate::control::geometry::{project_to_principal_subspace, projected_sampling_cov};
use crate::error::{Error, Result};
use crate::gp::{bar_f_from_aggregate, Aggregate, BarF, GpModel, Kernel, KernelKind, MeanPrior, Metric};

/// Kernel family and hyperparameters as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    SquaredExponential { length_scale: f64 },
    GammaExponential { length_scale: f64, gamma: f64 },
    DotProduct { sigma: f64, degree: u32 },
    GeneralizedDotProduct { sigma: f64, degree: u32, matrix: Vec<Vec<f64>> },
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig::SquaredExponential { length_scale: 2.0 }
    }
}

impl KernelConfig {
    pub fn kind(&self) -> Result<KernelKind> {
        Ok(match self {
            KernelConfig::SquaredExponential { length_scale } => KernelKind::SquaredExponential {
                length_scale: *length_scale,
            },
            KernelConfig::GammaExponential { length_scale, gamma } => KernelKind::GammaExponential {
                length_scale: *length_scale,
                gamma: *gamma,
            },
            KernelConfig::DotProduct { sigma, degree } => KernelKind::DotProduct {
                sigma: *sigma,
                degree: *degree,
            },
            KernelConfig::GeneralizedDotProduct { sigma, degree, matrix } => {
                let d = matrix.len();
                if matrix.iter().any(|row| row.len() != d) {
                    return Err(Error::param("dot-product matrix must be square"));
                }
                KernelKind::GeneralizedDotProduct {
                    sigma: *sigma,
                    degree: *degree,
                    matrix: DMatrix::from_fn(d, d, |i, j| matrix[i][j]),
                }
            }
        })
    }

    fn is_distance_based(&self) -> bool {
        matches!(
            self,
            KernelConfig::SquaredExponential { .. } | KernelConfig::GammaExponential { .. }
        )
    }
}

/// Distance used by the distance-based kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricConfig {
    Euclidean,
    /// Mahalanobis distance under the live sampling covariance `σ²C`.
    #[default]
    Mahalanobis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanPriorConfig {
    Zero,
    Deterministic {
        #[serde(default)]
        aggregate: Aggregate,
    },
    BayesianMultiplicative {
        #[serde(default)]
        aggregate: Aggregate,
        sigma_w: f64,
    },
}

impl Default for MeanPriorConfig {
    fn default() -> Self {
        MeanPriorConfig::Deterministic {
            aggregate: Aggregate::Mean,
        }
    }
}

fn default_true() -> bool {
    true
}

/// Everything needed to turn training data into a GP surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default)]
    pub sigma_noise: f64,
    #[serde(default)]
    pub mean_prior: MeanPriorConfig,
    /// Sliding training window; `None` means `5·λ`.
    #[serde(default)]
    pub n_train: Option<usize>,
    /// Divide targets by their standard deviation before fitting, which
    /// amounts to a kernel amplitude equal to the target variance.
    #[serde(default = "default_true")]
    pub scale_targets: bool,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            kernel: KernelConfig::default(),
            metric: MetricConfig::default(),
            sigma_noise: 0.0,
            mean_prior: MeanPriorConfig::default(),
            n_train: None,
            scale_targets: true,
        }
    }
}

impl SurrogateConfig {
    pub fn training_window(&self, lambda: usize) -> usize {
        self.n_train.unwrap_or(5 * lambda)
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kernel.kind()?;
        Kernel::new(kind, Metric::Euclidean)?;
        if !(self.sigma_noise >= 0.0 && self.sigma_noise.is_finite()) {
            return Err(Error::param("sigma_noise must be >= 0"));
        }
        if let MeanPriorConfig::BayesianMultiplicative { sigma_w, .. } = self.mean_prior {
            if !(sigma_w > 0.0 && sigma_w.is_finite()) {
                return Err(Error::param("sigma_w must be > 0"));
            }
        }
        if self.n_train == Some(0) {
            return Err(Error::param("n_train must be >= 1"));
        }
        Ok(())
    }
}

/// True-evaluated points with the generation that produced them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub points: Vec<DVector<f64>>,
    pub fitness: Vec<f64>,
    pub generations: Vec<u64>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: DVector<f64>, fitness: f64, generation: u64) {
        self.points.push(point);
        self.fitness.push(fitness);
        self.generations.push(generation);
    }

    pub fn extend(&mut self, other: &TrainingSet) {
        for i in 0..other.len() {
            self.push(other.points[i].clone(), other.fitness[i], other.generations[i]);
        }
    }

    /// Fitness grouped by generation stamp, oldest first.
    pub fn history(&self) -> Vec<EvaluatedPopulation> {
        let mut stamps: Vec<u64> = self.generations.clone();
        stamps.sort_unstable();
        stamps.dedup();
        stamps
            .into_iter()
            .map(|g| {
                let idx: Vec<usize> = (0..self.len()).filter(|&i| self.generations[i] == g).collect();
                EvaluatedPopulation {
                    points: idx.iter().map(|&i| self.points[i].clone()).collect(),
                    fitness: idx.iter().map(|&i| self.fitness[i]).collect(),
                    generation: g,
                }
            })
            .collect()
    }
}

/// Ring buffer of the most recent true evaluations.
#[derive(Debug, Clone)]
pub struct SurrogateArchive {
    capacity: usize,
    entries: VecDeque<(DVector<f64>, f64, u64)>,
}

impl SurrogateArchive {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, point: DVector<f64>, fitness: f64, generation: u64) -> Result<()> {
        if !fitness.is_finite() || point.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("archive entry"));
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((point, fitness, generation));
        Ok(())
    }

    pub fn extend(&mut self, points: &[DVector<f64>], fitness: &[f64], generation: u64) -> Result<()> {
        for (p, &f) in points.iter().zip(fitness) {
            self.push(p.clone(), f, generation)?;
        }
        Ok(())
    }

    pub fn training_set(&self) -> TrainingSet {
        let mut t = TrainingSet::default();
        for (p, f, g) in &self.entries {
            t.push(p.clone(), *f, *g);
        }
        t
    }
}

/// Input space the GP works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSpace {
    Full,
    /// Leading `ell` principal components of the current distribution.
    Principal(usize),
}

/// A fitted GP plus the transforms that map raw points and targets into it.
#[derive(Debug, Clone)]
pub struct Surrogate {
    model: GpModel,
    space: InputSpace,
    state: CmaState,
    scale: f64,
}

impl Surrogate {
    pub fn fit(config: &SurrogateConfig, training: &TrainingSet, state: &CmaState, space: InputSpace) -> Result<Self> {
        if training.is_empty() {
            return Err(Error::InsufficientPoints { needed: 1, got: 0 });
        }
        let inputs = match space {
            InputSpace::Full => training.points.clone(),
            InputSpace::Principal(ell) => project_to_principal_subspace(&training.points, state, ell)?,
        };
        let metric = if config.kernel.is_distance_based() && config.metric == MetricConfig::Mahalanobis {
            let cov = match space {
                InputSpace::Full => state.sampling_cov(),
                InputSpace::Principal(ell) => projected_sampling_cov(state, ell)?,
            };
            Metric::Mahalanobis(MahalanobisMetric::regularized(&cov)?)
        } else {
            Metric::Euclidean
        };
        let kernel = Kernel::new(config.kernel.kind()?, metric)?;

        let scale = if config.scale_targets {
            let n = training.fitness.len() as f64;
            let mean = training.fitness.iter().sum::<f64>() / n;
            let var = training.fitness.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 && var.is_finite() {
                var.sqrt()
            } else {
                1.0
            }
        } else {
            1.0
        };
        let targets: Vec<f64> = training.fitness.iter().map(|f| f / scale).collect();
        let history = training.history();
        let scaled_bar_f = |aggregate| -> Result<BarF> {
            let c = match bar_f_from_aggregate(&history, aggregate)? {
                BarF::Constant(c) => c,
                BarF::Function(_) => return Err(Error::Internal("aggregate must be constant".into())),
            };
            Ok(BarF::Constant(c / scale))
        };
        let mean_prior = match config.mean_prior {
            MeanPriorConfig::Zero => MeanPrior::Zero,
            MeanPriorConfig::Deterministic { aggregate } => MeanPrior::Deterministic(scaled_bar_f(aggregate)?),
            MeanPriorConfig::BayesianMultiplicative { aggregate, sigma_w } => MeanPrior::BayesianMultiplicative {
                bar_f: scaled_bar_f(aggregate)?,
                sigma_w,
            },
        };
        let model = GpModel::fit(inputs, targets, kernel, config.sigma_noise, mean_prior)?;
        Ok(Self {
            model,
            space,
            state: state.clone(),
            scale,
        })
    }

    pub fn model(&self) -> &GpModel {
        &self.model
    }

    pub fn space(&self) -> InputSpace {
        self.space
    }

    /// Posterior `(μ, var)` in fitness units for raw search-space points.
    pub fn predict(&self, points: &[DVector<f64>]) -> Result<Vec<(f64, f64)>> {
        let mapped;
        let inputs = match self.space {
            InputSpace::Full => points,
            InputSpace::Principal(ell) => {
                mapped = project_to_principal_subspace(points, &self.state, ell)?;
                &mapped[..]
            }
        };
        let s = self.scale;
        Ok(self
            .model
            .predict_batch(inputs)?
            .into_iter()
            .map(|(mu, var)| (mu * s, var * s * s))
            .collect())
    }
}
