//! Gaussian-process regression with configurable kernels and mean priors.
//!
//! Three mean priors are supported:
//!
//! * `Zero` – plain zero-mean GP.
//! * `Deterministic(f̄)` – `f = f̄ + g` with `g` a zero-mean GP.
//! * `BayesianMultiplicative(f̄, σ_w)` – `f = w·f̄ + g` with `w ~ N(1, σ_w²)`
//!   integrated out analytically.
//!
//! Distance-based kernels can measure distance either in the Euclidean sense
//! or through a Mahalanobis metric, typically the live `σ²C` of the search
//! distribution.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::cma::{EvaluatedPopulation, MahalanobisMetric};
use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;
const VARIANCE_CLAMP: f64 = 1e-10;

/// Distance used by the squared-exponential and γ-exponential kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Euclidean,
    Mahalanobis(MahalanobisMetric),
}

impl Metric {
    fn distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        match self {
            Metric::Euclidean => (x - y).norm(),
            Metric::Mahalanobis(m) => m.distance(x, y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// `exp(−r²/(2ℓ²))`
    SquaredExponential { length_scale: f64 },
    /// `exp(−(r/ℓ)^γ)`, `0 < γ ≤ 2`
    GammaExponential { length_scale: f64, gamma: f64 },
    /// `(σ² + xᵀx')^p`
    DotProduct { sigma: f64, degree: u32 },
    /// `(σ² + xᵀΣx')^p` with `Σ` positive definite
    GeneralizedDotProduct {
        sigma: f64,
        degree: u32,
        matrix: DMatrix<f64>,
    },
}

/// A validated covariance function.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    kind: KernelKind,
    metric: Metric,
}

impl Kernel {
    pub fn new(kind: KernelKind, metric: Metric) -> Result<Self> {
        match &kind {
            KernelKind::SquaredExponential { length_scale } => check_length_scale(*length_scale)?,
            KernelKind::GammaExponential { length_scale, gamma } => {
                check_length_scale(*length_scale)?;
                if !(*gamma > 0.0 && *gamma <= 2.0) {
                    return Err(Error::param(format!("gamma must lie in (0, 2], got {gamma}")));
                }
                if *gamma < 2.0 && matches!(metric, Metric::Mahalanobis(_)) {
                    log::warn!(
                        "gamma-exponential kernel with gamma = {gamma} under a Mahalanobis metric \
                         is not guaranteed positive definite; relying on jitter"
                    );
                }
            }
            KernelKind::DotProduct { sigma, degree } => check_dot(*sigma, *degree)?,
            KernelKind::GeneralizedDotProduct {
                sigma,
                degree,
                matrix,
            } => {
                check_dot(*sigma, *degree)?;
                if matrix.nrows() != matrix.ncols() {
                    return Err(Error::param("dot-product matrix must be square"));
                }
                if Cholesky::new(matrix.clone()).is_none() || (matrix - matrix.transpose()).amax() > 1e-12 {
                    return Err(Error::param("dot-product matrix must be symmetric positive definite"));
                }
            }
        }
        Ok(Self { kind, metric })
    }

    pub fn squared_exponential(length_scale: f64) -> Result<Self> {
        Self::new(KernelKind::SquaredExponential { length_scale }, Metric::Euclidean)
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    /// Same kernel with a different distance.
    pub fn with_metric(&self, metric: Metric) -> Result<Self> {
        Self::new(self.kind.clone(), metric)
    }

    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        match &self.kind {
            KernelKind::SquaredExponential { length_scale } => {
                let r = self.metric.distance(x, y);
                (-(r * r) / (2.0 * length_scale * length_scale)).exp()
            }
            KernelKind::GammaExponential { length_scale, gamma } => {
                let r = self.metric.distance(x, y);
                (-(r / length_scale).powf(*gamma)).exp()
            }
            KernelKind::DotProduct { sigma, degree } => (sigma * sigma + x.dot(y)).powi(*degree as i32),
            KernelKind::GeneralizedDotProduct {
                sigma,
                degree,
                matrix,
            } => {
                // both orders summed so the value is exactly symmetric
                let s = 0.5 * (x.dot(&(matrix * y)) + y.dot(&(matrix * x)));
                (sigma * sigma + s).powi(*degree as i32)
            }
        }
    }
}

fn check_length_scale(l: f64) -> Result<()> {
    if l > 0.0 && l.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("length scale must be positive, got {l}")))
    }
}

fn check_dot(sigma: f64, degree: u32) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("dot-product sigma must be >= 0, got {sigma}")));
    }
    if degree == 0 {
        return Err(Error::param("dot-product degree must be a positive integer"));
    }
    Ok(())
}

/// Evaluate `kernel` at `(x, y)`.
pub fn kernel_eval(kernel: &Kernel, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    kernel.eval(x, y)
}

/// The deterministic trend `f̄` used by the non-zero mean priors.
#[derive(Clone)]
pub enum BarF {
    Constant(f64),
    Function(Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>),
}

impl BarF {
    pub fn from_fn(f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        BarF::Function(Arc::new(f))
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match self {
            BarF::Constant(c) => *c,
            BarF::Function(f) => f(x),
        }
    }
}

impl fmt::Debug for BarF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BarF::Constant(c) => write!(f, "Constant({c})"),
            BarF::Function(_) => write!(f, "Function(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum MeanPrior {
    Zero,
    Deterministic(BarF),
    BayesianMultiplicative { bar_f: BarF, sigma_w: f64 },
}

impl MeanPrior {
    fn validate(&self) -> Result<()> {
        if let MeanPrior::BayesianMultiplicative { sigma_w, .. } = self {
            if !(*sigma_w > 0.0 && sigma_w.is_finite()) {
                return Err(Error::param(format!("sigma_w must be positive, got {sigma_w}")));
            }
        }
        Ok(())
    }
}

/// How fitness values of past generations are aggregated into a constant `f̄`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    /// Plain mean of all fitness values.
    #[default]
    Mean,
    /// Mean of per-generation means, generation `i` of `G` weighted by `i`.
    WeightedMean,
}

/// Constant `f̄` aggregating the fitness values in `history`.
pub fn bar_f_from_aggregate(history: &[EvaluatedPopulation], mode: Aggregate) -> Result<BarF> {
    if history.is_empty() || history.iter().all(|p| p.fitness.is_empty()) {
        return Err(Error::EmptyHistory);
    }
    let value = match mode {
        Aggregate::Mean => {
            let (sum, n) = history
                .iter()
                .flat_map(|p| p.fitness.iter())
                .fold((0.0, 0usize), |(s, n), f| (s + f, n + 1));
            sum / n as f64
        }
        Aggregate::WeightedMean => {
            let mut num = 0.0;
            let mut den = 0.0;
            for (i, pop) in history.iter().enumerate().filter(|(_, p)| !p.fitness.is_empty()) {
                let w = (i + 1) as f64;
                let mean = pop.fitness.iter().sum::<f64>() / pop.fitness.len() as f64;
                num += w * mean;
                den += w;
            }
            num / den
        }
    };
    Ok(BarF::Constant(value))
}

/// A fitted Gaussian process. Immutable after [`GpModel::fit`].
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<DVector<f64>>,
    targets: DVector<f64>,
    kernel: Kernel,
    sigma_noise: f64,
    mean_prior: MeanPrior,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    /// `A⁻¹Y` for Zero/Bayesian, `A⁻¹(Y − f̄(X))` for Deterministic.
    alpha: DVector<f64>,
    bayes: Option<BayesTerms>,
}

#[derive(Debug, Clone)]
struct BayesTerms {
    trend: DVector<f64>,
    a_inv_trend: DVector<f64>,
    w_hat: f64,
    denom: f64,
    sigma_w: f64,
}

impl GpModel {
    /// Condition the GP on `(inputs, targets)`, factorizing `K(X,X) + σ²_noise·I`.
    pub fn fit(
        inputs: Vec<DVector<f64>>,
        targets: Vec<f64>,
        kernel: Kernel,
        sigma_noise: f64,
        mean_prior: MeanPrior,
    ) -> Result<Self> {
        let n = inputs.len();
        if n == 0 {
            return Err(Error::InsufficientPoints { needed: 1, got: 0 });
        }
        if targets.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: targets.len(),
            });
        }
        let d = inputs[0].len();
        if let Some(x) = inputs.iter().find(|x| x.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        if inputs.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("training inputs"));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training targets"));
        }
        if !(sigma_noise >= 0.0 && sigma_noise.is_finite()) {
            return Err(Error::param(format!("sigma_noise must be >= 0, got {sigma_noise}")));
        }
        mean_prior.validate()?;
        if sigma_noise == 0.0 {
            for i in 0..n {
                for j in 0..i {
                    if inputs[i] == inputs[j] {
                        return Err(Error::DuplicateInput(j, i));
                    }
                }
            }
        }

        let mut gram = DMatrix::from_fn(n, n, |i, j| kernel.eval(&inputs[i], &inputs[j]));
        let noise_var = sigma_noise * sigma_noise;
        for i in 0..n {
            gram[(i, i)] += noise_var;
        }
        let (chol, jitter) = factorize(gram)?;

        let targets = DVector::from_vec(targets);
        let (alpha, bayes) = match &mean_prior {
            MeanPrior::Zero => (chol.solve(&targets), None),
            MeanPrior::Deterministic(bar_f) => {
                let trend = DVector::from_iterator(n, inputs.iter().map(|x| bar_f.eval(x)));
                (chol.solve(&(&targets - trend)), None)
            }
            MeanPrior::BayesianMultiplicative { bar_f, sigma_w } => {
                let trend = DVector::from_iterator(n, inputs.iter().map(|x| bar_f.eval(x)));
                let alpha = chol.solve(&targets);
                let a_inv_trend = chol.solve(&trend);
                let s2 = sigma_w * sigma_w;
                let denom = 1.0 + s2 * trend.dot(&a_inv_trend);
                let w_hat = (1.0 + s2 * trend.dot(&alpha)) / denom;
                (
                    alpha,
                    Some(BayesTerms {
                        trend,
                        a_inv_trend,
                        w_hat,
                        denom,
                        sigma_w: *sigma_w,
                    }),
                )
            }
        };
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::KernelNotPd);
        }
        Ok(Self {
            inputs,
            targets,
            kernel,
            sigma_noise,
            mean_prior,
            chol,
            jitter,
            alpha,
            bayes,
        })
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn sigma_noise(&self) -> f64 {
        self.sigma_noise
    }

    pub fn mean_prior(&self) -> &MeanPrior {
        &self.mean_prior
    }

    /// Diagonal jitter that was needed for the factorization (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean and variance of the latent `f(x)`.
    pub fn predict(&self, x: &DVector<f64>) -> Result<(f64, f64)> {
        let d = self.inputs[0].len();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let k = DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|xi| self.kernel.eval(x, xi)));
        let prior_var = self.kernel.eval(x, x);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .ok_or(Error::KernelNotPd)?;
        let base_var = prior_var - v.norm_squared();
        let kernel_mean = k.dot(&self.alpha);

        let (mu, var) = match (&self.mean_prior, &self.bayes) {
            (MeanPrior::Zero, _) => (kernel_mean, base_var),
            (MeanPrior::Deterministic(bar_f), _) => (bar_f.eval(x) + kernel_mean, base_var),
            (MeanPrior::BayesianMultiplicative { bar_f, .. }, Some(b)) => {
                let residual = bar_f.eval(x) - k.dot(&b.a_inv_trend);
                let s2 = b.sigma_w * b.sigma_w;
                (
                    kernel_mean + residual * b.w_hat,
                    base_var + s2 * residual * residual / b.denom,
                )
            }
            (MeanPrior::BayesianMultiplicative { .. }, None) => {
                return Err(Error::Internal("bayesian terms missing".into()));
            }
        };
        let tol = VARIANCE_CLAMP * prior_var.abs().max(1.0);
        if var < -tol || !var.is_finite() {
            return Err(Error::NegativeVariance(var));
        }
        Ok((mu, var.max(0.0)))
    }

    pub fn predict_batch(&self, points: &[DVector<f64>]) -> Result<Vec<(f64, f64)>> {
        points.iter().map(|x| self.predict(x)).collect()
    }

    /// `f̄(xᵢ)` at the training inputs, when the prior has a trend.
    pub fn trend_at_inputs(&self) -> Option<&DVector<f64>> {
        self.bayes.as_ref().map(|b| &b.trend)
    }
}

fn factorize(gram: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(gram.clone()) {
        return Ok((c, 0.0));
    }
    let n = gram.nrows();
    let mean_diag = gram.diagonal().mean().abs().max(f64::MIN_POSITIVE);
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * mean_diag;
        let mut m = gram.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            log::debug!("kernel matrix needed jitter {jitter:e}");
            return Ok((c, jitter));
        }
        rel *= 10.0;
    }
    Err(Error::KernelNotPd)
}
