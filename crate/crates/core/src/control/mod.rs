//! Evolution control: deciding which sampled points receive a true fitness
//! evaluation.
//!
//! Every strategy implements [`EvolutionControl`] and is constructed by name
//! through a [`StrategyRegistry`]. One call to [`EvolutionControl::step`]
//! advances the search distribution by one generation.

mod budget;
mod generation;
mod geometry;
mod individual;
mod selection;
mod surrogate;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionSpec;
use crate::cma::{update_state, CmaState, EvaluatedPopulation, UpdateMode};
use crate::error::{Error, Result};

pub use budget::{compute_n_hw, hw_batches, kendall_tau_b, ranking_agreement};
pub use generation::{GenerationBased, GenerationLedger};
pub use geometry::{project_to_principal_subspace, projected_sampling_cov, resample_restricted, resample_restricted_counted, residual_sq};
pub use individual::{CandidateSource, IndividualControl};
pub use selection::{kmeans, select_by_clustering, select_with_clusters};
pub use surrogate::{
    InputSpace, KernelConfig, MeanPriorConfig, MetricConfig, Surrogate, SurrogateArchive, SurrogateConfig,
    TrainingSet,
};

/// The expensive objective.
pub trait BlackBox {
    fn dim(&self) -> usize;
    fn evaluate(&mut self, x: &DVector<f64>) -> Result<f64>;
}

impl<F: FnMut(&DVector<f64>) -> f64> BlackBox for (usize, F) {
    fn dim(&self) -> usize {
        self.0
    }

    fn evaluate(&mut self, x: &DVector<f64>) -> Result<f64> {
        Ok((self.1)(x))
    }
}

/// True-evaluation accounting under a step-wise hardware cost model.
pub struct Evaluations<'a> {
    black_box: &'a mut dyn BlackBox,
    batch_size: usize,
    true_evals: u64,
    hw_batches: u64,
    best: Option<(f64, DVector<f64>)>,
}

impl<'a> Evaluations<'a> {
    pub fn new(black_box: &'a mut dyn BlackBox, batch_size: usize) -> Self {
        Self {
            black_box,
            batch_size: batch_size.max(1),
            true_evals: 0,
            hw_batches: 0,
            best: None,
        }
    }

    /// Evaluate `points` as one submission to the hardware.
    pub fn submit(&mut self, points: &[DVector<f64>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(points.len());
        for x in points {
            let f = self.black_box.evaluate(x)?;
            if !f.is_finite() {
                return Err(Error::NonFinite("objective value"));
            }
            if self.best.as_ref().is_none_or(|(b, _)| f < *b) {
                self.best = Some((f, x.clone()));
            }
            out.push(f);
        }
        self.true_evals += points.len() as u64;
        self.hw_batches += hw_batches(points.len() as u64, self.batch_size);
        Ok(out)
    }

    pub fn true_evals(&self) -> u64 {
        self.true_evals
    }

    pub fn hw_batches(&self) -> u64 {
        self.hw_batches
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Best true fitness seen in the whole run.
    pub fn f_min(&self) -> Option<f64> {
        self.best.as_ref().map(|(f, _)| *f)
    }

    pub fn best_point(&self) -> Option<&DVector<f64>> {
        self.best.as_ref().map(|(_, x)| x)
    }
}

/// Notable things a strategy did during a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Bootstrap,
    Fallback { reason: String },
    WindowAccepted { generations: usize, probes: usize },
    Refit { failed_at: usize, added: usize, training: usize },
    ProbesChanged { from: usize, to: usize },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Bootstrap => write!(f, "bootstrap"),
            Event::Fallback { reason } => write!(f, "fallback({reason})"),
            Event::WindowAccepted { generations, probes } => write!(f, "window_ok({generations}x{probes})"),
            Event::Refit {
                failed_at,
                added,
                training,
            } => write!(f, "refit(at={failed_at} added={added} n={training})"),
            Event::ProbesChanged { from, to } => write!(f, "probes({from}->{to})"),
        }
    }
}

/// Mutable state of one optimization run, owned by the runner.
pub struct RunContext<'a> {
    pub state: CmaState,
    pub update_mode: UpdateMode,
    pub surrogate: SurrogateConfig,
    pub acquisition: AcquisitionSpec,
    pub evals: Evaluations<'a>,
    pub rng: ChaCha8Rng,
    events: Vec<Event>,
}

impl<'a> RunContext<'a> {
    pub fn new(
        state: CmaState,
        update_mode: UpdateMode,
        surrogate: SurrogateConfig,
        acquisition: AcquisitionSpec,
        evals: Evaluations<'a>,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            state,
            update_mode,
            surrogate,
            acquisition,
            evals,
            rng,
            events: Vec::new(),
        }
    }

    pub fn record(&mut self, event: Event) {
        log::debug!("generation {}: {event}", self.state.generation());
        self.events.push(event);
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    pub fn f_min(&self) -> f64 {
        self.evals.f_min().unwrap_or(f64::INFINITY)
    }

    /// Update the distribution with an evaluated population.
    pub fn advance(&mut self, points: Vec<DVector<f64>>, fitness: Vec<f64>) -> Result<()> {
        let pop = EvaluatedPopulation::new(points, fitness, self.state.generation())?;
        self.state = update_state(&self.state, &pop, self.update_mode)?;
        Ok(())
    }

    /// One plain CMA-ES generation: λ samples, all truly evaluated.
    pub fn plain_generation(&mut self) -> Result<EvaluatedPopulation> {
        let generation = self.state.generation();
        let points = self.state.sample(self.state.lambda(), &mut self.rng)?;
        let fitness = self.evals.submit(&points)?;
        let pop = EvaluatedPopulation::new(points, fitness, generation)?;
        self.state = update_state(&self.state, &pop, self.update_mode)?;
        Ok(pop)
    }
}

/// A rule deciding which points get truly evaluated each generation.
pub trait EvolutionControl: Send {
    fn name(&self) -> &'static str;

    /// Advance the run by one generation.
    fn step(&mut self, ctx: &mut RunContext<'_>) -> Result<()>;
}

/// Plain CMA-ES: every sampled point is truly evaluated.
#[derive(Debug, Default)]
pub struct PlainCma;

impl EvolutionControl for PlainCma {
    fn name(&self) -> &'static str {
        "none"
    }

    fn step(&mut self, ctx: &mut RunContext<'_>) -> Result<()> {
        ctx.plain_generation().map(|_| ())
    }
}

fn default_max_resamples() -> usize {
    100
}

fn default_agreement() -> f64 {
    0.5
}

/// Strategy selection and parameters as written in a config file.
///
/// `lambda_prime` is the number of candidates sampled per generation, `k`
/// the number of clusters used when selecting among them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategyConfig {
    None,
    Basic {
        lambda_prime: usize,
        k: usize,
    },
    LowDimProjection {
        lambda_prime: usize,
        k: usize,
        ell: usize,
    },
    RestrictedProjection {
        lambda_prime: usize,
        k: usize,
        ell: usize,
        /// Residual bound in units of the current step size σ.
        epsilon: f64,
        #[serde(default = "default_max_resamples")]
        max_resamples: usize,
    },
    TwoStage {
        lambda_prime: usize,
        k: usize,
        /// Points sampled and truly evaluated before selection (λ'').
        lambda_pre: usize,
    },
    GenerationBased {
        lambda_prime: usize,
        k: usize,
        /// Initial probe count per generation (λ''').
        probes: usize,
        lambda_hw: usize,
        #[serde(default = "default_agreement")]
        agreement_threshold: f64,
        /// Lower bound for λ'''; defaults to `probes`.
        probes_min: Option<usize>,
        /// Upper bound for λ''' when it doubles after a failed window;
        /// defaults to `min(λ − 1, λ' − λ)`.
        probes_max: Option<usize>,
        #[serde(default)]
        include_current_training: bool,
    },
}

/// Largest λ''' allowed by `λ''' < λ` and `λ''' + λ ≤ λ'`, but never below `probes`.
pub(crate) fn default_probes_max(probes: usize, lambda: usize, lambda_prime: usize) -> usize {
    probes.max(lambda.saturating_sub(1).min(lambda_prime.saturating_sub(lambda)))
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig::None
    }
}

impl StrategyConfig {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyConfig::None => "none",
            StrategyConfig::Basic { .. } => "basic",
            StrategyConfig::LowDimProjection { .. } => "low_dim_projection",
            StrategyConfig::RestrictedProjection { .. } => "restricted_projection",
            StrategyConfig::TwoStage { .. } => "two_stage",
            StrategyConfig::GenerationBased { .. } => "generation_based",
        }
    }

    /// Hardware batch size the strategy imposes, if any.
    pub fn hardware_batch(&self) -> Option<usize> {
        match self {
            StrategyConfig::GenerationBased { lambda_hw, .. } => Some(*lambda_hw),
            _ => None,
        }
    }

    /// Fill optional fields with their documented defaults for population size `lambda`.
    pub fn canonical(&self, lambda: usize) -> Self {
        let mut c = self.clone();
        if let StrategyConfig::GenerationBased {
            lambda_prime,
            probes,
            probes_min,
            probes_max,
            ..
        } = &mut c
        {
            probes_min.get_or_insert(*probes);
            probes_max.get_or_insert(default_probes_max(*probes, lambda, *lambda_prime));
        }
        c
    }

    /// Cross-field conditions for population size `lambda` in dimension `dim`.
    pub fn validate(&self, lambda: usize, dim: usize) -> Result<()> {
        let err = |field: &str, msg: String| Err(Error::config(format!("strategy.{field}"), msg));
        let check_common = |lambda_prime: usize, k: usize, selected: usize| -> Result<()> {
            if lambda_prime <= selected {
                return err(
                    "lambda_prime",
                    format!("λ < card{{x̃₁,…,x̃_λ'}} requires lambda_prime > {selected}, got {lambda_prime}"),
                );
            }
            if k == 0 || k > selected {
                return err("k", format!("k ∈ {{1,…,{selected}}} violated, got {k}"));
            }
            Ok(())
        };
        let check_ell = |ell: usize| -> Result<()> {
            if ell == 0 || ell >= dim {
                return err("ell", format!("projection dimension must satisfy 1 ≤ ℓ < d = {dim}, got {ell}"));
            }
            Ok(())
        };
        match *self {
            StrategyConfig::None => Ok(()),
            StrategyConfig::Basic { lambda_prime, k } => check_common(lambda_prime, k, lambda),
            StrategyConfig::LowDimProjection { lambda_prime, k, ell } => {
                check_common(lambda_prime, k, lambda)?;
                check_ell(ell)
            }
            StrategyConfig::RestrictedProjection {
                lambda_prime,
                k,
                ell,
                epsilon,
                max_resamples,
            } => {
                check_common(lambda_prime, k, lambda)?;
                check_ell(ell)?;
                if !(epsilon > 0.0) {
                    return err("epsilon", format!("ε > 0 required, got {epsilon}"));
                }
                if max_resamples == 0 {
                    return err("max_resamples", "must be >= 1".into());
                }
                Ok(())
            }
            StrategyConfig::TwoStage {
                lambda_prime,
                k,
                lambda_pre,
            } => {
                if lambda_pre >= lambda {
                    return err("lambda_pre", format!("λ'' < λ = {lambda} violated, got {lambda_pre}"));
                }
                let rest = lambda - lambda_pre;
                if lambda_prime <= rest {
                    return err(
                        "lambda_prime",
                        format!("λ − λ'' < card{{x̃₁,…,x̃_λ'}} requires lambda_prime > {rest}, got {lambda_prime}"),
                    );
                }
                if k == 0 || k > rest {
                    return err("k", format!("k ∈ {{1,…,λ − λ''}} = {{1,…,{rest}}} violated, got {k}"));
                }
                Ok(())
            }
            StrategyConfig::GenerationBased {
                lambda_prime,
                k,
                probes,
                lambda_hw,
                agreement_threshold,
                probes_min,
                probes_max,
                ..
            } => {
                if k == 0 || k > lambda {
                    return err("k", format!("k ∈ {{1,…,{lambda}}} violated, got {k}"));
                }
                if lambda_prime <= lambda {
                    return err("lambda_prime", format!("λ < λ' required, got lambda_prime = {lambda_prime}"));
                }
                let lo = probes_min.unwrap_or(probes);
                let hi = probes_max.unwrap_or(default_probes_max(probes, lambda, lambda_prime));
                for (field, p) in [("probes", probes), ("probes_min", lo), ("probes_max", hi)] {
                    if p < 2 || p >= lambda {
                        return err(
                            field,
                            format!("1 ≤ λ''' < λ = {lambda} violated (and ranking agreement needs λ''' ≥ 2), got {p}"),
                        );
                    }
                    if p + lambda > lambda_prime {
                        return err(field, format!("λ''' + λ ≤ λ' = {lambda_prime} violated, got λ''' = {p}"));
                    }
                }
                if !(lo <= probes && probes <= hi) {
                    return err("probes", format!("probes_min ≤ probes ≤ probes_max violated ({lo} ≤ {probes} ≤ {hi})"));
                }
                if lambda_hw == 0 {
                    return err("lambda_hw", "λ_hw ≥ 1 required".into());
                }
                if !(-1.0..=1.0).contains(&agreement_threshold) {
                    return err(
                        "agreement_threshold",
                        format!("τ₀ must lie in [−1, 1], got {agreement_threshold}"),
                    );
                }
                Ok(())
            }
        }
    }
}

/// Builds a strategy from its configuration.
pub type StrategyFactory = fn(&StrategyConfig, &CmaState, &SurrogateConfig) -> Result<Box<dyn EvolutionControl>>;

/// Name → factory lookup for evolution-control strategies.
pub struct StrategyRegistry {
    factories: BTreeMap<&'static str, StrategyFactory>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// Registry holding plain CMA-ES and the five surrogate strategies.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("none", |_, _, _| Ok(Box::new(PlainCma)));
        r.register("basic", individual::build);
        r.register("low_dim_projection", individual::build);
        r.register("restricted_projection", individual::build);
        r.register("two_stage", individual::build);
        r.register("generation_based", generation::build);
        r
    }

    /// Add or replace the factory for `name`.
    pub fn register(&mut self, name: &'static str, factory: StrategyFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn build(
        &self,
        config: &StrategyConfig,
        state: &CmaState,
        surrogate: &SurrogateConfig,
    ) -> Result<Box<dyn EvolutionControl>> {
        let name = config.name();
        let factory = self.factories.get(name).ok_or_else(|| {
            Error::config(
                "strategy.name",
                format!("unknown strategy `{name}`; registered: {}", self.names().join(", ")),
            )
        })?;
        config.validate(state.lambda(), state.dim())?;
        factory(config, state, surrogate)
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
