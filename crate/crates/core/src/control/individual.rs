//! Individual-based control: every generation, λ of λ' sampled candidates
//! are chosen by the surrogate criterion and truly evaluated.

use nalgebra::DVector;

use crate::cma::CmaState;
use crate::control::geometry::resample_restricted;
use crate::control::selection::select_by_clustering;
use crate::control::surrogate::{InputSpace, Surrogate, SurrogateArchive, SurrogateConfig};
use crate::control::{Event, EvolutionControl, RunContext, StrategyConfig};
use crate::error::{Error, Result};

/// How the λ' candidates of a generation are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CandidateSource {
    Plain,
    /// Resample until the residual to the leading `ell`-dimensional principal
    /// subspace is below `epsilon_sigma·σ`.
    Restricted {
        ell: usize,
        epsilon_sigma: f64,
        max_resamples: usize,
    },
}

/// Shared implementation of the basic, projected, restricted-projection and
/// two-stage strategies.
#[derive(Debug, Clone)]
pub struct IndividualControl {
    name: &'static str,
    lambda_prime: usize,
    k: usize,
    /// Points evaluated before selection (two-stage sampling), 0 otherwise.
    lambda_pre: usize,
    source: CandidateSource,
    space: InputSpace,
    archive: SurrogateArchive,
    last_model: Option<Surrogate>,
    last_stage_one: Vec<DVector<f64>>,
}

pub(crate) fn build(
    config: &StrategyConfig,
    state: &CmaState,
    surrogate: &SurrogateConfig,
) -> Result<Box<dyn EvolutionControl>> {
    let window = surrogate.training_window(state.lambda());
    let control = match *config {
        StrategyConfig::Basic { lambda_prime, k } => {
            IndividualControl::new("basic", lambda_prime, k, 0, CandidateSource::Plain, InputSpace::Full, window)
        }
        StrategyConfig::LowDimProjection { lambda_prime, k, ell } => IndividualControl::new(
            "low_dim_projection",
            lambda_prime,
            k,
            0,
            CandidateSource::Plain,
            InputSpace::Principal(ell),
            window,
        ),
        StrategyConfig::RestrictedProjection {
            lambda_prime,
            k,
            ell,
            epsilon,
            max_resamples,
        } => IndividualControl::new(
            "restricted_projection",
            lambda_prime,
            k,
            0,
            CandidateSource::Restricted {
                ell,
                epsilon_sigma: epsilon,
                max_resamples,
            },
            InputSpace::Principal(ell),
            window,
        ),
        StrategyConfig::TwoStage {
            lambda_prime,
            k,
            lambda_pre,
        } => IndividualControl::new(
            "two_stage",
            lambda_prime,
            k,
            lambda_pre,
            CandidateSource::Plain,
            InputSpace::Full,
            window,
        ),
        _ => return Err(Error::Internal(format!("{} is not individual-based", config.name()))),
    };
    Ok(Box::new(control))
}

impl IndividualControl {
    pub fn new(
        name: &'static str,
        lambda_prime: usize,
        k: usize,
        lambda_pre: usize,
        source: CandidateSource,
        space: InputSpace,
        training_window: usize,
    ) -> Self {
        Self {
            name,
            lambda_prime,
            k,
            lambda_pre,
            source,
            space,
            // stage-one points must always reach the GP
            archive: SurrogateArchive::new(training_window.max(lambda_pre)),
            last_model: None,
            last_stage_one: Vec::new(),
        }
    }

    pub fn archive(&self) -> &SurrogateArchive {
        &self.archive
    }

    /// Surrogate fitted in the most recent surrogate-assisted generation.
    pub fn last_model(&self) -> Option<&Surrogate> {
        self.last_model.as_ref()
    }

    /// Points truly evaluated in the first stage of the last generation.
    pub fn last_stage_one(&self) -> &[DVector<f64>] {
        &self.last_stage_one
    }

    fn candidates(&self, ctx: &mut RunContext<'_>) -> Result<Vec<DVector<f64>>> {
        match self.source {
            CandidateSource::Plain => ctx.state.sample(self.lambda_prime, &mut ctx.rng),
            CandidateSource::Restricted {
                ell,
                epsilon_sigma,
                max_resamples,
            } => {
                let eps = epsilon_sigma * ctx.state.sigma();
                match resample_restricted(&ctx.state, self.lambda_prime, ell, eps, max_resamples, &mut ctx.rng) {
                    Ok(c) => Ok(c),
                    Err(e @ Error::EpsilonTooTight { .. }) => {
                        ctx.record(Event::Fallback { reason: e.to_string() });
                        ctx.state.sample(self.lambda_prime, &mut ctx.rng)
                    }
                    Err(e) => Err(e),
                }
            }
        }
    }

    fn choose(&mut self, ctx: &mut RunContext<'_>, candidates: &[DVector<f64>], count: usize) -> Result<Vec<usize>> {
        let training = self.archive.training_set();
        let scored = Surrogate::fit(&ctx.surrogate, &training, &ctx.state, self.space).and_then(|model| {
            let posterior = model.predict(candidates)?;
            let values = ctx.acquisition.evaluate_all(&posterior, ctx.f_min())?;
            Ok((model, values))
        });
        match scored {
            Ok((model, values)) => {
                self.last_model = Some(model);
                select_by_clustering(candidates, &values, &ctx.acquisition, count, self.k, &mut ctx.rng)
            }
            Err(e @ Error::InvalidParameter(_)) => Err(e),
            Err(e) => {
                ctx.record(Event::Fallback { reason: e.to_string() });
                let means = self.last_model.as_ref().and_then(|m| m.predict(candidates).ok());
                Ok(match means {
                    Some(posterior) => {
                        let mut order: Vec<usize> = (0..candidates.len()).collect();
                        order.sort_by(|&a, &b| posterior[a].0.total_cmp(&posterior[b].0));
                        order.truncate(count);
                        order
                    }
                    None => (0..count).collect(),
                })
            }
        }
    }
}

impl EvolutionControl for IndividualControl {
    fn name(&self) -> &'static str {
        self.name
    }

    fn step(&mut self, ctx: &mut RunContext<'_>) -> Result<()> {
        let generation = ctx.state.generation();
        if self.archive.len() < ctx.state.dim() + 2 {
            ctx.record(Event::Bootstrap);
            let pop = ctx.plain_generation()?;
            return self.archive.extend(&pop.points, &pop.fitness, generation);
        }
        let lambda = ctx.state.lambda();
        let mut points = Vec::with_capacity(lambda);
        let mut fitness = Vec::with_capacity(lambda);

        self.last_stage_one.clear();
        if self.lambda_pre > 0 {
            let first = ctx.state.sample(self.lambda_pre, &mut ctx.rng)?;
            let f = ctx.evals.submit(&first)?;
            self.archive.extend(&first, &f, generation)?;
            self.last_stage_one = first.clone();
            points.extend(first);
            fitness.extend(f);
        }

        let candidates = self.candidates(ctx)?;
        let chosen = self.choose(ctx, &candidates, lambda - self.lambda_pre)?;
        let selected: Vec<DVector<f64>> = chosen.iter().map(|&i| candidates[i].clone()).collect();
        let f = ctx.evals.submit(&selected)?;
        self.archive.extend(&selected, &f, generation)?;
        points.extend(selected);
        fitness.extend(f);
        ctx.advance(points, fitness)
    }
}
