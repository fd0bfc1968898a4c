//! Generation-based control: the distribution evolves on surrogate fitness,
//! while a few probe points per generation are truly evaluated in hardware
//! batches to check that the surrogate still ranks points correctly.

use nalgebra::DVector;

use crate::cma::CmaState;
use crate::control::budget::{compute_n_hw, ranking_agreement};
use crate::control::selection::select_by_clustering;
use crate::control::surrogate::{InputSpace, Surrogate, SurrogateConfig, TrainingSet};
use crate::control::{default_probes_max, Event, EvolutionControl, RunContext, StrategyConfig};
use crate::error::{Error, Result};

/// One generation evolved on the surrogate, awaiting probe evaluation.
#[derive(Debug, Clone)]
struct PendingGeneration {
    /// Distribution that sampled this generation.
    state_before: CmaState,
    candidates: Vec<DVector<f64>>,
    criterion: Vec<f64>,
    probes: Vec<usize>,
    stamp: u64,
}

/// Bookkeeping for the current evaluation window.
#[derive(Debug, Clone, Default)]
pub struct GenerationLedger {
    /// Step stamp of the last generation whose population was truly evaluated.
    pub g_last: u64,
    pending: Vec<PendingGeneration>,
    /// Hardware batches consumed by this strategy so far.
    pub hw_batches: u64,
}

impl GenerationLedger {
    pub fn pending_generations(&self) -> usize {
        self.pending.len()
    }
}

#[derive(Debug, Clone)]
pub struct GenerationBased {
    lambda_prime: usize,
    k: usize,
    probes: usize,
    probes_min: usize,
    probes_max: usize,
    lambda_hw: usize,
    threshold: f64,
    include_current: bool,
    ledger: GenerationLedger,
    current: Option<(Surrogate, TrainingSet)>,
    /// Every probe ever evaluated, stamped with its generation step.
    probe_history: TrainingSet,
    bootstrap: TrainingSet,
    tick: u64,
}

pub(crate) fn build(
    config: &StrategyConfig,
    state: &CmaState,
    _surrogate: &SurrogateConfig,
) -> Result<Box<dyn EvolutionControl>> {
    match *config {
        StrategyConfig::GenerationBased {
            lambda_prime,
            k,
            probes,
            lambda_hw,
            agreement_threshold,
            probes_min,
            probes_max,
            include_current_training,
        } => Ok(Box::new(GenerationBased {
            lambda_prime,
            k,
            probes,
            probes_min: probes_min.unwrap_or(probes),
            probes_max: probes_max.unwrap_or(default_probes_max(probes, state.lambda(), lambda_prime)),
            lambda_hw,
            threshold: agreement_threshold,
            include_current: include_current_training,
            ledger: GenerationLedger::default(),
            current: None,
            probe_history: TrainingSet::default(),
            bootstrap: TrainingSet::default(),
            tick: 0,
        })),
        _ => Err(Error::Internal(format!("{} is not generation-based", config.name()))),
    }
}

impl GenerationBased {
    pub fn probes(&self) -> usize {
        self.probes
    }

    /// Generations accumulated per hardware batch, at least 1.
    pub fn n_hw(&self) -> usize {
        compute_n_hw(self.probes, self.lambda_hw).max(1)
    }

    pub fn ledger(&self) -> &GenerationLedger {
        &self.ledger
    }

    pub fn current_training(&self) -> Option<&TrainingSet> {
        self.current.as_ref().map(|(_, t)| t)
    }

    fn fit(ctx: &RunContext<'_>, training: &TrainingSet) -> Result<Surrogate> {
        Surrogate::fit(&ctx.surrogate, training, &ctx.state, InputSpace::Full)
    }

    fn surrogate_generation(&mut self, ctx: &mut RunContext<'_>) -> Result<()> {
        let (model, _) = self.current.as_ref().ok_or_else(|| Error::Internal("no current GP".into()))?;
        let state_before = ctx.state.clone();
        let candidates = ctx.state.sample(self.lambda_prime, &mut ctx.rng)?;
        let scored = model.predict(&candidates).and_then(|posterior| {
            let values = ctx.acquisition.evaluate_all(&posterior, ctx.f_min())?;
            Ok((posterior, values))
        });
        let (means, criterion) = match scored {
            Ok((posterior, values)) => (posterior.iter().map(|p| p.0).collect::<Vec<_>>(), values),
            Err(e @ Error::InvalidParameter(_)) => return Err(e),
            Err(e) => {
                ctx.record(Event::Fallback { reason: e.to_string() });
                (vec![0.0; candidates.len()], vec![0.0; candidates.len()])
            }
        };
        let k = self.k.min(self.probes);
        let probes = select_by_clustering(&candidates, &criterion, &ctx.acquisition, self.probes, k, &mut ctx.rng)?;

        // The population of this generation is its first λ candidates, ranked by the GP mean.
        let lambda = ctx.state.lambda();
        ctx.advance(candidates[..lambda].to_vec(), means[..lambda].to_vec())?;

        self.tick += 1;
        self.ledger.pending.push(PendingGeneration {
            state_before,
            candidates,
            criterion,
            probes,
            stamp: self.tick,
        });
        Ok(())
    }

    fn close_window(&mut self, ctx: &mut RunContext<'_>) -> Result<()> {
        let pending = std::mem::take(&mut self.ledger.pending);
        if pending.iter().any(|g| g.probes.len() != self.probes) {
            return Err(Error::Internal("probe count differs from λ'''".into()));
        }
        let all: Vec<DVector<f64>> = pending
            .iter()
            .flat_map(|g| g.probes.iter().map(|&i| g.candidates[i].clone()))
            .collect();
        let before = ctx.evals.hw_batches();
        let fitness = ctx.evals.submit(&all)?;
        self.ledger.hw_batches += ctx.evals.hw_batches() - before;

        let mut failed = None;
        let mut offset = 0;
        for (j, g) in pending.iter().enumerate() {
            let f = &fitness[offset..offset + g.probes.len()];
            offset += g.probes.len();
            for (&i, &fi) in g.probes.iter().zip(f) {
                self.probe_history.push(g.candidates[i].clone(), fi, g.stamp);
            }
            let values: Vec<f64> = g.probes.iter().map(|&i| g.criterion[i]).collect();
            let tau = ranking_agreement(&values, f, &ctx.acquisition)?;
            log::debug!("window generation {}: agreement {tau:.3}", g.stamp);
            if failed.is_none() && tau < self.threshold {
                failed = Some((j, f.to_vec()));
            }
        }

        let Some((j, probe_fitness)) = failed else {
            self.ledger.g_last += pending.len() as u64;
            ctx.record(Event::WindowAccepted {
                generations: pending.len(),
                probes: self.probes,
            });
            return Ok(());
        };
        let g = &pending[j];
        self.refit(ctx, g, probe_fitness)
    }

    /// Evaluate λ more points of the first failing generation, restart the
    /// distribution there and train a new GP.
    fn refit(&mut self, ctx: &mut RunContext<'_>, g: &PendingGeneration, probe_fitness: Vec<f64>) -> Result<()> {
        let lambda = g.state_before.lambda();
        let remaining: Vec<usize> = (0..g.candidates.len()).filter(|i| !g.probes.contains(i)).collect();
        let extra: Vec<usize> = if remaining.len() > lambda {
            let pts: Vec<DVector<f64>> = remaining.iter().map(|&i| g.candidates[i].clone()).collect();
            let vals: Vec<f64> = remaining.iter().map(|&i| g.criterion[i]).collect();
            select_by_clustering(&pts, &vals, &ctx.acquisition, lambda, self.k.min(lambda), &mut ctx.rng)?
                .into_iter()
                .map(|i| remaining[i])
                .collect()
        } else {
            remaining
        };
        let extra_points: Vec<DVector<f64>> = extra.iter().map(|&i| g.candidates[i].clone()).collect();
        let before = ctx.evals.hw_batches();
        let extra_fitness = ctx.evals.submit(&extra_points)?;
        self.ledger.hw_batches += ctx.evals.hw_batches() - before;

        // T_new: probes up to the failing generation plus the additional points
        let mut training = TrainingSet::default();
        for i in 0..self.probe_history.len() {
            if self.probe_history.generations[i] <= g.stamp {
                training.push(
                    self.probe_history.points[i].clone(),
                    self.probe_history.fitness[i],
                    self.probe_history.generations[i],
                );
            }
        }
        for (x, &f) in extra_points.iter().zip(&extra_fitness) {
            training.push(x.clone(), f, g.stamp);
        }
        if self.include_current {
            if let Some((_, t)) = &self.current {
                training.extend(t);
            }
        }

        let mut points: Vec<DVector<f64>> = g.probes.iter().map(|&i| g.candidates[i].clone()).collect();
        points.extend(extra_points);
        let mut fitness = probe_fitness;
        fitness.extend(extra_fitness);
        ctx.state = g.state_before.clone();
        ctx.advance(points, fitness)?;
        self.ledger.g_last = g.stamp;

        ctx.record(Event::Refit {
            failed_at: g.stamp as usize,
            added: extra.len(),
            training: training.len(),
        });
        match Self::fit(ctx, &training) {
            Ok(model) => self.current = Some((model, training)),
            // keep GP_current
            Err(e) => ctx.record(Event::Fallback { reason: e.to_string() }),
        }

        let next = (self.probes * 2).min(self.probes_max).max(self.probes_min);
        if next != self.probes {
            ctx.record(Event::ProbesChanged {
                from: self.probes,
                to: next,
            });
            self.probes = next;
        }
        Ok(())
    }
}

impl EvolutionControl for GenerationBased {
    fn name(&self) -> &'static str {
        "generation_based"
    }

    fn step(&mut self, ctx: &mut RunContext<'_>) -> Result<()> {
        if self.current.is_none() {
            ctx.record(Event::Bootstrap);
            let generation = self.tick;
            let pop = ctx.plain_generation()?;
            self.tick += 1;
            for (x, f) in pop.points.into_iter().zip(pop.fitness) {
                self.bootstrap.push(x, f, generation);
            }
            self.ledger.g_last = self.tick;
            if self.bootstrap.len() >= ctx.state.dim() + 2 {
                match Self::fit(ctx, &self.bootstrap) {
                    Ok(model) => self.current = Some((model, self.bootstrap.clone())),
                    Err(e) => ctx.record(Event::Fallback { reason: e.to_string() }),
                }
            }
            return Ok(());
        }
        self.surrogate_generation(ctx)?;
        if self.ledger.pending.len() >= self.n_hw() {
            self.close_window(ctx)?;
        }
        Ok(())
    }
}
