use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::benchmark::trace::{RunTrace, StopReason, TraceRecord};
use crate::benchmark::Objective;
use crate::cma::CmaState;
use crate::config::ExperimentConfig;
use crate::control::{BlackBox, Evaluations, RunContext, StrategyRegistry};
use crate::error::{Error, Result};

/// Run `config` once with `seed` on its configured test function.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<RunTrace> {
    config.validate()?;
    let mut objective = Objective::new(
        config.objective.objective_kind()?,
        config.dim(),
        config.objective.shift.clone(),
    )?;
    let trace = run_with(config, seed, &mut objective, &StrategyRegistry::builtin())?;
    if objective.count() != trace.final_evals() {
        return Err(Error::Internal(format!(
            "objective counted {} evaluations, trace {}",
            objective.count(),
            trace.final_evals()
        )));
    }
    Ok(trace)
}

/// Run every seed of `config` in order.
pub fn run_all(config: &ExperimentConfig) -> Result<Vec<RunTrace>> {
    config.execution.seeds.iter().map(|&s| run_experiment(config, s)).collect()
}

/// Run `config` against an arbitrary black box using strategies from `registry`.
pub fn run_with(
    config: &ExperimentConfig,
    seed: u64,
    black_box: &mut dyn BlackBox,
    registry: &StrategyRegistry,
) -> Result<RunTrace> {
    if black_box.dim() != config.dim() {
        return Err(Error::DimensionMismatch {
            expected: config.dim(),
            got: black_box.dim(),
        });
    }
    let state = CmaState::new(DVector::from_vec(config.mean0()), config.sigma0(), config.lambda())?;
    let mut strategy = registry.build(&config.strategy, &state, &config.gp)?;
    let budget = config.budget();
    let target = config.objective.target;
    let stagnation = config.execution.stagnation;

    let mut ctx = RunContext::new(
        state,
        config.cma.update,
        config.gp.clone(),
        config.acquisition,
        Evaluations::new(black_box, config.hw_batch_size()),
        ChaCha8Rng::seed_from_u64(seed),
    );
    let mut records = vec![TraceRecord {
        generation: 0,
        true_evals: 0,
        hw_batches: 0,
        best_f: f64::INFINITY,
        sigma: ctx.state.sigma(),
        events: Vec::new(),
    }];
    let mut since_improvement = 0usize;
    let stop = loop {
        let best = ctx.f_min();
        if ctx.evals.true_evals() >= budget {
            break StopReason::Budget;
        }
        if target.is_some_and(|t| best <= t) {
            break StopReason::Target;
        }
        if since_improvement >= stagnation {
            break StopReason::Stagnation;
        }
        strategy.step(&mut ctx)?;
        let now = ctx.f_min();
        if now < best {
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        let events = ctx.take_events();
        records.push(TraceRecord {
            generation: records.len() as u64,
            true_evals: ctx.evals.true_evals(),
            hw_batches: ctx.evals.hw_batches(),
            best_f: now,
            sigma: ctx.state.sigma(),
            events,
        });
    };
    let trace = RunTrace {
        run_id: format!("{}-s{seed}", strategy.name()),
        seed,
        records,
        stop,
        best_x: ctx.evals.best_point().map(|x| x.iter().copied().collect()),
    };
    trace.check_invariants()?;
    Ok(trace)
}
