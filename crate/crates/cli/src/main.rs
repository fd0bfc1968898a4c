use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use rayon::prelude::*;

use gpcma::benchmark::{compare, read_csv, run_experiment, summarize, write_csv, write_jsonl, RunTrace};
use gpcma::config::{parse_config, ExperimentConfig};

const CONFIG_HELP: &str = "\
CONFIG FILE (JSON; unknown keys are rejected)
  objective.kind            sphere | ellipsoid | rosenbrock | rastrigin   (required)
  objective.dim             dimension d                                   (required)
  objective.condition       ellipsoid condition number          [1e6]
  objective.shift           location of the optimum             [origin]
  objective.target          stop once best fitness <= target    [none]
  objective.budget          true-evaluation budget              [1000·d]
  objective.hw_batch_size   points per hardware batch           [1]
  cma.lambda                population size λ                   [4 + ⌊3 ln d⌋]
  cma.sigma0                initial step size                   [1.0]
  cma.mean0                 initial mean                        [(3, …, 3)]
  cma.update                standard | paper_simple             [standard]
  gp.kernel                 {\"kind\": \"squared_exponential\", \"length_scale\": ..} | gamma_exponential
                            | dot_product | generalized_dot_product
                                                                [squared_exponential, length_scale 2]
  gp.metric                 euclidean | mahalanobis             [mahalanobis]
  gp.sigma_noise            observation noise                   [0]
  gp.mean_prior             zero | deterministic | bayesian_multiplicative
                                                                [deterministic, mean aggregate]
  gp.n_train                training window of the archive      [5·λ]
  gp.scale_targets          scale fitness by its std before fit [true]
  acquisition               {\"kind\": \"ei\"} | poi | {\"kind\": \"quantile\", \"alpha\": ..}
                            | {\"kind\": \"poi_threshold\", \"threshold\": ..}      [ei]
  strategy                  {\"name\": \"none\"} | basic | low_dim_projection
                            | restricted_projection | two_stage | generation_based   [none]
  execution.seeds           replicate seeds                     [[0]]
  execution.jobs            parallel replicates                 [1]
  execution.stagnation      stop after this many generations without improvement   [50]

Set GPCMA_LOG (error, warn, info, debug, trace) to control log verbosity.";

#[derive(Parser)]
#[command(name = "gpcma", version, about = "CMA-ES with Gaussian-process evolution control", after_long_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write trace.csv, trace.jsonl and config.json.
    #[command(after_long_help = CONFIG_HELP)]
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run only this seed instead of execution.seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Parallel replicates; overrides execution.jobs.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Aggregate the traces of a run directory into a plot-ready CSV.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired comparison of two run directories, matched by seed.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GPCMA_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed, jobs } => {
            if !config.is_file() {
                let mut cmd = Cli::command();
                cmd.build();
                let run = cmd.find_subcommand_mut("run").expect("run subcommand");
                run.error(ErrorKind::ValueValidation, format!("config file {} not found", config.display()))
                    .exit();
            }
            run(&config, &out, seed, jobs)
        }
        Command::Summarize { input, out } => summarize_dir(&input, &out),
        Command::Compare { a, b } => compare_dirs(&a, &b),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(config_path: &Path, out: &Path, seed: Option<u64>, jobs: Option<usize>) -> Result<()> {
    let text = fs::read_to_string(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let mut config: ExperimentConfig = parse_config(&text).with_context(|| format!("in {}", config_path.display()))?;
    if let Some(s) = seed {
        config.execution.seeds = vec![s];
    }
    if let Some(j) = jobs {
        if j == 0 {
            bail!("--jobs must be >= 1");
        }
        config.execution.jobs = j;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.execution.jobs)
        .build()
        .context("building thread pool")?;
    log::info!(
        "running {} on {:?} d={} for seeds {:?}",
        config.strategy.name(),
        config.objective.kind,
        config.dim(),
        config.execution.seeds
    );
    // par_iter keeps seed order in the collected vector
    let traces: Vec<RunTrace> = pool.install(|| {
        config
            .execution
            .seeds
            .par_iter()
            .map(|&s| run_experiment(&config, s).with_context(|| format!("seed {s}")))
            .collect::<Result<_>>()
    })?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let create = |name: &str| -> Result<BufWriter<fs::File>> {
        let path = out.join(name);
        Ok(BufWriter::new(
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        ))
    };
    write_csv(&traces, create("trace.csv")?)?;
    let mut jsonl = create("trace.jsonl")?;
    write_jsonl(&traces, &mut jsonl)?;
    jsonl.flush()?;
    let mut cfg = create("config.json")?;
    writeln!(cfg, "{}", config.canonical().to_json())?;
    cfg.flush()?;

    for t in &traces {
        println!(
            "{}: best {} after {} evaluations, {} batches, stop {}",
            t.run_id,
            t.final_best(),
            t.final_evals(),
            t.last().hw_batches,
            t.stop.as_str()
        );
    }
    Ok(())
}

fn load_traces(dir: &Path) -> Result<Vec<RunTrace>> {
    let path = dir.join("trace.csv");
    let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let traces = read_csv(file).with_context(|| format!("reading {}", path.display()))?;
    if traces.is_empty() {
        bail!("{} holds no traces", path.display());
    }
    Ok(traces)
}

fn summarize_dir(input: &Path, out: &Path) -> Result<()> {
    let traces = load_traces(input)?;
    let s = summarize(&traces)?;
    let mut w = BufWriter::new(fs::File::create(out).with_context(|| format!("creating {}", out.display()))?);
    writeln!(w, "true_evals,q1,median,q3")?;
    for p in &s.curve {
        writeln!(w, "{},{},{},{}", p.true_evals, p.best.q1, p.best.median, p.best.q3)?;
    }
    w.flush()?;
    println!("runs,{}", s.runs);
    for (name, q) in [
        ("final_best", s.final_best),
        ("true_evals", s.true_evals),
        ("hw_batches", s.hw_batches),
    ] {
        println!("{name},{},{},{}", q.q1, q.median, q.q3);
    }
    Ok(())
}

fn compare_dirs(a: &Path, b: &Path) -> Result<()> {
    let c = compare(&load_traces(a)?, &load_traces(b)?)?;
    println!("seed,best_a,best_b,evals_a,evals_b");
    for r in &c.rows {
        println!("{},{},{},{},{}", r.seed, r.best_a, r.best_b, r.evals_a, r.evals_b);
    }
    println!("median_difference,{}", c.median_difference);
    println!("wins_a,{}", c.a_wins);
    println!("wins_b,{}", c.b_wins);
    Ok(())
}
