//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the report is always printed; the
//! process exits non-zero if any criterion fails.

use std::cell::Cell;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use gpcma::acquisition::{ei, quantile_criterion, AcquisitionSpec};
use gpcma::benchmark::{run_experiment, run_with, write_csv, write_jsonl, RunTrace};
use gpcma::cma::{sample_population, CmaState, MahalanobisMetric};
use gpcma::config::{ExperimentConfig, ObjectiveName};
use gpcma::control::{
    compute_n_hw, resample_restricted_counted, select_with_clusters, Event, StrategyConfig, StrategyRegistry,
};
use gpcma::gp::{BarF, GpModel, Kernel, KernelKind, MeanPrior, Metric};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Dense linear algebra on plain vectors, independent of the library.
mod oracle {
    pub type Mat = Vec<Vec<f64>>;

    /// Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(a: &Mat) -> Option<Mat> {
        let n = a.len();
        let mut m: Mat = a
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = row.clone();
                r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                r
            })
            .collect();
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
            if m[pivot][col].abs() < 1e-300 {
                return None;
            }
            m.swap(col, pivot);
            let p = m[col][col];
            for v in m[col].iter_mut() {
                *v /= p;
            }
            for row in 0..n {
                if row != col {
                    let factor = m[row][col];
                    if factor != 0.0 {
                        for j in 0..2 * n {
                            m[row][j] -= factor * m[col][j];
                        }
                    }
                }
            }
        }
        Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
    }

    pub fn mat_vec(a: &Mat, x: &[f64]) -> Vec<f64> {
        a.iter().map(|row| dot(row, x)).collect()
    }

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn quad(a: &Mat, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &mat_vec(a, y))
    }
}

use oracle::Mat;

fn to_mat(m: &DMatrix<f64>) -> Mat {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal(rng));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

#[derive(Clone)]
enum Trend {
    Constant(f64),
    Linear(f64, f64),
}

impl Trend {
    fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Trend::Constant(c) => c,
            Trend::Linear(a, b) => a + b * x.iter().sum::<f64>(),
        }
    }

    fn bar_f(&self) -> BarF {
        match *self {
            Trend::Constant(c) => BarF::Constant(c),
            Trend::Linear(a, b) => BarF::from_fn(move |x: &DVector<f64>| a + b * x.sum()),
        }
    }
}

#[derive(Clone)]
enum OraclePrior {
    Zero,
    Deterministic(Trend),
    Bayesian(Trend, f64),
}

/// Kernel written out from its defining formulas.
struct OracleKernel {
    kind: KernelKind,
    /// Inverse of the Mahalanobis covariance, if any.
    metric_inv: Option<Mat>,
}

impl OracleKernel {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let r2 = match &self.metric_inv {
            Some(m) => oracle::quad(m, &diff, &diff),
            None => oracle::dot(&diff, &diff),
        };
        match &self.kind {
            KernelKind::SquaredExponential { length_scale } => (-r2 / (2.0 * length_scale * length_scale)).exp(),
            KernelKind::GammaExponential { length_scale, gamma } => (-(r2.sqrt() / length_scale).powf(*gamma)).exp(),
            KernelKind::DotProduct { sigma, degree } => (sigma * sigma + oracle::dot(x, y)).powi(*degree as i32),
            KernelKind::GeneralizedDotProduct { sigma, degree, matrix } => {
                (sigma * sigma + oracle::quad(&to_mat(matrix), x, y)).powi(*degree as i32)
            }
        }
    }
}

/// Posterior of the latent value at `xs` by conditioning the joint normal of
/// `(y₁,…,yₙ, f(xs))` directly. The Bayesian prior is `f = w·f̄ + g` with
/// `w ~ N(1, σ_w²)` independent of `g ~ GP(0, K)`.
fn oracle_predict(
    xs: &[Vec<f64>],
    ys: &[f64],
    kernel: &OracleKernel,
    noise: f64,
    prior: &OraclePrior,
    x_star: &[f64],
) -> (f64, f64) {
    let n = xs.len();
    let (trend, sw2) = match prior {
        OraclePrior::Zero => (None, 0.0),
        OraclePrior::Deterministic(t) => (Some(t), 0.0),
        OraclePrior::Bayesian(t, sw) => (Some(t), sw * sw),
    };
    let h: Vec<f64> = xs.iter().map(|x| trend.map_or(0.0, |t| t.eval(x))).collect();
    let h_star = trend.map_or(0.0, |t| t.eval(x_star));
    let cov_yy: Mat = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    kernel.eval(&xs[i], &xs[j]) + sw2 * h[i] * h[j] + if i == j { noise * noise } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let cov_sy: Vec<f64> = (0..n).map(|i| kernel.eval(x_star, &xs[i]) + sw2 * h_star * h[i]).collect();
    let cov_ss = kernel.eval(x_star, x_star) + sw2 * h_star * h_star;
    let inv = oracle::inverse(&cov_yy).expect("oracle covariance invertible");
    let resid: Vec<f64> = ys.iter().zip(&h).map(|(y, hi)| y - hi).collect();
    let mu = h_star + oracle::quad(&inv, &cov_sy, &resid);
    let var = cov_ss - oracle::quad(&inv, &cov_sy, &cov_sy);
    (mu, var)
}

fn to_prior(p: &OraclePrior) -> MeanPrior {
    match p {
        OraclePrior::Zero => MeanPrior::Zero,
        OraclePrior::Deterministic(t) => MeanPrior::Deterministic(t.bar_f()),
        OraclePrior::Bayesian(t, sw) => MeanPrior::BayesianMultiplicative {
            bar_f: t.bar_f(),
            sigma_w: *sw,
        },
    }
}

fn random_trend(rng: &mut ChaCha8Rng) -> Trend {
    if rng.random_bool(0.5) {
        Trend::Constant(rng.random_range(-2.0..2.0))
    } else {
        Trend::Linear(rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0))
    }
}

struct Instance {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    lib: Kernel,
    oracle: OracleKernel,
    noise: f64,
    tests: Vec<Vec<f64>>,
}

fn random_instance(rng: &mut ChaCha8Rng, kind_index: usize) -> Instance {
    let d = rng.random_range(1..=3usize);
    let n = rng.random_range(1..=8usize);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let ys: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let tests: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.random_range(-2.5..2.5)).collect()).collect();
    let kind = match kind_index % 4 {
        0 => KernelKind::SquaredExponential {
            length_scale: rng.random_range(0.3..2.0),
        },
        1 => KernelKind::GammaExponential {
            length_scale: rng.random_range(0.3..2.0),
            gamma: rng.random_range(0.5..=2.0),
        },
        2 => KernelKind::DotProduct {
            sigma: rng.random_range(0.5..1.5),
            degree: rng.random_range(1..=3),
        },
        _ => KernelKind::GeneralizedDotProduct {
            sigma: rng.random_range(0.5..1.5),
            degree: rng.random_range(1..=3),
            matrix: random_spd(d, rng),
        },
    };
    let distance_based = kind_index % 4 < 2;
    let (metric, metric_inv) = if distance_based && rng.random_bool(0.5) {
        let cov = random_spd(d, rng);
        let inv = oracle::inverse(&to_mat(&cov)).expect("spd");
        (Metric::Mahalanobis(MahalanobisMetric::new(&cov).unwrap()), Some(inv))
    } else {
        (Metric::Euclidean, None)
    };
    // dot-product kernels have finite rank, so they need observation noise
    let noise = if distance_based && rng.random_bool(0.5) {
        0.0
    } else {
        rng.random_range(0.1..0.5)
    };
    Instance {
        xs,
        ys,
        lib: Kernel::new(kind.clone(), metric).unwrap(),
        oracle: OracleKernel { kind, metric_inv },
        noise,
        tests,
    }
}

fn fit(inst: &Instance, prior: MeanPrior) -> gpcma::Result<GpModel> {
    GpModel::fit(
        inst.xs.iter().map(|x| DVector::from_vec(x.clone())).collect(),
        inst.ys.clone(),
        inst.lib.clone(),
        inst.noise,
        prior,
    )
}

fn c1_gp_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut accepted, mut skipped) = (0, 0);
    let (mut max_mu, mut max_var) = (0.0f64, 0.0f64);
    while accepted < 200 {
        let inst = random_instance(&mut rng, accepted);
        let prior = match accepted % 3 {
            0 => OraclePrior::Zero,
            1 => OraclePrior::Deterministic(random_trend(&mut rng)),
            _ => OraclePrior::Bayesian(random_trend(&mut rng), rng.random_range(0.1..2.0)),
        };
        let model = match fit(&inst, to_prior(&prior)) {
            Ok(m) if m.jitter() == 0.0 => m,
            // jittered fits condition a different matrix than the oracle
            _ => {
                skipped += 1;
                continue;
            }
        };
        for t in &inst.tests {
            let (mu, var) = model.predict(&DVector::from_vec(t.clone())).map_err(|e| e.to_string())?;
            let (omu, ovar) = oracle_predict(&inst.xs, &inst.ys, &inst.oracle, inst.noise, &prior, t);
            max_mu = max_mu.max((mu - omu).abs());
            // the library clamps round-off negatives to zero
            max_var = max_var.max((var - ovar.max(0.0)).abs());
        }
        accepted += 1;
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "200 instances ({skipped} jittered skipped), max |Δμ| {max_mu:.2e}, max |Δvar| {max_var:.2e}, {elapsed:.2?}"
    );
    ensure(max_mu <= 1e-8 && max_var <= 1e-8 && elapsed < Duration::from_secs(10), || detail.clone())?;
    Ok(detail)
}

fn c2_bayesian_limit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 100 {
        let inst = random_instance(&mut rng, done);
        let trend = random_trend(&mut rng);
        let det = fit(&inst, MeanPrior::Deterministic(trend.bar_f()));
        let bay = fit(
            &inst,
            MeanPrior::BayesianMultiplicative {
                bar_f: trend.bar_f(),
                sigma_w: 1e-6,
            },
        );
        let (Ok(det), Ok(bay)) = (det, bay) else {
            continue;
        };
        for t in &inst.tests {
            let x = DVector::from_vec(t.clone());
            let a = det.predict(&x).map_err(|e| e.to_string())?;
            let b = bay.predict(&x).map_err(|e| e.to_string())?;
            worst = worst.max((a.0 - b.0).abs()).max((a.1 - b.1).abs());
        }
        done += 1;
    }
    let detail = format!("100 instances, max difference {worst:.2e}");
    ensure(worst <= 1e-6, || detail.clone())?;
    Ok(detail)
}

fn c3_ei_monte_carlo() -> Outcome {
    const SAMPLES: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_z = 0.0f64;
    for _ in 0..50 {
        let mu = rng.random_range(-3.0..3.0);
        let var: f64 = rng.random_range(0.01..4.0);
        let f_min = mu + rng.random_range(-2.0..2.0) * var.sqrt();
        let sd = var.sqrt();
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..SAMPLES {
            let imp = (f_min - (mu + sd * normal(&mut rng))).max(0.0);
            sum += imp;
            sum_sq += imp * imp;
        }
        let n = SAMPLES as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean).max(0.0) / (n - 1.0)).sqrt();
        let closed = ei(mu, var, f_min);
        let z = (closed - mean).abs() / se;
        worst_z = worst_z.max(z);
        ensure(z <= 3.0, || {
            format!("μ={mu:.3} var={var:.3} f_min={f_min:.3}: closed {closed:.6} vs MC {mean:.6} ± {se:.2e}")
        })?;
    }
    Ok(format!("50 instances, worst deviation {worst_z:.2} standard errors"))
}

fn c4_quantile_median() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let spec = AcquisitionSpec::Quantile { alpha: 0.5 };
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mu = rng.random_range(-1e3..1e3);
        let var = rng.random_range(0.0..1e3);
        let a = quantile_criterion(mu, var, 0.5).map_err(|e| e.to_string())?;
        let b = spec.evaluate(mu, var, 0.0).map_err(|e| e.to_string())?;
        worst = worst.max((a - mu).abs()).max((b - mu).abs());
    }
    let detail = format!("1000 (μ, var) pairs, max |Q_0.5 − μ| {worst:.1e}");
    ensure(worst <= 1e-12, || detail.clone())?;
    Ok(detail)
}

/// Steps 2 and 3 applied literally on a fixed clustering.
fn brute_force_selection(values: &[f64], labels: &[usize], k: usize, count: usize, maximize: bool) -> Vec<usize> {
    // the ordering: better value first, earlier index on ties
    let better = |i: usize, j: usize| {
        let (a, b) = (values[i], values[j]);
        if maximize {
            a > b || (a == b && i < j)
        } else {
            a < b || (a == b && i < j)
        }
    };
    let max_of = |set: &[usize]| -> usize {
        *set.iter()
            .find(|&&i| set.iter().all(|&j| j == i || better(i, j)))
            .expect("nonempty set has a maximum")
    };
    let mut chosen = Vec::new();
    for j in 0..k {
        let s_j: Vec<usize> = (0..values.len()).filter(|&i| labels[i] == j).collect();
        chosen.push(max_of(&s_j));
    }
    for _ in k..count {
        let rest: Vec<usize> = (0..values.len()).filter(|i| !chosen.contains(i)).collect();
        chosen.push(max_of(&rest));
    }
    chosen
}

fn c5_cluster_selection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for case in 0..100 {
        let count = rng.random_range(1..=5usize);
        let n = rng.random_range(count + 1..=12usize);
        let k = rng.random_range(1..=count);
        // every cluster nonempty: the first k shuffled slots get one label each
        let mut slots: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            slots.swap(i, rng.random_range(0..=i));
        }
        let mut labels = vec![0; n];
        for (pos, &i) in slots.iter().enumerate() {
            labels[i] = if pos < k { pos } else { rng.random_range(0..k) };
        }
        // coarse values so that ties occur
        let values: Vec<f64> = (0..n).map(|_| (rng.random_range(0..8) as f64) * 0.25).collect();
        let spec = if case % 2 == 0 {
            AcquisitionSpec::Ei
        } else {
            AcquisitionSpec::Quantile { alpha: 0.3 }
        };
        let mut got = select_with_clusters(&values, &labels, k, &spec, count).map_err(|e| e.to_string())?;
        let mut want = brute_force_selection(&values, &labels, k, count, spec.maximizes());
        got.sort_unstable();
        want.sort_unstable();
        ensure(got == want, || {
            format!("case {case}: values {values:?} labels {labels:?} k={k} λ={count}: got {got:?}, want {want:?}")
        })?;
    }
    Ok("100 instances, exact set equality".into())
}

fn c6_sampling_statistics() -> Outcome {
    const N: usize = 100_000;
    let mean = dvector![1.0, -2.0];
    let sigma = 0.7;
    let cov = dmatrix![2.0, 1.0; 1.0, 2.0];
    let state = CmaState::with_covariance(mean.clone(), sigma, cov.clone(), 8).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let xs = sample_population(&state, N, &mut rng).map_err(|e| e.to_string())?;
    let n = N as f64;
    let target = &cov * (sigma * sigma);
    let xbar = xs.iter().fold(DVector::zeros(2), |a, x| a + x) / n;
    let mut worst = 0.0f64;
    for i in 0..2 {
        let se = (target[(i, i)] / n).sqrt();
        worst = worst.max((xbar[i] - mean[i]).abs() / se);
    }
    let s = xs.iter().fold(DMatrix::zeros(2, 2), |a, x| {
        let c = x - &xbar;
        a + &c * c.transpose()
    }) / (n - 1.0);
    for i in 0..2 {
        for j in 0..2 {
            let se = ((target[(i, i)] * target[(j, j)] + target[(i, j)].powi(2)) / n).sqrt();
            worst = worst.max((s[(i, j)] - target[(i, j)]).abs() / se);
        }
    }
    // coordinates in the eigenbasis
    let b = state.basis();
    let ys: Vec<DVector<f64>> = xs.iter().map(|x| b.transpose() * (x - &mean)).collect();
    let ybar = ys.iter().fold(DVector::zeros(2), |a, y| a + y) / n;
    let (mut s00, mut s11, mut s01) = (0.0, 0.0, 0.0);
    for y in &ys {
        let (a, c) = (y[0] - ybar[0], y[1] - ybar[1]);
        s00 += a * a;
        s11 += c * c;
        s01 += a * c;
    }
    let rho = s01 / (s00 * s11).sqrt();
    let detail = format!("worst moment deviation {worst:.2} standard errors, eigen-coordinate ρ = {rho:.4}");
    ensure(worst <= 3.0 && rho.abs() < 0.02, || detail.clone())?;
    Ok(detail)
}

fn c7_restricted_resampling() -> Outcome {
    let mut notes = Vec::new();
    for (seed, sigma) in [(707u64, 1.0), (708, 0.5)] {
        let d = 3;
        let ell = d - 1;
        let mean = dvector![0.5, -1.0, 2.0];
        let state = CmaState::new(mean.clone(), sigma, 8).map_err(|e| e.to_string())?;
        let eps = 1.96 * sigma;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (points, drawn) =
            resample_restricted_counted(&state, 95_000, ell, eps, 100, &mut rng).map_err(|e| e.to_string())?;
        let rate = points.len() as f64 / drawn as f64;
        let b = state.basis();
        for x in &points {
            let c = x - &mean;
            let along: f64 = (0..ell).map(|i| b.column(i).dot(&c).powi(2)).sum();
            let residual = (c.norm_squared() - along).max(0.0).sqrt();
            ensure(residual <= eps + 1e-12, || format!("residual {residual} exceeds ε = {eps}"))?;
        }
        ensure((rate - 0.95).abs() <= 0.01 && drawn >= 99_000, || {
            format!("σ = {sigma}: acceptance {rate:.4} over {drawn} draws")
        })?;
        notes.push(format!("σ={sigma}: {rate:.4} over {drawn} draws"));
    }
    Ok(format!("acceptance {}, all residuals within ε", notes.join(", ")))
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Check per-generation counters of an individual-based (or plain) strategy.
fn audit_individual(trace: &RunTrace, config: &ExperimentConfig) -> Result<(), String> {
    let lam = config.lambda() as u64;
    let b = config.hw_batch_size() as u64;
    for w in trace.records.windows(2) {
        let (prev, r) = (&w[0], &w[1]);
        let de = r.true_evals - prev.true_evals;
        let db = r.hw_batches - prev.hw_batches;
        let bootstrap = r.events.iter().any(|e| matches!(e, Event::Bootstrap));
        let want_b = match config.strategy {
            StrategyConfig::TwoStage { lambda_pre, .. } if !bootstrap => {
                ceil_div(lambda_pre as u64, b) + ceil_div(lam - lambda_pre as u64, b)
            }
            _ => ceil_div(lam, b),
        };
        ensure(de == lam && db == want_b, || {
            format!(
                "{} generation {}: {de} evaluations / {db} batches, expected {lam} / {want_b}",
                trace.run_id, r.generation
            )
        })?;
    }
    Ok(())
}

/// Check window accounting of the generation-based strategy. Returns (accepted, refits).
fn audit_generation(trace: &RunTrace, config: &ExperimentConfig) -> Result<(usize, usize), String> {
    let StrategyConfig::GenerationBased { probes, .. } = config.strategy else {
        return Err("not generation-based".into());
    };
    let lam = config.lambda() as u64;
    let b = config.hw_batch_size() as u64;
    let mut p = probes;
    let mut in_window = 0;
    let (mut accepted, mut refits) = (0, 0);
    for w in trace.records.windows(2) {
        let (prev, r) = (&w[0], &w[1]);
        let de = r.true_evals - prev.true_evals;
        let db = r.hw_batches - prev.hw_batches;
        let has = |f: fn(&Event) -> bool| r.events.iter().any(f);
        let n_hw = compute_n_hw(p, b as usize).max(1);
        let window = (n_hw * p) as u64;
        let (want_e, want_b) = if has(|e| matches!(e, Event::Bootstrap)) {
            (lam, ceil_div(lam, b))
        } else {
            in_window += 1;
            let closes = has(|e| matches!(e, Event::WindowAccepted { .. }));
            let refit = has(|e| matches!(e, Event::Refit { .. }));
            if closes || refit {
                ensure(in_window == n_hw, || {
                    format!("window closed after {in_window} generations, n_hw = {n_hw}")
                })?;
                in_window = 0;
            }
            if closes {
                accepted += 1;
                (window, ceil_div(window, b))
            } else if refit {
                refits += 1;
                (window + lam, ceil_div(window, b) + ceil_div(lam, b))
            } else {
                (0, 0)
            }
        };
        ensure(de == want_e && db == want_b, || {
            format!(
                "{} generation {}: {de} evaluations / {db} batches, expected {want_e} / {want_b}",
                trace.run_id, r.generation
            )
        })?;
        for e in &r.events {
            if let Event::ProbesChanged { to, .. } = e {
                p = *to;
            }
        }
    }
    Ok((accepted, refits))
}

fn run_mock(config: &ExperimentConfig, seed: u64, f: impl Fn(&DVector<f64>) -> f64) -> Result<RunTrace, String> {
    let count = Cell::new(0u64);
    let mut mock = (config.dim(), |x: &DVector<f64>| {
        count.set(count.get() + 1);
        f(x)
    });
    let trace = run_with(config, seed, &mut mock, &StrategyRegistry::builtin()).map_err(|e| e.to_string())?;
    ensure(count.get() == trace.final_evals(), || {
        format!("mock counted {}, trace says {}", count.get(), trace.final_evals())
    })?;
    Ok(trace)
}

fn c8_budget_accounting() -> Outcome {
    ensure(compute_n_hw(3, 10) == 3 && compute_n_hw(5, 10) == 2, || "compute_n_hw examples".into())?;
    let lam = 8;
    let base = |strategy: StrategyConfig| {
        let mut c = ExperimentConfig::new(ObjectiveName::Sphere, 3);
        c.cma.lambda = Some(lam);
        c.objective.budget = Some(240);
        c.objective.hw_batch_size = Some(3);
        c.execution.stagnation = 10_000;
        c.strategy = strategy;
        c
    };
    let sphere = |x: &DVector<f64>| x.norm_squared();
    let individual = [
        StrategyConfig::None,
        StrategyConfig::Basic { lambda_prime: 32, k: 4 },
        StrategyConfig::LowDimProjection {
            lambda_prime: 32,
            k: 4,
            ell: 2,
        },
        StrategyConfig::RestrictedProjection {
            lambda_prime: 32,
            k: 4,
            ell: 2,
            epsilon: 2.0,
            max_resamples: 100,
        },
        StrategyConfig::TwoStage {
            lambda_prime: 32,
            k: 4,
            lambda_pre: 3,
        },
    ];
    for s in individual {
        let config = base(s);
        config.validate().map_err(|e| e.to_string())?;
        for seed in 0..3 {
            let trace = run_mock(&config, seed, sphere)?;
            audit_individual(&trace, &config)?;
        }
    }
    let generation = |threshold: f64| {
        base(StrategyConfig::GenerationBased {
            lambda_prime: 32,
            k: 2,
            probes: 3,
            lambda_hw: 10,
            agreement_threshold: threshold,
            probes_min: None,
            probes_max: None,
            include_current_training: false,
        })
    };
    let (mut ok_windows, mut refit_windows) = (0, 0);
    let never_fails = generation(-1.0);
    for seed in 0..3 {
        let trace = run_mock(&never_fails, seed, sphere)?;
        let (accepted, refits) = audit_generation(&trace, &never_fails)?;
        ensure(refits == 0 && accepted > 0, || format!("τ₀ = −1: {accepted} accepted, {refits} refits"))?;
        ok_windows += accepted;
    }
    let always_fails = generation(1.0);
    for seed in 0..3 {
        let trace = run_mock(&always_fails, seed, |_| 1.0)?;
        let (accepted, refits) = audit_generation(&trace, &always_fails)?;
        ensure(accepted == 0 && refits > 0, || format!("τ₀ = 1: {accepted} accepted, {refits} refits"))?;
        refit_windows += refits;
    }
    Ok(format!(
        "5 individual strategies × 3 seeds exact; generation-based: {ok_windows} accepted windows (τ₀=−1), \
         {refit_windows} refit windows (τ₀=1)"
    ))
}

fn c9_plain_cma() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    for d in [2usize, 5, 10] {
        let mut config = ExperimentConfig::new(ObjectiveName::Sphere, d);
        config.objective.budget = Some(10_000 * d as u64);
        config.objective.target = Some(1e-8);
        let mut best = Vec::new();
        let mut evals = Vec::new();
        for seed in 0..20 {
            let t = run_experiment(&config, seed).map_err(|e| e.to_string())?;
            best.push(t.final_best());
            evals.push(t.final_evals() as f64);
        }
        let med = median(&best);
        ensure(med <= 1e-8, || format!("d = {d}: median best {med:.3e}"))?;
        notes.push(format!("d={d} median {med:.1e} at {:.0} evals", median(&evals)));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:.2?}"))?;
    Ok(format!("{}, {elapsed:.2?}", notes.join("; ")))
}

fn c10_surrogate_benefit() -> Outcome {
    let mut plain = ExperimentConfig::new(ObjectiveName::Sphere, 5);
    plain.objective.budget = Some(400);
    let lam = plain.lambda();
    let mut basic = plain.clone();
    basic.acquisition = AcquisitionSpec::Ei;
    basic.strategy = StrategyConfig::Basic {
        lambda_prime: 8 * lam,
        k: lam / 2,
    };
    let mut a = Vec::new();
    let mut b = Vec::new();
    for seed in 0..20 {
        a.push(run_experiment(&plain, seed).map_err(|e| e.to_string())?.final_best());
        b.push(run_experiment(&basic, seed).map_err(|e| e.to_string())?.final_best());
    }
    let (ma, mb) = (median(&a), median(&b));
    let detail = format!("λ = {lam}: basic median {mb:.3e} vs plain {ma:.3e}");
    ensure(mb <= ma, || detail.clone())?;
    Ok(detail)
}

fn c11_determinism() -> Outcome {
    let strategies = [
        StrategyConfig::None,
        StrategyConfig::Basic { lambda_prime: 28, k: 3 },
        StrategyConfig::LowDimProjection {
            lambda_prime: 28,
            k: 3,
            ell: 2,
        },
        StrategyConfig::RestrictedProjection {
            lambda_prime: 28,
            k: 3,
            ell: 2,
            epsilon: 1.5,
            max_resamples: 100,
        },
        StrategyConfig::TwoStage {
            lambda_prime: 28,
            k: 3,
            lambda_pre: 2,
        },
        StrategyConfig::GenerationBased {
            lambda_prime: 28,
            k: 2,
            probes: 3,
            lambda_hw: 10,
            agreement_threshold: 0.5,
            probes_min: None,
            probes_max: None,
            include_current_training: false,
        },
    ];
    let mut rows = 0;
    for (i, s) in strategies.into_iter().enumerate() {
        let mut config = ExperimentConfig::new(ObjectiveName::Rosenbrock, 3);
        config.objective.budget = Some(200);
        config.strategy = s;
        let render = || -> Result<(Vec<u8>, Vec<u8>), String> {
            let traces: Vec<RunTrace> = [i as u64, 42]
                .iter()
                .map(|&seed| run_experiment(&config, seed))
                .collect::<gpcma::Result<_>>()
                .map_err(|e| e.to_string())?;
            let (mut csv, mut jsonl) = (Vec::new(), Vec::new());
            write_csv(&traces, &mut csv).map_err(|e| e.to_string())?;
            write_jsonl(&traces, &mut jsonl).map_err(|e| e.to_string())?;
            Ok((csv, jsonl))
        };
        let first = render()?;
        let second = render()?;
        ensure(first == second, || format!("{} traces differ between runs", config.strategy.name()))?;
        rows += first.0.iter().filter(|&&c| c == b'\n').count() - 1;
    }
    Ok(format!("6 strategies × 2 seeds, {rows} CSV rows byte-identical"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("GP oracle equivalence", c1_gp_oracle),
        ("Bayesian-mean limit", c2_bayesian_limit),
        ("EI Monte-Carlo", c3_ei_monte_carlo),
        ("quantile at α = 0.5", c4_quantile_median),
        ("cluster selection oracle", c5_cluster_selection),
        ("sampling statistics", c6_sampling_statistics),
        ("restricted resampling", c7_restricted_resampling),
        ("budget accounting", c8_budget_accounting),
        ("plain CMA-ES sanity", c9_plain_cma),
        ("surrogate benefit", c10_surrogate_benefit),
        ("determinism", c11_determinism),
    ];
    let results: Vec<(Outcome, Duration)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|&(_, f)| {
                s.spawn(move || {
                    let start = Instant::now();
                    (f(), start.elapsed())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| (Err("panicked".into()), Duration::ZERO)))
            .collect()
    });
    let mut failed = 0;
    for (i, ((name, _), (outcome, took))) in criteria.iter().zip(results).enumerate() {
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail} ({took:.1?})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {detail} ({took:.1?})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
