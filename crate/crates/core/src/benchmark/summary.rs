use serde::Serialize;

use crate::benchmark::trace::RunTrace;
use crate::error::{Error, Result};

/// Lower quartile, median and upper quartile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    if lo == hi || frac == 0.0 || sorted[lo] == sorted[hi] {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientPoints { needed: 1, got: 0 });
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub true_evals: u64,
    pub best: Quartiles,
}

/// Aggregate statistics over replicate runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub runs: usize,
    pub final_best: Quartiles,
    pub true_evals: Quartiles,
    pub hw_batches: Quartiles,
    /// Best-fitness quartiles at every evaluation count reached by any run.
    pub curve: Vec<CurvePoint>,
}

pub fn summarize(traces: &[RunTrace]) -> Result<Summary> {
    if traces.is_empty() {
        return Err(Error::InsufficientPoints { needed: 1, got: 0 });
    }
    let col = |f: &dyn Fn(&RunTrace) -> f64| -> Vec<f64> { traces.iter().map(f).collect() };
    let mut checkpoints: Vec<u64> = traces
        .iter()
        .flat_map(|t| t.records.iter().map(|r| r.true_evals))
        .collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let curve = checkpoints
        .into_iter()
        .map(|e| {
            Ok(CurvePoint {
                true_evals: e,
                best: Quartiles::of(&col(&|t| t.best_at(e)))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Summary {
        runs: traces.len(),
        final_best: Quartiles::of(&col(&|t| t.final_best()))?,
        true_evals: Quartiles::of(&col(&|t| t.final_evals() as f64))?,
        hw_batches: Quartiles::of(&col(&|t| t.last().hw_batches as f64))?,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub seed: u64,
    pub best_a: f64,
    pub best_b: f64,
    pub evals_a: u64,
    pub evals_b: u64,
}

/// Paired comparison of two sets of runs, matched by seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Median of `best_b − best_a` over paired seeds.
    pub median_difference: f64,
    /// Seeds where `b` ended strictly better than `a`.
    pub b_wins: usize,
    pub a_wins: usize,
}

pub fn compare(a: &[RunTrace], b: &[RunTrace]) -> Result<Comparison> {
    let mut rows = Vec::new();
    for ta in a {
        if let Some(tb) = b.iter().find(|t| t.seed == ta.seed) {
            rows.push(ComparisonRow {
                seed: ta.seed,
                best_a: ta.final_best(),
                best_b: tb.final_best(),
                evals_a: ta.final_evals(),
                evals_b: tb.final_evals(),
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::param("no seeds in common"));
    }
    let diffs: Vec<f64> = rows
        .iter()
        .map(|r| if r.best_a == r.best_b { 0.0 } else { r.best_b - r.best_a })
        .collect();
    Ok(Comparison {
        median_difference: Quartiles::of(&diffs)?.median,
        b_wins: rows.iter().filter(|r| r.best_b < r.best_a).count(),
        a_wins: rows.iter().filter(|r| r.best_a < r.best_b).count(),
        rows,
    })
}
