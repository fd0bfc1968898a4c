//! Hardware cost model and surrogate/true ranking agreement.

use crate::acquisition::AcquisitionSpec;
use crate::error::{Error, Result};

/// Number of hardware batches needed for `evaluations` points.
pub fn hw_batches(evaluations: u64, batch_size: usize) -> u64 {
    let b = batch_size.max(1) as u64;
    evaluations.div_ceil(b)
}

/// Largest `n` with `n·probes ≤ batch_size` (may be 0; callers floor at 1).
pub fn compute_n_hw(probes: usize, batch_size: usize) -> usize {
    if probes == 0 {
        return 0;
    }
    batch_size / probes
}

/// Kendall's τ-b between two score vectors (smaller score = better rank in both).
/// Returns 0 when either side is entirely tied.
pub fn kendall_tau_b(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            got: a.len(),
        });
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::NanCriterion);
    }
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut ties_a, mut ties_b) = (0i64, 0i64);
    let n = a.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let da = a[i].total_cmp(&a[j]) as i64;
            let db = b[i].total_cmp(&b[j]) as i64;
            match (da, db) {
                (0, 0) => {}
                (0, _) => ties_a += 1,
                (_, 0) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n_a = (concordant + discordant + ties_b) as f64;
    let n_b = (concordant + discordant + ties_a) as f64;
    if n_a == 0.0 || n_b == 0.0 {
        return Ok(0.0);
    }
    Ok((concordant - discordant) as f64 / (n_a * n_b).sqrt())
}

/// Agreement between the ordering the criterion induces on some points and
/// the ordering of their true fitness values.
pub fn ranking_agreement(surrogate_values: &[f64], true_fitness: &[f64], spec: &AcquisitionSpec) -> Result<f64> {
    let scores: Vec<f64> = if spec.maximizes() {
        surrogate_values.iter().map(|v| -v).collect()
    } else {
        surrogate_values.to_vec()
    };
    kendall_tau_b(&scores, true_fitness)
}
