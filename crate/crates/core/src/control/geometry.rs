//! Principal-subspace coordinates of the current search distribution.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::cma::{sample_population, CmaState};
use crate::error::{Error, Result};

fn check_subspace(dim: usize, ell: usize) -> Result<()> {
    if ell == 0 || ell >= dim {
        return Err(Error::param(format!(
            "projection dimension must satisfy 1 <= l < d = {dim}, got {ell}"
        )));
    }
    Ok(())
}

/// First `ell` coordinates of `Bᵀ(x − m)` for each point.
pub fn project_to_principal_subspace(
    points: &[DVector<f64>],
    state: &CmaState,
    ell: usize,
) -> Result<Vec<DVector<f64>>> {
    check_subspace(state.dim(), ell)?;
    let leading = state.basis().columns(0, ell).transpose();
    Ok(points.iter().map(|x| &leading * (x - state.mean())).collect())
}

/// `σ²·diag(D₁,…,D_ℓ)`: the sampling covariance expressed in projected coordinates.
pub fn projected_sampling_cov(state: &CmaState, ell: usize) -> Result<DMatrix<f64>> {
    check_subspace(state.dim(), ell)?;
    let s2 = state.sigma() * state.sigma();
    Ok(DMatrix::from_diagonal(&state.eigenvalues().rows(0, ell).map(|v| v * s2)))
}

/// Squared distance of `x − m` from the span of the leading `ell` eigenvectors.
pub fn residual_sq(x: &DVector<f64>, state: &CmaState, ell: usize) -> f64 {
    let centered = x - state.mean();
    let trailing = state.basis().columns(ell, state.dim() - ell).transpose();
    (trailing * centered).norm_squared()
}

/// Sample from `N(m, σ²C)` until `count` points lie within `epsilon` of the
/// leading `ell`-dimensional principal subspace through `m`.
pub fn resample_restricted<R: Rng + ?Sized>(
    state: &CmaState,
    count: usize,
    ell: usize,
    epsilon: f64,
    max_resamples: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    resample_restricted_counted(state, count, ell, epsilon, max_resamples, rng).map(|(points, _)| points)
}

/// [`resample_restricted`], also returning the number of points drawn.
pub fn resample_restricted_counted<R: Rng + ?Sized>(
    state: &CmaState,
    count: usize,
    ell: usize,
    epsilon: f64,
    max_resamples: usize,
    rng: &mut R,
) -> Result<(Vec<DVector<f64>>, usize)> {
    check_subspace(state.dim(), ell)?;
    if !(epsilon > 0.0) {
        return Err(Error::param(format!("epsilon must be positive, got {epsilon}")));
    }
    let max_draws = max_resamples.saturating_mul(count).max(count);
    let eps2 = epsilon * epsilon;
    let mut accepted = Vec::with_capacity(count);
    let mut drawn = 0usize;
    // draw in chunks of the missing count
    while accepted.len() < count {
        if drawn >= max_draws {
            return Err(Error::EpsilonTooTight {
                accepted: accepted.len(),
                drawn,
                rate: accepted.len() as f64 / drawn as f64,
            });
        }
        let chunk = (count - accepted.len()).min(max_draws - drawn);
        drawn += chunk;
        for x in sample_population(state, chunk, rng)? {
            if residual_sq(&x, state, ell) < eps2 {
                accepted.push(x);
            }
        }
    }
    Ok((accepted, drawn))
}
