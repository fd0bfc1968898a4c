//! CMA-ES search distribution: sampling, covariance estimation and eigen geometry.
//!
//! The distribution is `N(m, σ²C)`. `C` is kept together with its cached
//! eigendecomposition `C = B·diag(D)·Bᵀ`, eigenvalues in non-increasing order
//! and every eigenvector column signed so that its largest-magnitude entry is
//! positive.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const NEG_EIGEN_CLAMP: f64 = 1e-12;
const NOT_PSD_REL: f64 = 1e-8;
const REGULARIZE_REL: f64 = 1e-14;
const JITTER_REL: f64 = 1e-12;
const MAHALANOBIS_COND: f64 = 1e-12;

/// How [`update_state`] adapts the distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Unweighted mean of the better half, empirical covariance of the whole
    /// population and a 1/5th-success step-size rule.
    PaperSimple,
    /// Weighted recombination with rank-one/rank-μ covariance adaptation and
    /// cumulative step-size adaptation.
    #[default]
    Standard,
}

/// A set of points with their fitness values, all from one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedPopulation {
    pub points: Vec<DVector<f64>>,
    pub fitness: Vec<f64>,
    pub generation: u64,
}

impl EvaluatedPopulation {
    pub fn new(points: Vec<DVector<f64>>, fitness: Vec<f64>, generation: u64) -> Result<Self> {
        if points.len() != fitness.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: fitness.len(),
            });
        }
        if points.is_empty() {
            return Err(Error::InsufficientPoints { needed: 1, got: 0 });
        }
        Ok(Self {
            points,
            fitness,
            generation,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices sorted by ascending fitness, ties kept in insertion order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.fitness.len()).collect();
        order.sort_by(|&a, &b| self.fitness[a].total_cmp(&self.fitness[b]));
        order
    }
}

/// Complete state of one CMA-ES run.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaState {
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    generation: u64,
    lambda: usize,
    path_c: DVector<f64>,
    path_sigma: DVector<f64>,
    best_fitness: Option<f64>,
}

impl CmaState {
    /// Isotropic start: `C = I`.
    pub fn new(mean: DVector<f64>, sigma: f64, lambda: usize) -> Result<Self> {
        let d = mean.len();
        Self::with_covariance(mean, sigma, DMatrix::identity(d, d), lambda)
    }

    pub fn with_covariance(
        mean: DVector<f64>,
        sigma: f64,
        cov: DMatrix<f64>,
        lambda: usize,
    ) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::param("dimension must be at least 1"));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        check_sigma_mean(sigma, &mean)?;
        if lambda < 2 {
            return Err(Error::param(format!("population size must be >= 2, got {lambda}")));
        }
        let (basis, eigenvalues) = eigendecompose(&cov)?;
        Ok(Self {
            path_c: DVector::zeros(d),
            path_sigma: DVector::zeros(d),
            mean,
            sigma,
            cov,
            basis,
            eigenvalues,
            generation: 0,
            lambda,
            best_fitness: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Eigenvectors of `C` as columns, ordered by decreasing eigenvalue.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    /// `σ²C`, the covariance of the sampling distribution.
    pub fn sampling_cov(&self) -> DMatrix<f64> {
        &self.cov * (self.sigma * self.sigma)
    }

    /// Draw `count` points from `N(m, σ²C)`.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<DVector<f64>>> {
        sample_population(self, count, rng)
    }

    /// Replace the covariance and refresh the cached eigendecomposition.
    pub fn set_cov(&mut self, cov: DMatrix<f64>) -> Result<()> {
        let (cov, basis, eigenvalues) = regularize(cov)?;
        self.cov = cov;
        self.basis = basis;
        self.eigenvalues = eigenvalues;
        Ok(())
    }
}

fn check_sigma_mean(sigma: f64, mean: &DVector<f64>) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("sigma must be positive and finite, got {sigma}")));
    }
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mean"));
    }
    Ok(())
}

/// Draw `count` independent points `m + σ·B·diag(√D)·z` with `z ~ N(0, I)`.
pub fn sample_population<R: Rng + ?Sized>(
    state: &CmaState,
    count: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    check_sigma_mean(state.sigma, &state.mean)?;
    if count == 0 {
        return Err(Error::param("sample count must be >= 1"));
    }
    let d = state.dim();
    let scale = state.eigenvalues.map(|v| v.max(0.0).sqrt() * state.sigma);
    let transform = &state.basis * DMatrix::from_diagonal(&scale);
    Ok((0..count)
        .map(|_| {
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            &state.mean + &transform * z
        })
        .collect())
}

/// Unbiased sample covariance `1/(λ−1) Σ (xᵢ − x̄)(xᵢ − x̄)ᵀ`.
pub fn empirical_covariance(points: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    if points.len() < 2 {
        return Err(Error::InsufficientPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let d = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: p.len(),
        });
    }
    let n = points.len() as f64;
    let mut centroid = DVector::zeros(d);
    for p in points {
        centroid += p;
    }
    centroid /= n;
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        let dev = p - &centroid;
        cov.ger(1.0, &dev, &dev, 1.0);
    }
    cov /= n - 1.0;
    // exact symmetry
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// Symmetric eigendecomposition of a PSD matrix.
///
/// Eigenvalues come back in non-increasing order with tiny negative values
/// clamped to zero; each eigenvector is signed so its largest-magnitude
/// entry is positive.
pub fn eigendecompose(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = cov.nrows();
    if cov.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: cov.ncols(),
        });
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    let scale = cov.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut asym = 0.0_f64;
    for i in 0..d {
        for j in 0..i {
            asym = asym.max((cov[(i, j)] - cov[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale.max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }

    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let largest = eig.eigenvalues[order[0]];
    let mut basis = DMatrix::zeros(d, d);
    let mut values = DVector::zeros(d);
    for (col, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvalues[src];
        if v < 0.0 {
            if v < -NOT_PSD_REL * largest.max(0.0) && v < -NEG_EIGEN_CLAMP {
                return Err(Error::NotPsd {
                    eigenvalue: v,
                    largest,
                });
            }
            v = 0.0;
        }
        values[col] = v;
        let mut vec = eig.eigenvectors.column(src).into_owned();
        let pivot = vec
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0_f64), |(bi, bv), (i, x)| if x.abs() > bv.abs() + 1e-14 { (i, x) } else { (bi, bv) });
        if pivot.1 < 0.0 {
            vec.neg_mut();
        }
        basis.set_column(col, &vec);
    }
    Ok((basis, values))
}

/// `B·diag(D)·Bᵀ`.
pub fn reconstruct(basis: &DMatrix<f64>, eigenvalues: &DVector<f64>) -> DMatrix<f64> {
    basis * DMatrix::from_diagonal(eigenvalues) * basis.transpose()
}

/// Diagonal jitter when the spectrum is (nearly) degenerate, then decompose.
fn regularize(mut cov: DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let d = cov.nrows();
    let (basis, values) = eigendecompose(&cov)?;
    let largest = values[0];
    let smallest = values[d - 1];
    if smallest >= REGULARIZE_REL * largest && largest > 0.0 {
        return Ok((cov, basis, values));
    }
    let trace = cov.trace();
    let jitter = if trace > 0.0 { JITTER_REL * trace / d as f64 } else { JITTER_REL };
    for i in 0..d {
        cov[(i, i)] += jitter;
    }
    let (basis, values) = eigendecompose(&cov)?;
    Ok((cov, basis, values))
}

/// Coordinates `Bᵀx` of each point in the eigenbasis.
pub fn to_eigenbasis(points: &[DVector<f64>], basis: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let bt = basis.transpose();
    points.iter().map(|x| &bt * x).collect()
}

/// Precomputed whitening `W = diag(1/√D)·Bᵀ`, so that the Mahalanobis
/// distance is `‖W(x − x')‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisMetric {
    whitening: DMatrix<f64>,
}

impl MahalanobisMetric {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let (basis, values) = eigendecompose(cov)?;
        let largest = values[0];
        let smallest = values[values.len() - 1];
        if !(largest > 0.0) || smallest <= MAHALANOBIS_COND * largest {
            return Err(Error::SingularCovariance);
        }
        Ok(Self::from_eigen(&basis, &values))
    }

    fn from_eigen(basis: &DMatrix<f64>, values: &DVector<f64>) -> Self {
        let inv_sqrt = values.map(|v| 1.0 / v.sqrt());
        Self {
            whitening: DMatrix::from_diagonal(&inv_sqrt) * basis.transpose(),
        }
    }

    /// Like [`MahalanobisMetric::new`] but adds the standard diagonal jitter
    /// to a singular covariance first.
    pub fn regularized(cov: &DMatrix<f64>) -> Result<Self> {
        match Self::new(cov) {
            Err(Error::SingularCovariance) => {
                let (_, basis, values) = regularize(cov.clone())?;
                if !(values[values.len() - 1] > 0.0) {
                    return Err(Error::SingularCovariance);
                }
                Ok(Self::from_eigen(&basis, &values))
            }
            other => other,
        }
    }

    pub fn dim(&self) -> usize {
        self.whitening.ncols()
    }

    pub fn distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (&self.whitening * (x - y)).norm()
    }
}

/// `√((x−x')ᵀ cov⁻¹ (x−x'))`.
pub fn mahalanobis_distance(x: &DVector<f64>, y: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if x.len() != y.len() || cov.nrows() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len().min(cov.nrows()),
        });
    }
    Ok(MahalanobisMetric::new(cov)?.distance(x, y))
}

/// Strategy parameters of the standard CMA-ES update for a given population size.
#[derive(Debug, Clone)]
struct StandardParams {
    weights: Vec<f64>,
    mu_eff: f64,
    cc: f64,
    cs: f64,
    c1: f64,
    cmu: f64,
    damps: f64,
    chi_n: f64,
}

impl StandardParams {
    fn new(d: usize, lambda: usize) -> Self {
        let n = d as f64;
        let mu = (lambda / 2).max(1);
        let raw: Vec<f64> = (0..mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let cc = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let cs = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let c1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let cmu = (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let damps = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + cs;
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Self {
            weights,
            mu_eff,
            cc,
            cs,
            c1,
            cmu,
            damps,
            chi_n,
        }
    }
}

/// Adapt the distribution to an evaluated population and advance the generation.
pub fn update_state(
    state: &CmaState,
    evaluated: &EvaluatedPopulation,
    mode: UpdateMode,
) -> Result<CmaState> {
    if evaluated.is_empty() {
        return Err(Error::InsufficientPoints { needed: 1, got: 0 });
    }
    if evaluated.points.len() != evaluated.fitness.len() {
        return Err(Error::DimensionMismatch {
            expected: evaluated.points.len(),
            got: evaluated.fitness.len(),
        });
    }
    if evaluated.fitness.iter().any(|f| !f.is_finite()) {
        return Err(Error::NonFinite("fitness"));
    }
    let d = state.dim();
    if let Some(p) = evaluated.points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: p.len(),
        });
    }
    let mut next = state.clone();
    match mode {
        UpdateMode::PaperSimple => simple_update(&mut next, evaluated)?,
        UpdateMode::Standard => standard_update(&mut next, evaluated)?,
    }
    let gen_best = evaluated.fitness.iter().copied().fold(f64::INFINITY, f64::min);
    next.best_fitness = Some(next.best_fitness.map_or(gen_best, |b| b.min(gen_best)));
    next.generation += 1;
    Ok(next)
}

fn simple_update(state: &mut CmaState, evaluated: &EvaluatedPopulation) -> Result<()> {
    let order = evaluated.ranking();
    let n = order.len();
    let mu = n.div_ceil(2);
    let mut mean = DVector::zeros(state.dim());
    for &i in &order[..mu] {
        mean += &evaluated.points[i];
    }
    mean /= mu as f64;

    // σ²C equals the empirical covariance before σ is adapted.
    let cov = if n >= 2 {
        empirical_covariance(&evaluated.points)? / (state.sigma * state.sigma)
    } else {
        DMatrix::zeros(state.dim(), state.dim())
    };

    let successes = match state.best_fitness {
        Some(best) => evaluated.fitness.iter().filter(|&&f| f < best).count(),
        None => 0,
    };
    if state.best_fitness.is_some() {
        let factor = if successes as f64 > n as f64 / 5.0 { 1.22 } else { 0.82 };
        state.sigma *= factor;
    }
    state.mean = mean;
    state.set_cov(cov)
}

fn standard_update(state: &mut CmaState, evaluated: &EvaluatedPopulation) -> Result<()> {
    let d = state.dim();
    let n = d as f64;
    let order = evaluated.ranking();
    let params = StandardParams::new(d, order.len().max(2));
    let sigma = state.sigma;

    let steps: Vec<DVector<f64>> = order
        .iter()
        .take(params.weights.len())
        .map(|&i| (&evaluated.points[i] - &state.mean) / sigma)
        .collect();
    let mut y_w = DVector::zeros(d);
    for (w, y) in params.weights.iter().zip(&steps) {
        y_w.axpy(*w, y, 1.0);
    }
    state.mean += &y_w * sigma;

    let inv_sqrt = state.eigenvalues.map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
    let c_inv_sqrt = &state.basis * DMatrix::from_diagonal(&inv_sqrt) * state.basis.transpose();
    let cs = params.cs;
    state.path_sigma =
        &state.path_sigma * (1.0 - cs) + (&c_inv_sqrt * &y_w) * (cs * (2.0 - cs) * params.mu_eff).sqrt();

    let gen = (state.generation + 1) as f64;
    let ps_norm = state.path_sigma.norm();
    let h_sigma = ps_norm / (1.0 - (1.0 - cs).powf(2.0 * gen)).sqrt()
        < (1.4 + 2.0 / (n + 1.0)) * params.chi_n;
    let hs = if h_sigma { 1.0 } else { 0.0 };
    let cc = params.cc;
    state.path_c = &state.path_c * (1.0 - cc) + &y_w * (hs * (cc * (2.0 - cc) * params.mu_eff).sqrt());

    let c1 = params.c1;
    let cmu = params.cmu;
    let mut cov = &state.cov * (1.0 - c1 - cmu + (1.0 - hs) * c1 * cc * (2.0 - cc));
    cov.ger(c1, &state.path_c, &state.path_c, 1.0);
    for (w, y) in params.weights.iter().zip(&steps) {
        cov.ger(cmu * w, y, y, 1.0);
    }
    let cov = (&cov + cov.transpose()) * 0.5;

    state.sigma *= ((cs / params.damps) * (ps_norm / params.chi_n - 1.0)).exp();
    if !(state.sigma.is_finite() && state.sigma > 0.0) {
        return Err(Error::NonFinite("sigma"));
    }
    state.set_cov(cov)
}
