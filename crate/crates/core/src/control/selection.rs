//! Choosing the points for true evaluation from a larger candidate set:
//! cluster the candidates, take the best point of each cluster, then fill up
//! with the best remaining candidates overall.

use nalgebra::DVector;
use rand::Rng;

use crate::acquisition::{rank_candidates, AcquisitionSpec};
use crate::error::{Error, Result};

const KMEANS_MAX_ITER: usize = 100;
const KMEANS_TOL: f64 = 1e-9;

/// Lloyd's k-means with k-means++ seeding. Returns one cluster label per point.
pub fn kmeans<R: Rng + ?Sized>(points: &[DVector<f64>], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::param(format!("k-means needs 1 <= k <= {n}, got {k}")));
    }
    let mut centroids = seed_plus_plus(points, k, rng);
    let mut labels = vec![0; n];
    for _ in 0..KMEANS_MAX_ITER {
        for (i, p) in points.iter().enumerate() {
            labels[i] = nearest(&centroids, p).0;
        }
        let d = points[0].len();
        let mut sums = vec![DVector::<f64>::zeros(d); k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l] += p;
            counts[l] += 1;
        }
        let mut moved = 0.0_f64;
        for j in 0..k {
            let next = if counts[j] == 0 {
                // re-seed at the point farthest from its own centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = (&points[a] - &centroids[labels[a]]).norm_squared();
                        let db = (&points[b] - &centroids[labels[b]]).norm_squared();
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                let c = points[far].clone();
                labels[far] = j;
                c
            } else {
                &sums[j] / counts[j] as f64
            };
            moved = moved.max((&next - &centroids[j]).norm());
            centroids[j] = next;
        }
        if moved < KMEANS_TOL {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        labels[i] = nearest(&centroids, p).0;
    }
    Ok(labels)
}

fn nearest(centroids: &[DVector<f64>], p: &DVector<f64>) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(j, c)| (j, (p - c).norm_squared()))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn seed_plus_plus<R: Rng + ?Sized>(points: &[DVector<f64>], k: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| (p - &centroids[0]).norm_squared()).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[idx].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - &c).norm_squared());
        }
        centroids.push(c);
    }
    centroids
}

/// Selection given a fixed clustering `labels` (values in `0..k`).
///
/// Returns `count` distinct candidate indices: first the best member of each
/// non-empty cluster in cluster order, then the best remaining candidates.
pub fn select_with_clusters(
    criterion_values: &[f64],
    labels: &[usize],
    k: usize,
    spec: &AcquisitionSpec,
    count: usize,
) -> Result<Vec<usize>> {
    let n = criterion_values.len();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if count >= n {
        return Err(Error::param(format!(
            "lambda < card{{x̃1,…,x̃λ'}} violated: selecting {count} of {n} candidates"
        )));
    }
    if k == 0 || k > count {
        return Err(Error::param(format!("k must lie in 1..={count}, got {k}")));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::param(format!("cluster label {l} out of range for k = {k}")));
    }
    let order = rank_candidates(criterion_values, spec)?;
    let mut chosen = Vec::with_capacity(count);
    let mut taken = vec![false; n];
    for cluster in 0..k {
        if let Some(&best) = order.iter().find(|&&i| labels[i] == cluster) {
            chosen.push(best);
            taken[best] = true;
        }
    }
    for &i in &order {
        if chosen.len() == count {
            break;
        }
        if !taken[i] {
            chosen.push(i);
            taken[i] = true;
        }
    }
    Ok(chosen)
}

/// Cluster `candidates` into `k` groups and select `count` of them.
pub fn select_by_clustering<R: Rng + ?Sized>(
    candidates: &[DVector<f64>],
    criterion_values: &[f64],
    spec: &AcquisitionSpec,
    count: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if candidates.len() != criterion_values.len() {
        return Err(Error::DimensionMismatch {
            expected: candidates.len(),
            got: criterion_values.len(),
        });
    }
    if count >= candidates.len() {
        return Err(Error::param(format!(
            "lambda < card{{x̃1,…,x̃λ'}} violated: selecting {count} of {} candidates",
            candidates.len()
        )));
    }
    if k == 0 || k > count {
        return Err(Error::param(format!("k must lie in 1..={count}, got {k}")));
    }
    let labels = kmeans(candidates, k, rng)?;
    select_with_clusters(criterion_values, &labels, k, spec, count)
}
