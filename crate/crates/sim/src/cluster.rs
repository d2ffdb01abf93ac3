//! k-means and normalized spectral clustering for the behavioral baselines.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use coalition_core::eigen::symmetric_eigen;
use coalition_core::{normalized_laplacian, MiMatrix};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub inertia: f64,
}

const MAX_ITERS: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding.
fn init_centers(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d.iter()
                .position(|&w| {
                    acc += w;
                    u < acc
                })
                .unwrap_or(points.len() - 1)
        };
        centers.push(points[next].clone());
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> KMeansResult {
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            for c in 1..k {
                if sq_dist(p, &centers[c]) < sq_dist(p, &centers[best]) {
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for d in 0..dim {
                center[d] = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    KMeansResult { labels, inertia }
}

/// Lloyd's algorithm from `restarts` k-means++ seedings; the lowest-inertia
/// run wins, earlier runs winning ties.
pub fn kmeans(data: &Array2<f64>, k: usize, restarts: usize, rng: &mut ChaCha8Rng) -> Result<KMeansResult> {
    let n = data.nrows();
    if k == 0 || k > n {
        return Err(SimError::Config(format!("k = {k} must be in 1..={n}")));
    }
    if restarts == 0 {
        return Err(SimError::Config("at least one restart is required".into()));
    }
    let points: Vec<Vec<f64>> = data.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts {
        let run = lloyd(&points, init_centers(&points, k, rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Normalized spectral clustering of a symmetric nonnegative affinity: the
/// diagonal is dropped, rows of the `k` lowest eigenvectors of the symmetric
/// normalized Laplacian are scaled to unit length and clustered by k-means.
pub fn spectral_clustering(
    affinity: &Array2<f64>,
    k: usize,
    restarts: usize,
    rng: &mut ChaCha8Rng,
) -> Result<KMeansResult> {
    let n = affinity.nrows();
    let mut w = affinity.clone();
    for i in 0..n {
        w[[i, i]] = 0.0;
    }
    let m = MiMatrix::from_array(w)?;
    let eig = symmetric_eigen(&normalized_laplacian(&m))?;
    let mut emb = Array2::<f64>::zeros((n, k));
    for i in 0..n {
        let norm = (0..k).map(|c| eig.vectors[[i, c]].powi(2)).sum::<f64>().sqrt();
        for c in 0..k {
            emb[[i, c]] = if norm > 0.0 { eig.vectors[[i, c]] / norm } else { 0.0 };
        }
    }
    kmeans(&emb, k, restarts, rng)
}
