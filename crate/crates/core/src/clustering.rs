//! Feature standardization, seeded k-means, representative selection and a
//! two-component PCA projection for cluster reports.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::signature::FeatureVector;

pub const STD_FLOOR: f64 = 1e-12;
pub const DEFAULT_K: usize = 4;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_N_INIT: usize = 10;

/// Per-coordinate affine map to zero mean and unit population variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub scale: Vec<f64>,
    /// Columns whose spread fell below the floor; they standardize to 0.
    pub floored: Vec<bool>,
}

impl Standardizer {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| {
                if self.floored[j] {
                    0.0
                } else {
                    (v - self.mean[j]) / self.scale[j]
                }
            })
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(j, v)| v * self.scale[j] + self.mean[j])
            .collect()
    }
}

/// Standardizes each coordinate across the given assets.
pub fn standardize(features: &[FeatureVector]) -> Result<(Standardizer, Vec<FeatureVector>)> {
    if features.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "standardization needs at least 2 feature vectors, got {}",
            features.len()
        )));
    }
    let dim = features[0].values.len();
    if let Some(f) = features.iter().find(|f| f.values.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: f.values.len(),
        });
    }
    let n = features.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, v) in mean.iter_mut().zip(&f.values) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for f in features {
        for ((s, v), m) in var.iter_mut().zip(&f.values).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
    let floored: Vec<bool> = std.iter().map(|&s| !(s >= STD_FLOOR)).collect();
    let scale = std.iter().map(|&s| s.max(STD_FLOOR)).collect();
    let st = Standardizer {
        mean,
        scale,
        floored,
    };
    let out = features
        .iter()
        .map(|f| FeatureVector {
            symbol: f.symbol.clone(),
            values: st.apply(&f.values),
        })
        .collect();
    Ok((st, out))
}

/// Fitted k-means partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Zero-based cluster index of each input point, in input order.
    pub assignments: Vec<usize>,
    pub iterations_run: usize,
    pub final_loss: f64,
    /// Loss after each iteration's update step.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    /// Independent seedings; the fit with the lowest loss is kept.
    pub n_init: usize,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            n_init: DEFAULT_N_INIT,
        }
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn kmeans_loss(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &c)| squared_distance(p, &centroids[c]))
        .sum()
}

/// Nearest centroid per point; ties go to the lowest cluster index.
pub fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let d = squared_distance(p, c);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

// Greedy k-means++: each new centre is the best of a few D²-weighted
// candidates, judged by the potential it leaves behind.
fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let candidates: Vec<usize> = match WeightedIndex::new(&nearest) {
            Ok(dist) => (0..trials).map(|_| dist.sample(rng)).collect(),
            // Every point already coincides with a centroid.
            Err(_) => vec![centroids.len() % points.len()],
        };
        // (potential, candidate, nearest distances); ties keep the earlier draw
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for &c in &candidates {
            let updated: Vec<f64> = nearest
                .iter()
                .zip(points)
                .map(|(d, p)| d.min(squared_distance(p, &points[c])))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| potential < *b) {
                best = Some((potential, c, updated));
            }
        }
        let (_, c, updated) = best.expect("at least one candidate");
        centroids.push(points[c].clone());
        nearest = updated;
    }
    centroids
}

// Moves the point farthest from its centroid, among clusters that can spare
// one, into each empty cluster.
fn repair_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignments: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut pick = None;
        let mut pick_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if sizes[a] < 2 {
                continue;
            }
            let d = squared_distance(p, &centroids[a]);
            if d > pick_d {
                pick = Some(i);
                pick_d = d;
            }
        }
        let Some(i) = pick else { return };
        assignments[i] = empty;
        centroids[empty] = points[i].clone();
    }
}

fn update_centroids(points: &[Vec<f64>], assignments: &[usize], k: usize, prev: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(j, (s, c))| {
            if c == 0 {
                prev[j].clone()
            } else {
                s.into_iter().map(|v| v / c as f64).collect()
            }
        })
        .collect()
}

fn lloyd(points: &[Vec<f64>], k: usize, max_iter: usize, tol: f64, rng: &mut impl Rng) -> ClusterModel {
    let mut centroids = plus_plus_init(points, k, rng);
    let mut assignments = assign(points, &centroids);
    let mut loss_history = Vec::new();
    let mut iterations_run = 0;

    for iter in 1..=max_iter.max(1) {
        iterations_run = iter;
        if iter > 1 {
            assignments = assign(points, &centroids);
        }
        repair_empty(points, &mut centroids, &mut assignments);
        let updated = update_centroids(points, &assignments, k, &centroids);
        let movement = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        loss_history.push(kmeans_loss(points, &centroids, &assignments));
        if movement < tol && assign(points, &centroids) == assignments {
            break;
        }
    }

    let final_loss = kmeans_loss(points, &centroids, &assignments);
    ClusterModel {
        k,
        centroids,
        assignments,
        iterations_run,
        final_loss,
        loss_history,
    }
}

/// Lloyd's k-means with greedy k-means++ seeding from a ChaCha8 stream,
/// restarted `n_init` times; the lowest-loss fit wins (earliest on ties).
///
/// Each run stops once the largest centroid displacement drops below `tol`
/// and a fresh assignment step leaves the partition unchanged, or after
/// `max_iter` iterations.
pub fn kmeans_fit(points: &[Vec<f64>], params: KMeansParams) -> Result<ClusterModel> {
    let KMeansParams {
        k,
        seed,
        max_iter,
        tol,
        n_init,
    } = params;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n_init == 0 {
        return Err(Error::InvalidArgument("n_init must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if points.len() < k {
        return Err(Error::TooFewPoints {
            k,
            points: points.len(),
        });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: p.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = lloyd(points, k, max_iter, tol, &mut rng);
    for _ in 1..n_init {
        let run = lloyd(points, k, max_iter, tol, &mut rng);
        if run.final_loss < best.final_loss {
            best = run;
        }
    }
    Ok(best)
}

pub type Representatives = BTreeMap<usize, String>;

/// For each non-empty cluster, the member closest to the centroid; ties go
/// to the lexicographically smallest symbol.
pub fn select_representatives(model: &ClusterModel, points: &[FeatureVector]) -> Result<Representatives> {
    if points.len() != model.assignments.len() {
        return Err(Error::DimensionMismatch {
            expected: model.assignments.len(),
            actual: points.len(),
        });
    }
    let mut best: BTreeMap<usize, (f64, &str)> = BTreeMap::new();
    for (fv, &c) in points.iter().zip(&model.assignments) {
        let d = squared_distance(&fv.values, &model.centroids[c]);
        let candidate = (d, fv.symbol.as_str());
        best.entry(c)
            .and_modify(|cur| {
                if d < cur.0 || (d == cur.0 && candidate.1 < cur.1) {
                    *cur = candidate;
                }
            })
            .or_insert(candidate);
    }
    Ok(best.into_iter().map(|(c, (_, s))| (c, s.to_string())).collect())
}

/// Projects points onto the two leading principal axes of their sample
/// covariance. Each axis is signed so its largest-magnitude loading is
/// positive. With one-dimensional input the second coordinate is zero.
pub fn project_2d(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "projection needs at least 2 points, got {}",
            points.len()
        )));
    }
    let n = points.len();
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: p.len(),
        });
    }
    let mut centered = DMatrix::from_fn(n, dim, |i, j| points[i][j]);
    for j in 0..dim {
        let m = centered.column(j).mean();
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let axes: Vec<Option<Vec<f64>>> = (0..2)
        .map(|c| {
            order.get(c).map(|&idx| {
                let v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
                let lead = v
                    .iter()
                    .copied()
                    .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
                if lead < 0.0 {
                    v.into_iter().map(|x| -x).collect()
                } else {
                    v
                }
            })
        })
        .collect();

    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let mut out = [0.0; 2];
            for (c, axis) in axes.iter().enumerate() {
                if let Some(v) = axis {
                    out[c] = row.iter().zip(v).map(|(x, y)| x * y).sum();
                }
            }
            out
        })
        .collect())
}
