//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Iterated integrals of a piecewise-linear path by nested trapezoidal
/// sums on a uniform refinement of every segment.
///
/// Returns the coefficients of all words of length `1..=level` in
/// (length, lexicographic) order, constant term first. Works word by word
/// from the recursion `S^{w i}(t) = ∫ S^w dX^i`, with no tensor algebra.
pub fn riemann_signature(points: &[Vec<f64>], level: usize, substeps: usize) -> Vec<f64> {
    let dim = points[0].len();
    let words = all_words(dim, level);
    // value[w] along the fine grid; index 0 is the empty word
    let mut value = vec![0.0; words.len()];
    value[0] = 1.0;
    let prefix: Vec<Option<usize>> = words
        .iter()
        .map(|w| {
            if w.is_empty() {
                None
            } else {
                words.iter().position(|p| p[..] == w[..w.len() - 1])
            }
        })
        .collect();
    let mut old = value.clone();
    for seg in points.windows(2) {
        let h: Vec<f64> = (0..dim).map(|i| (seg[1][i] - seg[0][i]) / substeps as f64).collect();
        for _ in 0..substeps {
            old.copy_from_slice(&value);
            // words are ordered by length, so prefixes are updated first
            for (wi, w) in words.iter().enumerate().skip(1) {
                let p = prefix[wi].unwrap();
                let last = w[w.len() - 1];
                value[wi] = old[wi] + 0.5 * (old[p] + value[p]) * h[last];
            }
        }
    }
    value
}

pub fn all_words(dim: usize, level: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..level {
        let mut next = Vec::new();
        for w in &frontier {
            for i in 0..dim {
                let mut x: Vec<usize> = w.clone();
                x.push(i);
                next.push(x);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn random_path(rng: &mut impl Rng, dim: usize, segments: usize) -> Vec<Vec<f64>> {
    let mut p = vec![(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()];
    for _ in 0..segments {
        let last = p.last().unwrap().clone();
        p.push(last.iter().map(|x| x + rng.random_range(-1.0..1.0)).collect());
    }
    p
}

/// Largest per-level normwise relative difference: `max_w |a_w - b_w|`
/// over words of one length, divided by the largest magnitude among that
/// level's coefficients.
pub fn levelwise_rel_err(a: &[f64], b: &[f64], dim: usize, level: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let mut start = 0;
    for k in 0..=level {
        let len = dim.pow(k as u32);
        let (x, y) = (&a[start..start + len], &b[start..start + len]);
        let scale = x.iter().chain(y).fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = x.iter().zip(y).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
        start += len;
    }
    worst
}

/// Random symmetric PSD matrix `A Aᵀ / n` with `A` of shape `n × rank`.
pub fn random_psd(rng: &mut impl Rng, n: usize, rank: usize) -> nalgebra::DMatrix<f64> {
    let a = nalgebra::DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
    let m = &a * a.transpose() / rank as f64;
    // symmetrize exactly
    nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// Uniform sample from the probability simplex (normalized exponentials).
pub fn random_simplex_point(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Brute-force maximum drawdown over all (peak, trough) pairs.
pub fn brute_force_mdd(v: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        for j in i..v.len() {
            worst = worst.max(1.0 - v[j] / v[i]);
        }
    }
    worst
}
