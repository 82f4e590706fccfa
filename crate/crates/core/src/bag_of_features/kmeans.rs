//! Seeded Lloyd's k-means with k-means++ seeding.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct KMeansFit {
    /// Row-major `k x dim`.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties broken by the lowest id.
#[cfg(test)]
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Row-major `k x dim` to dimension-major `dim x k`.
pub(crate) fn transpose(centroids: &[f64], dim: usize) -> Vec<f64> {
    let k = centroids.len() / dim;
    let mut t = vec![0.0; centroids.len()];
    for c in 0..k {
        for d in 0..dim {
            t[d * k + c] = centroids[c * dim + d];
        }
    }
    t
}

/// Same result as [`nearest`] (identical summation order per centroid), but
/// scanning all centroids one dimension at a time so the loop vectorizes.
/// `acc` must hold exactly `k` values.
pub(crate) fn nearest_transposed(point: &[f64], transposed: &[f64], acc: &mut [f64]) -> (usize, f64) {
    let k = acc.len();
    acc.iter_mut().for_each(|a| *a = 0.0);
    for (d, &x) in point.iter().enumerate() {
        let row = &transposed[d * k..(d + 1) * k];
        for (a, &c) in acc.iter_mut().zip(row) {
            let diff = x - c;
            *a += diff * diff;
        }
    }
    let mut best = (0, f64::INFINITY);
    for (i, &dist) in acc.iter().enumerate() {
        if dist < best.1 {
            best = (i, dist);
        }
    }
    best
}

pub fn count_distinct(points: &[f64], dim: usize) -> usize {
    points
        .chunks_exact(dim)
        .map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

/// Clusters `points` (row-major, `dim` columns) into `k` groups.
///
/// Terminates when assignments stop changing or after `max_iter` Lloyd
/// iterations. Empty clusters keep their previous centroid, so the objective
/// never increases.
pub fn kmeans<R: Rng>(
    points: &[f64],
    dim: usize,
    k: usize,
    max_iter: usize,
    rng: &mut R,
) -> Result<KMeansFit> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(Error::Usage("point buffer is not a multiple of dim".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let n = points.len() / dim;
    let distinct = count_distinct(points, dim);
    if distinct < k {
        return Err(Error::Training(format!(
            "{distinct} distinct points cannot support {k} clusters"
        )));
    }

    let mut centroids = plus_plus_init(points, dim, k, rng);
    let mut assignments = vec![usize::MAX; n];
    let mut objective_history = Vec::new();
    let mut iterations = 0;

    let mut acc = vec![0.0; k];
    loop {
        let mut changed = false;
        let mut objective = 0.0;
        let transposed = transpose(&centroids, dim);
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let (c, d) = nearest_transposed(p, &transposed, &mut acc);
            objective += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        objective_history.push(objective);
        if !changed || iterations >= max_iter {
            break;
        }
        iterations += 1;

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.chunks_exact(dim).zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s * inv;
                }
            }
        }
    }

    Ok(KMeansFit {
        centroids,
        assignments,
        objective_history,
        iterations,
    })
}

/// D^2-weighted seeding. Requires at least `k` distinct points, so every
/// draw after the first has positive total weight.
fn plus_plus_init<R: Rng>(points: &[f64], dim: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(point(first));
    let mut dist: Vec<f64> = (0..n)
        .map(|i| squared_distance(point(i), point(first)))
        .collect();
    for _ in 1..k {
        let total: f64 = dist.iter().sum();
        let mut target = rng.gen::<f64>() * total;
        let mut chosen = None;
        for (i, &d) in dist.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            if target < d {
                chosen = Some(i);
                break;
            }
            target -= d;
        }
        // Rounding can exhaust `target` past the last positive weight.
        let chosen = chosen.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).unwrap_or(0));
        let start = centroids.len();
        centroids.extend_from_slice(point(chosen));
        for (i, d) in dist.iter_mut().enumerate() {
            let nd = squared_distance(point(i), &centroids[start..start + dim]);
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}
