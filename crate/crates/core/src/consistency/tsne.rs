use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DistanceMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 750,
            exaggeration: 12.0,
            exaggeration_iters: 100,
            learning_rate: 100.0,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    pub config: TsneConfig,
    pub initial_kl: f64,
    pub kl: f64,
}

/// Joint affinities: per-row Gaussian conditionals tuned to the target
/// perplexity, symmetrized and normalized to sum to one. Also returns the
/// perplexity each row reached.
pub fn joint_probabilities(dist: &DistanceMatrix, perplexity: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = dist.len();
    if n < 2 {
        return Err(Error::Embedding("need at least two points".into()));
    }
    if !(perplexity > 0.0) {
        return Err(Error::Config("perplexity must be positive".into()));
    }
    if dist.values().iter().all(|&d| d == 0.0) {
        return Err(Error::Embedding("all pairwise distances are zero".into()));
    }
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    let mut reached = vec![0.0; n];
    for i in 0..n {
        let row = &dist.values()[i * n..(i + 1) * n];
        let d_min = (0..n)
            .filter(|&j| j != i)
            .map(|j| row[j])
            .fold(f64::INFINITY, f64::min);
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        let p = &mut cond[i * n..(i + 1) * n];
        let mut h = 0.0;
        for _ in 0..200 {
            let mut sum = 0.0;
            let mut dsum = 0.0;
            for j in 0..n {
                if j == i {
                    p[j] = 0.0;
                    continue;
                }
                let shifted = row[j] - d_min;
                let e = (-beta * shifted).exp();
                p[j] = e;
                sum += e;
                dsum += e * shifted;
            }
            h = sum.ln() + beta * dsum / sum;
            for v in p.iter_mut() {
                *v /= sum;
            }
            let diff = h - target;
            if diff.abs() < 1e-10 {
                break;
            }
            // Entropy falls as beta grows.
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        reached[i] = h.exp();
    }
    let mut p = vec![0.0; n * n];
    let norm = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / norm;
        }
    }
    Ok((p, reached))
}

/// Student-t kernel numerators and their sum.
fn kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            total += 2.0 * v;
        }
    }
    (num, total)
}

pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let (num, total) = kernel(y);
    p.iter()
        .zip(&num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &nij)| pij * (pij / (nij / total).max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// Gradient of the KL objective with affinities scaled by `exaggeration`.
pub fn kl_gradient(p: &[f64], y: &[[f64; 2]], exaggeration: f64) -> Vec<[f64; 2]> {
    let n = y.len();
    let (num, total) = kernel(y);
    let mut grad = vec![[0.0; 2]; n];
    for i in 0..n {
        let (mut gx, mut gy) = (0.0, 0.0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let nij = num[i * n + j];
            let m = (exaggeration * p[i * n + j] - nij / total) * nij;
            gx += m * (y[i][0] - y[j][0]);
            gy += m * (y[i][1] - y[j][1]);
        }
        grad[i] = [4.0 * gx, 4.0 * gy];
    }
    grad
}

/// Exact t-SNE with early exaggeration, momentum and adaptive gains.
pub fn tsne(dist: &DistanceMatrix, cfg: &TsneConfig) -> Result<Embedding2D> {
    let n = dist.len();
    if (n as f64) < 3.0 * cfg.perplexity {
        return Err(Error::Usage(format!(
            "{n} points are too few for perplexity {}",
            cfg.perplexity
        )));
    }
    let (p, _) = joint_probabilities(dist, cfg.perplexity)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            [1e-4 * a, 1e-4 * b]
        })
        .collect();
    let initial_kl = kl_divergence(&p, &y);
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0_f64; 2]; n];
    for it in 0..cfg.iterations {
        let ex = if it < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let mom = if it < cfg.momentum_switch { cfg.momentum } else { cfg.final_momentum };
        let grad = kl_gradient(&p, &y, ex);
        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                gains[i][d] = if (g > 0.0) != (update[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(0.01)
                };
                update[i][d] = mom * update[i][d] - cfg.learning_rate * gains[i][d] * g;
                y[i][d] += update[i][d];
            }
        }
        let cx = y.iter().map(|v| v[0]).sum::<f64>() / n as f64;
        let cy = y.iter().map(|v| v[1]).sum::<f64>() / n as f64;
        for v in y.iter_mut() {
            v[0] -= cx;
            v[1] -= cy;
        }
    }
    if y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
        return Err(Error::Embedding("t-SNE diverged to non-finite coordinates".into()));
    }
    let kl = kl_divergence(&p, &y);
    Ok(Embedding2D {
        points: y,
        config: cfg.clone(),
        initial_kl,
        kl,
    })
}

/// Mean silhouette of a labeled 2-D point set.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let n = points.len();
    let dist = |a: usize, b: usize| {
        ((points[a][0] - points[b][0]).powi(2) + (points[a][1] - points[b][1]).powi(2)).sqrt()
    };
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist(i, j);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(per: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            for _ in 0..per {
                pts.push((0..5).map(|_| c as f64 * sep + rng.gen_range(-1.0..1.0)).collect());
                labels.push(c);
            }
        }
        (pts, labels)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (pts, _) = blobs(6, 3.0, 1);
        let d = DistanceMatrix::from_points(&pts, vec![]).unwrap();
        let (p, _) = joint_probabilities(&d, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<[f64; 2]> = (0..12).map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let g = kl_gradient(&p, &y, 1.0);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..12 {
            for k in 0..2 {
                let mut a = y.clone();
                let mut b = y.clone();
                a[i][k] += h;
                b[i][k] -= h;
                let fd = (kl_divergence(&p, &a) - kl_divergence(&p, &b)) / (2.0 * h);
                worst = worst.max((fd - g[i][k]).abs() / fd.abs().max(g[i][k].abs()).max(1e-8));
            }
        }
        assert!(worst <= 1e-4, "relative error {worst}");
    }

    #[test]
    fn rows_hit_target_perplexity() {
        let (pts, _) = blobs(20, 2.0, 3);
        let d = DistanceMatrix::from_points(&pts, vec![]).unwrap();
        let (p, reached) = joint_probabilities(&d, 10.0).unwrap();
        for r in reached {
            assert!((r - 10.0).abs() < 1e-4, "{r}");
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let n = 40;
        for i in 0..n {
            for j in 0..n {
                assert_eq!(p[i * n + j], p[j * n + i]);
            }
        }
    }

    #[test]
    fn separated_clusters_stay_separated() {
        let (pts, labels) = blobs(30, 10.0, 4);
        let d = DistanceMatrix::from_points(&pts, vec![]).unwrap();
        let cfg = TsneConfig {
            perplexity: 10.0,
            ..TsneConfig::default()
        };
        let e = tsne(&d, &cfg).unwrap();
        assert!(e.kl < e.initial_kl);
        assert!(silhouette(&e.points, &labels) > 0.5);
        assert_eq!(e, tsne(&d, &cfg).unwrap());
    }

    #[test]
    fn degenerate_and_undersized_inputs() {
        let same = DistanceMatrix::from_points(&vec![vec![1.0, 2.0]; 40], vec![]).unwrap();
        let cfg = TsneConfig {
            perplexity: 5.0,
            ..TsneConfig::default()
        };
        assert!(matches!(tsne(&same, &cfg), Err(Error::Embedding(_))));
        let (pts, _) = blobs(5, 1.0, 5);
        let small = DistanceMatrix::from_points(&pts, vec![]).unwrap();
        assert!(matches!(tsne(&small, &TsneConfig::default()), Err(Error::Usage(_))));
    }
}
