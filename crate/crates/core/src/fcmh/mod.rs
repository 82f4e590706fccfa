//! Attention-based comparison explainer.
//!
//! Every feature becomes one token, its count times a learned embedding row.
//! A multi-head scaled dot-product attention layer (separate query, key and
//! value projections) mixes the tokens and is added back to them; each token
//! is then averaged over the embedding dimension, and the resulting width-`n` vector feeds a
//! two-layer classifier. The attention mass each token receives, averaged
//! over heads, is the importance vector.
//!
//! Tokens with a zero count are identical, so they are folded into one group
//! with a multiplicity. This is exact and keeps the cost proportional to the
//! number of non-zero features instead of `n^2`.

mod train;

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use train::{train, EpochLog, FcmhTrainConfig, Trained};

use crate::bag_of_features::{DEFAULT_TAU_LEN, N_FEATURES, TAU_STRIDE};
use crate::error::{Error, Result};
use crate::gbm::FeatureRow;

pub const FCMH_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_M_PERCENT: f64 = 24.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FcmhConfig {
    pub n_features: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub hidden: usize,
    pub dropout: f64,
    /// Multiplies raw counts before embedding. See [`input_scale_for`].
    pub input_scale: f64,
}

/// Count scale for `taus` tau-segments per channel: a channel whose segments
/// all fall in one cluster reaches `8`. Plain fractions left the tokens too
/// small for the classifier to pick up within a few epochs.
pub fn input_scale_for(taus: usize) -> f64 {
    8.0 / taus.max(1) as f64
}

impl Default for FcmhConfig {
    fn default() -> Self {
        FcmhConfig {
            n_features: N_FEATURES,
            embed_dim: 8,
            heads: 2,
            hidden: 64,
            dropout: 0.05,
            input_scale: input_scale_for(crate::bag_of_features::taus_per_channel(
                DEFAULT_TAU_LEN,
                TAU_STRIDE,
            )),
        }
    }
}

impl FcmhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("FCMH widths must be positive".into()));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embedding size {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let (n, d, h) = (self.n_features, self.embed_dim, self.hidden);
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at;
            at += len;
            r
        };
        Layout {
            emb: take(n * d),
            wq: take(d * d),
            bq: take(d),
            wk: take(d * d),
            bk: take(d),
            wv: take(d * d),
            bv: take(d),
            w1: take(h * n),
            b1: take(h),
            w2: take(2 * h),
            b2: take(2),
            total: at,
        }
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Clone, Copy, Debug)]
struct Layout {
    emb: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcmhModel {
    pub version: u32,
    pub config: FcmhConfig,
    /// Embedding `n x d`, then query/key/value weights `d x d` (out x in)
    /// with biases, then `W1` `hidden x n`, `b1`, `W2` `2 x hidden`, `b2`.
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcmhOutput {
    pub probabilities: [f64; 2],
    pub importance: Vec<f64>,
}

/// Intermediate values of one grouped forward pass.
struct Forward {
    /// Feature id and scaled value of each non-zero token; the zero group
    /// (if any) is the extra last token.
    tokens: Vec<(usize, f64)>,
    zeros: usize,
    t: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per head, `u x u` per-token attention weights.
    attn: Vec<Vec<f64>>,
    z: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    probs: [f64; 2],
}

impl Forward {
    fn n_unique(&self) -> usize {
        self.tokens.len() + usize::from(self.zeros > 0)
    }

    fn multiplicity(&self, i: usize) -> f64 {
        if i < self.tokens.len() {
            1.0
        } else {
            self.zeros as f64
        }
    }
}

impl FcmhModel {
    /// Uniform `+-1/sqrt(fan_in)` initialization.
    pub fn init(config: FcmhConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let l = config.layout();
        let (n, d, h) = (config.n_features, config.embed_dim, config.hidden);
        let mut params = vec![0.0; l.total];
        let blocks = [
            (l.emb, n * d, 1),
            (l.wq, d * d, d),
            (l.bq, d, d),
            (l.wk, d * d, d),
            (l.bk, d, d),
            (l.wv, d * d, d),
            (l.bv, d, d),
            (l.w1, h * n, n),
            (l.b1, h, n),
            (l.w2, 2 * h, h),
            (l.b2, 2, h),
        ];
        for (off, len, fan_in) in blocks {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[off..off + len] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(FcmhModel {
            version: FCMH_FORMAT_VERSION,
            config,
            params,
        })
    }

    pub fn from_params(config: FcmhConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.layout().total {
            return Err(Error::ModelIntegrity(format!(
                "expected {} parameters, got {}",
                config.layout().total,
                params.len()
            )));
        }
        Ok(FcmhModel {
            version: FCMH_FORMAT_VERSION,
            config,
            params,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Eval-mode class probabilities and importance vector.
    pub fn forward<X: FeatureRow + ?Sized>(&self, x: &X) -> Result<FcmhOutput> {
        let f = self.run(x, None)?;
        let importance = self.importance_from(&f);
        Ok(FcmhOutput {
            probabilities: f.probs,
            importance,
        })
    }

    /// Forward pass with dropout drawn from `rng`.
    pub fn forward_train<X: FeatureRow + ?Sized>(
        &self,
        x: &X,
        rng: &mut ChaCha8Rng,
    ) -> Result<FcmhOutput> {
        let mask = self.dropout_mask(rng);
        let f = self.run(x, Some(&mask))?;
        let importance = self.importance_from(&f);
        Ok(FcmhOutput {
            probabilities: f.probs,
            importance,
        })
    }

    pub fn importance<X: FeatureRow + ?Sized>(&self, x: &X) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.importance)
    }

    pub fn predict_proba<X: FeatureRow + ?Sized>(&self, x: &X) -> Result<f64> {
        Ok(self.forward(x)?.probabilities[1])
    }

    fn dropout_mask(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let p = self.config.dropout;
        let keep = 1.0 / (1.0 - p);
        (0..self.config.hidden)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect()
    }

    fn run<X: FeatureRow + ?Sized>(&self, x: &X, mask: Option<&[f64]>) -> Result<Forward> {
        let cfg = &self.config;
        if x.n_features() != cfg.n_features {
            return Err(Error::Usage(format!(
                "input has {} features, FCMH expects {}",
                x.n_features(),
                cfg.n_features
            )));
        }
        let l = cfg.layout();
        let p = &self.params;
        let (n, d, heads, hid) = (cfg.n_features, cfg.embed_dim, cfg.heads, cfg.hidden);
        let dh = d / heads;

        let tokens: Vec<(usize, f64)> = (0..n)
            .filter_map(|j| {
                let v = x.value(j);
                (v != 0.0).then_some((j, v * cfg.input_scale))
            })
            .collect();
        let zeros = n - tokens.len();
        let u = tokens.len() + usize::from(zeros > 0);

        let mut t = vec![0.0; u * d];
        for (i, &(j, xv)) in tokens.iter().enumerate() {
            for c in 0..d {
                t[i * d + c] = xv * p[l.emb + j * d + c];
            }
        }
        let project = |w: usize, b: usize| {
            let mut out = vec![0.0; u * d];
            for i in 0..u {
                let ti = &t[i * d..(i + 1) * d];
                for o in 0..d {
                    let row = &p[w + o * d..w + (o + 1) * d];
                    out[i * d + o] = p[b + o] + row.iter().zip(ti).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            out
        };
        let q = project(l.wq, l.bq);
        let k = project(l.wk, l.bk);
        let v = project(l.wv, l.bv);

        let mult = |i: usize| if i < tokens.len() { 1.0 } else { zeros as f64 };
        let scale = 1.0 / (dh as f64).sqrt();
        let mut attn = Vec::with_capacity(heads);
        // Residual: each token's own embedding plus what it attends to.
        let mut o = t.clone();
        let mut row = vec![0.0; u];
        for h in 0..heads {
            let mut a = vec![0.0; u * u];
            let hs = h * dh;
            for i in 0..u {
                let qi = &q[i * d + hs..i * d + hs + dh];
                let mut max = f64::NEG_INFINITY;
                for j in 0..u {
                    let kj = &k[j * d + hs..j * d + hs + dh];
                    let s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                    row[j] = s;
                    max = max.max(s);
                }
                let mut denom = 0.0;
                for j in 0..u {
                    row[j] = (row[j] - max).exp();
                    denom += mult(j) * row[j];
                }
                for j in 0..u {
                    let w = row[j] / denom;
                    a[i * u + j] = w;
                    let mw = mult(j) * w;
                    for c in 0..dh {
                        o[i * d + hs + c] += mw * v[j * d + hs + c];
                    }
                }
            }
            attn.push(a);
        }
        let z: Vec<f64> = (0..u)
            .map(|i| o[i * d..(i + 1) * d].iter().sum::<f64>() / d as f64)
            .collect();

        let mut pre: Vec<f64> = p[l.b1..l.b1 + hid].to_vec();
        let np = tokens.len();
        for (r, pr) in pre.iter_mut().enumerate() {
            let w1r = &p[l.w1 + r * n..l.w1 + (r + 1) * n];
            let mut acc = 0.0;
            let mut nz_sum = 0.0;
            for (i, &(j, _)) in tokens.iter().enumerate() {
                acc += w1r[j] * z[i];
                nz_sum += w1r[j];
            }
            if zeros > 0 {
                let total: f64 = w1r.iter().sum();
                acc += z[np] * (total - nz_sum);
            }
            *pr += acc;
        }
        let mut hidden: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
        if let Some(mask) = mask {
            for (hv, m) in hidden.iter_mut().zip(mask) {
                *hv *= m;
            }
        }
        let mut logits = [p[l.b2], p[l.b2 + 1]];
        for (c, lg) in logits.iter_mut().enumerate() {
            *lg += p[l.w2 + c * hid..l.w2 + (c + 1) * hid]
                .iter()
                .zip(&hidden)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        let probs = softmax2(logits);
        if !probs[0].is_finite() || !probs[1].is_finite() {
            return Err(Error::Training("FCMH forward pass produced a non-finite value".into()));
        }
        Ok(Forward {
            tokens,
            zeros,
            t,
            q,
            k,
            v,
            attn,
            z,
            pre,
            hidden,
            probs,
        })
    }

    fn importance_from(&self, f: &Forward) -> Vec<f64> {
        let n = self.config.n_features;
        let heads = self.config.heads;
        let u = f.n_unique();
        // Column mass per unique token, per member token.
        let mut col = vec![0.0; u];
        for a in &f.attn {
            for i in 0..u {
                let mi = f.multiplicity(i);
                for j in 0..u {
                    col[j] += mi * a[i * u + j];
                }
            }
        }
        let norm = 1.0 / (n as f64 * heads as f64);
        let zero_value = if f.zeros > 0 { col[f.tokens.len()] * norm } else { 0.0 };
        let mut imp = vec![zero_value; n];
        for (i, &(j, _)) in f.tokens.iter().enumerate() {
            imp[j] = col[i] * norm;
        }
        imp
    }

    /// Cross-entropy of one example and its gradient, accumulated into `grad`
    /// (`grad` must have [`FcmhModel::n_params`] entries). `mask` is the
    /// dropout mask; `None` disables dropout.
    pub fn accumulate_gradient<X: FeatureRow + ?Sized>(
        &self,
        x: &X,
        label: bool,
        mask: Option<&[f64]>,
        grad: &mut GradientBuffer,
    ) -> Result<f64> {
        let f = self.run(x, mask)?;
        let cfg = &self.config;
        let l = cfg.layout();
        let p = &self.params;
        let (n, d, heads, hid) = (cfg.n_features, cfg.embed_dim, cfg.heads, cfg.hidden);
        let dh = d / heads;
        let u = f.n_unique();
        let np = f.tokens.len();
        let y = usize::from(label);
        let loss = -f.probs[y].max(f64::MIN_POSITIVE).ln();
        let g = &mut grad.dense;

        // Softmax + cross-entropy.
        let mut dlogits = f.probs;
        dlogits[y] -= 1.0;
        let mut dhidden = vec![0.0; hid];
        for c in 0..2 {
            g[l.b2 + c] += dlogits[c];
            for r in 0..hid {
                g[l.w2 + c * hid + r] += dlogits[c] * f.hidden[r];
                dhidden[r] += dlogits[c] * p[l.w2 + c * hid + r];
            }
        }
        let mut dpre = vec![0.0; hid];
        for r in 0..hid {
            if f.pre[r] > 0.0 {
                dpre[r] = dhidden[r] * mask.map_or(1.0, |m| m[r]);
            }
        }

        // First linear layer; zero-token columns share z and get a broadcast
        // update, corrected on the non-zero columns.
        let mut dz = vec![0.0; u];
        let z0 = if f.zeros > 0 { f.z[np] } else { 0.0 };
        for r in 0..hid {
            let dr = dpre[r];
            g[l.b1 + r] += dr;
            if dr == 0.0 {
                continue;
            }
            let w1r = &p[l.w1 + r * n..l.w1 + (r + 1) * n];
            let mut nz_sum = 0.0;
            for (i, &(j, _)) in f.tokens.iter().enumerate() {
                g[l.w1 + r * n + j] += dr * (f.z[i] - z0);
                dz[i] += dr * w1r[j];
                nz_sum += w1r[j];
            }
            if f.zeros > 0 {
                grad.w1_broadcast[r] += dr * z0;
                let total: f64 = w1r.iter().sum();
                dz[np] += dr * (total - nz_sum);
            }
        }

        // Mean pooling over the embedding dimension.
        let do_: Vec<f64> = (0..u * d).map(|idx| dz[idx / d] / d as f64).collect();

        // Attention, per head, with key multiplicities.
        let mult = |i: usize| f.multiplicity(i);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = vec![0.0; u * d];
        let mut dk = vec![0.0; u * d];
        let mut dv = vec![0.0; u * d];
        let mut gij = vec![0.0; u];
        for (h, a) in f.attn.iter().enumerate() {
            let hs = h * dh;
            for i in 0..u {
                let gi = &do_[i * d + hs..i * d + hs + dh];
                let mut weighted = 0.0;
                for j in 0..u {
                    let vj = &f.v[j * d + hs..j * d + hs + dh];
                    gij[j] = gi.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                    weighted += mult(j) * a[i * u + j] * gij[j];
                }
                for j in 0..u {
                    let aij = a[i * u + j];
                    let mj = mult(j);
                    for c in 0..dh {
                        dv[j * d + hs + c] += mj * aij * gi[c];
                    }
                    let ds = mj * aij * (gij[j] - weighted) * scale;
                    for c in 0..dh {
                        dq[i * d + hs + c] += ds * f.k[j * d + hs + c];
                        dk[j * d + hs + c] += ds * f.q[i * d + hs + c];
                    }
                }
            }
        }

        // Projections back to tokens and embeddings; the residual path
        // passes the pooled gradient straight through.
        let mut dt = do_.clone();
        for (w, b, dy) in [(l.wq, l.bq, &dq), (l.wk, l.bk, &dk), (l.wv, l.bv, &dv)] {
            for i in 0..u {
                let ti = &f.t[i * d..(i + 1) * d];
                for o in 0..d {
                    let go = dy[i * d + o];
                    if go == 0.0 {
                        continue;
                    }
                    g[b + o] += go;
                    for c in 0..d {
                        g[w + o * d + c] += go * ti[c];
                        dt[i * d + c] += go * p[w + o * d + c];
                    }
                }
            }
        }
        for (i, &(j, xv)) in f.tokens.iter().enumerate() {
            for c in 0..d {
                g[l.emb + j * d + c] += xv * dt[i * d + c];
            }
        }
        Ok(loss)
    }

    pub fn new_gradient(&self) -> GradientBuffer {
        GradientBuffer {
            dense: vec![0.0; self.params.len()],
            w1_broadcast: vec![0.0; self.config.hidden],
        }
    }

    /// Dense gradient with the broadcast term folded in.
    pub fn finish_gradient(&self, grad: &mut GradientBuffer) {
        let l = self.config.layout();
        let n = self.config.n_features;
        for (r, b) in grad.w1_broadcast.iter_mut().enumerate() {
            if *b != 0.0 {
                for gv in &mut grad.dense[l.w1 + r * n..l.w1 + (r + 1) * n] {
                    *gv += *b;
                }
                *b = 0.0;
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: FcmhModel = serde_json::from_str(text)?;
        if m.version != FCMH_FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "FCMH format version {} is not supported (expected {FCMH_FORMAT_VERSION})",
                m.version
            )));
        }
        FcmhModel::from_params(m.config, m.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FcmhModel::from_json(&text)
    }
}

/// Gradient accumulator; call [`FcmhModel::finish_gradient`] before reading
/// `dense`.
#[derive(Clone, Debug)]
pub struct GradientBuffer {
    pub dense: Vec<f64>,
    w1_broadcast: Vec<f64>,
}

impl GradientBuffer {
    pub fn clear(&mut self) {
        self.dense.iter_mut().for_each(|g| *g = 0.0);
        self.w1_broadcast.iter_mut().for_each(|g| *g = 0.0);
    }
}

fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small(n: usize, d: usize, heads: usize) -> FcmhModel {
        let cfg = FcmhConfig {
            n_features: n,
            embed_dim: d,
            heads,
            hidden: 5,
            dropout: 0.05,
            input_scale: 0.5,
        };
        FcmhModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    /// Straightforward all-token implementation used as an oracle.
    fn dense_forward(m: &FcmhModel, x: &[f64]) -> ([f64; 2], Vec<f64>) {
        let cfg = &m.config;
        let l = cfg.layout();
        let p = &m.params;
        let (n, d, heads, hid) = (cfg.n_features, cfg.embed_dim, cfg.heads, cfg.hidden);
        let dh = d / heads;
        let t: Vec<Vec<f64>> = (0..n)
            .map(|j| (0..d).map(|c| x[j] * cfg.input_scale * p[l.emb + j * d + c]).collect())
            .collect();
        let proj = |w: usize, b: usize| -> Vec<Vec<f64>> {
            t.iter()
                .map(|ti| {
                    (0..d)
                        .map(|o| p[b + o] + (0..d).map(|c| p[w + o * d + c] * ti[c]).sum::<f64>())
                        .collect()
                })
                .collect()
        };
        let (q, k, v) = (proj(l.wq, l.bq), proj(l.wk, l.bk), proj(l.wv, l.bv));
        let mut o = t.clone();
        let mut imp = vec![0.0; n];
        for h in 0..heads {
            for i in 0..n {
                let s: Vec<f64> = (0..n)
                    .map(|j| {
                        (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
                let tot: f64 = e.iter().sum();
                for j in 0..n {
                    let a = e[j] / tot;
                    imp[j] += a / (n * heads) as f64;
                    for c in 0..dh {
                        o[i][h * dh + c] += a * v[j][h * dh + c];
                    }
                }
            }
        }
        let z: Vec<f64> = o.iter().map(|r| r.iter().sum::<f64>() / d as f64).collect();
        let hidden: Vec<f64> = (0..hid)
            .map(|r| (p[l.b1 + r] + (0..n).map(|j| p[l.w1 + r * n + j] * z[j]).sum::<f64>()).max(0.0))
            .collect();
        let logits = [0, 1].map(|c| {
            p[l.b2 + c] + (0..hid).map(|r| p[l.w2 + c * hid + r] * hidden[r]).sum::<f64>()
        });
        (softmax2(logits), imp)
    }

    #[test]
    fn grouped_forward_matches_dense_oracle() {
        let m = small(9, 4, 2);
        for x in [
            vec![0.0; 9],
            vec![3.0, 0.0, 0.0, 1.0, 0.0, 7.0, 0.0, 0.0, 2.0],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        ] {
            let out = m.forward(&x).unwrap();
            let (probs, imp) = dense_forward(&m, &x);
            assert!((out.probabilities[1] - probs[1]).abs() < 1e-12);
            for j in 0..9 {
                assert!((out.importance[j] - imp[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn importance_is_a_distribution() {
        let m = FcmhModel::init(FcmhConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let zero = vec![0.0; N_FEATURES];
        let out = m.forward(&zero).unwrap();
        for &v in &out.importance {
            assert!((v - 1.0 / N_FEATURES as f64).abs() < 1e-15);
        }
        let mut x = zero;
        x[17] = 5.0;
        x[900] = 30.0;
        x[2399] = 1.0;
        let out = m.forward(&x).unwrap();
        let total: f64 = out.importance.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(out.importance.iter().all(|&v| v >= 0.0));
        assert!((out.probabilities[0] + out.probabilities[1] - 1.0).abs() < 1e-9);
        assert_eq!(out, m.forward(&x).unwrap());
    }

    #[test]
    fn width_mismatch() {
        let m = small(6, 2, 2);
        assert!(matches!(m.forward(&vec![0.0; 5]), Err(Error::Usage(_))));
    }

    fn loss_at(m: &FcmhModel, x: &[f64], y: bool) -> f64 {
        let mut g = m.new_gradient();
        m.accumulate_gradient(x, y, None, &mut g).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = small(6, 2, 2);
        let x = vec![2.0, 0.0, 1.0, 0.0, 0.0, 3.0];
        for label in [false, true] {
            let mut g = m.new_gradient();
            m.accumulate_gradient(&x, label, None, &mut g).unwrap();
            m.finish_gradient(&mut g);
            let mut worst: f64 = 0.0;
            for i in 0..m.n_params() {
                let h = 1e-6;
                let mut plus = m.clone();
                plus.params[i] += h;
                let mut minus = m.clone();
                minus.params[i] -= h;
                let fd = (loss_at(&plus, &x, label) - loss_at(&minus, &x, label)) / (2.0 * h);
                let an = g.dense[i];
                let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-6);
                worst = worst.max(rel);
            }
            assert!(worst <= 1e-4, "max relative error {worst}");
        }
    }

    #[test]
    fn json_round_trip() {
        let m = small(6, 2, 1);
        let back = FcmhModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
