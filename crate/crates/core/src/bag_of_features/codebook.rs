use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kmeans;
use super::{extract_tau, BofConfig, TauSegment};
use crate::error::{Error, Result};
use crate::telemetry::{Mnemonic, Segment, N_CHANNELS};

pub const CODEBOOK_FORMAT_VERSION: u32 = 1;

/// Cluster centroids for one channel, in z-normalized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub channel: Mnemonic,
    pub mean: f64,
    pub std: f64,
    /// One row per cluster, each `tau_len` long.
    pub centroids: Vec<Vec<f64>>,
    /// Dimension-major copy of `centroids` for the assignment scan.
    #[serde(skip)]
    transposed: Vec<f64>,
}

impl Codebook {
    pub fn new(channel: Mnemonic, mean: f64, std: f64, centroids: Vec<Vec<f64>>) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::Training(format!(
                "{channel}: normalization std must be positive, got {std}"
            )));
        }
        let dim = centroids.first().map_or(0, Vec::len);
        if dim == 0 || centroids.iter().any(|c| c.len() != dim) {
            return Err(Error::Training(format!(
                "{channel}: centroids must share a non-zero length"
            )));
        }
        let flat: Vec<f64> = centroids.iter().flatten().copied().collect();
        let transposed = kmeans::transpose(&flat, dim);
        Ok(Codebook {
            channel,
            mean,
            std,
            centroids,
            transposed,
        })
    }

    pub fn tau_len(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn normalize(&self, values: &[f64]) -> Vec<f64> {
        let inv = 1.0 / self.std;
        values.iter().map(|v| (v - self.mean) * inv).collect()
    }

    /// Nearest centroid by Euclidean distance on normalized values, lowest
    /// id on ties.
    pub fn assign(&self, tau: &TauSegment) -> Result<usize> {
        if tau.channel != self.channel {
            return Err(Error::Usage(format!(
                "tau-segment of {} assigned with the {} codebook",
                tau.channel, self.channel
            )));
        }
        if tau.len() != self.tau_len() {
            return Err(Error::Usage(format!(
                "tau-segment length {} differs from codebook length {}",
                tau.len(),
                self.tau_len()
            )));
        }
        let mut buf = vec![0.0; tau.len() + self.k()];
        Ok(self.assign_raw(&tau.values, &mut buf))
    }

    /// Assignment of already-normalized values.
    pub fn assign_normalized(&self, normalized: &[f64]) -> usize {
        let mut acc = vec![0.0; self.k()];
        kmeans::nearest_transposed(normalized, &self.transposed, &mut acc).0
    }

    /// `buf` holds `tau_len + k` scratch values.
    pub(crate) fn assign_raw(&self, values: &[f64], buf: &mut [f64]) -> usize {
        let inv = 1.0 / self.std;
        let (norm, acc) = buf.split_at_mut(values.len());
        for (b, v) in norm.iter_mut().zip(values) {
            *b = (v - self.mean) * inv;
        }
        kmeans::nearest_transposed(norm, &self.transposed, &mut acc[..self.k()]).0
    }
}

/// The twelve per-channel codebooks plus the tau configuration they were
/// trained with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebooks {
    pub version: u32,
    pub config: BofConfig,
    pub seed: u64,
    /// Canonical mnemonic order.
    pub books: Vec<Codebook>,
}

impl Codebooks {
    pub fn new(config: BofConfig, seed: u64, books: Vec<Codebook>) -> Result<Self> {
        if books.len() != N_CHANNELS {
            return Err(Error::Usage(format!(
                "codebooks must cover {N_CHANNELS} channels, got {}",
                books.len()
            )));
        }
        for (m, b) in Mnemonic::ALL.iter().zip(&books) {
            if b.channel != *m || b.tau_len() != config.tau_len {
                return Err(Error::Usage(format!(
                    "codebook for {} is out of order or has the wrong tau length",
                    b.channel
                )));
            }
        }
        Ok(Codebooks {
            version: CODEBOOK_FORMAT_VERSION,
            config,
            seed,
            books,
        })
    }

    pub fn config(&self) -> &BofConfig {
        &self.config
    }

    pub fn get(&self, m: Mnemonic) -> &Codebook {
        &self.books[m.index()]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let books: Codebooks = serde_json::from_str(text)?;
        if books.version != CODEBOOK_FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "codebook format version {} is not supported (expected {CODEBOOK_FORMAT_VERSION})",
                books.version
            )));
        }
        // Rebuild each book so derived lookup tables are restored.
        let rebuilt = books
            .books
            .into_iter()
            .map(|b| Codebook::new(b.channel, b.mean, b.std, b.centroids))
            .collect::<Result<Vec<_>>>()?;
        Codebooks::new(books.config, books.seed, rebuilt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Codebooks::from_json(&text)
    }
}

/// Fits one k-means codebook per channel on the tau-segments of `corpus`.
///
/// Each channel draws from its own ChaCha stream of `seed`, so results do
/// not depend on channel processing order.
pub fn train_codebooks(corpus: &[Segment<'_>], cfg: &BofConfig, seed: u64) -> Result<Codebooks> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Training("codebook corpus is empty".into()));
    }
    let mut per_channel: Vec<Vec<f64>> = vec![Vec::new(); N_CHANNELS];
    for seg in corpus {
        for (c, taus) in extract_tau(seg, cfg.tau_len, cfg.stride)?
            .into_iter()
            .enumerate()
        {
            for tau in taus {
                per_channel[c].extend_from_slice(&tau.values);
            }
        }
    }

    let dim = cfg.tau_len;
    let mut books = Vec::with_capacity(N_CHANNELS);
    for (m, mut points) in Mnemonic::ALL.iter().copied().zip(per_channel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(m.index() as u64 + 1);
        let n = points.len() / dim;
        if let Some(cap) = cfg.max_corpus_per_channel {
            if n > cap {
                let mut picked = rand::seq::index::sample(&mut rng, n, cap).into_vec();
                picked.sort_unstable();
                let mut kept = Vec::with_capacity(cap * dim);
                for i in picked {
                    kept.extend_from_slice(&points[i * dim..(i + 1) * dim]);
                }
                points = kept;
            }
        }
        let count = points.len() as f64;
        let mean = points.iter().sum::<f64>() / count;
        let var = points.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::Training(format!("{m}: channel is constant in the corpus")));
        }
        let inv = 1.0 / std;
        for v in points.iter_mut() {
            *v = (*v - mean) * inv;
        }
        let fit = kmeans::kmeans(&points, dim, cfg.clusters, cfg.max_iter, &mut rng)
            .map_err(|e| Error::Training(format!("{m}: {e}")))?;
        let centroids = fit.centroids.chunks_exact(dim).map(<[f64]>::to_vec).collect();
        books.push(Codebook::new(m, mean, std, centroids)?);
    }
    Codebooks::new(cfg.clone(), seed, books)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn book(centroids: Vec<Vec<f64>>) -> Codebook {
        Codebook::new(Mnemonic::Tqa, 0.0, 1.0, centroids).unwrap()
    }

    fn tau(values: Vec<f64>) -> TauSegment {
        TauSegment {
            channel: Mnemonic::Tqa,
            start: 0,
            values,
        }
    }

    #[test]
    fn assign_nearest_and_ties() {
        let b = book(vec![vec![0.0], vec![10.0]]);
        assert_eq!(b.assign(&tau(vec![4.0])).unwrap(), 0);
        assert_eq!(b.assign(&tau(vec![6.0])).unwrap(), 1);

        let cents: Vec<Vec<f64>> = (0..10)
            .map(|i| match i {
                3 => vec![-1.0],
                9 => vec![1.0],
                _ => vec![100.0 + i as f64],
            })
            .collect();
        let b = book(cents);
        assert_eq!(b.assign(&tau(vec![0.0])).unwrap(), 3);
        assert_eq!(b.assign(&tau(vec![100.0 + 7.0])).unwrap(), 7);
    }

    #[test]
    fn channel_mismatch_is_usage_error() {
        let b = book(vec![vec![0.0]]);
        let t = TauSegment {
            channel: Mnemonic::Hkla,
            start: 0,
            values: vec![0.0],
        };
        assert!(matches!(b.assign(&t), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_std_rejected() {
        assert!(Codebook::new(Mnemonic::Tqa, 0.0, 0.0, vec![vec![0.0]]).is_err());
    }
}
