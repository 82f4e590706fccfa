use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FcmhConfig, FcmhModel};
use crate::error::{Error, Result};
use crate::gbm::FeatureRow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FcmhTrainConfig {
    pub model: FcmhConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Largest L2 norm of a batch-mean gradient step; zero disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for FcmhTrainConfig {
    fn default() -> Self {
        FcmhTrainConfig {
            model: FcmhConfig::default(),
            learning_rate: 0.3,
            epochs: 30,
            batch_size: 16,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

/// One row of the training log. Accuracy is counted on the training
/// passes of the epoch, dropout included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub model: FcmhModel,
    pub log: Vec<EpochLog>,
}

/// Minibatch SGD on mean cross-entropy. Initialization, shuffling and
/// dropout all draw from one seeded stream.
pub fn train<X: FeatureRow>(x: &[X], y: &[bool], cfg: &FcmhTrainConfig) -> Result<Trained> {
    if x.len() != y.len() {
        return Err(Error::Usage(format!("{} rows but {} labels", x.len(), y.len())));
    }
    if !y.iter().any(|&b| b) || y.iter().all(|&b| b) {
        return Err(Error::Training("FCMH training labels contain a single class".into()));
    }
    if !(cfg.learning_rate >= 0.0) || cfg.batch_size == 0 || !(cfg.clip_norm >= 0.0) {
        return Err(Error::Config(
            "learning rate and clip norm must be non-negative and batch size positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = FcmhModel::init(cfg.model.clone(), &mut rng)?;
    let mut grad = model.new_gradient();
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            grad.clear();
            for &i in batch {
                let mask = model.dropout_mask(&mut rng);
                let loss = model.accumulate_gradient(&x[i], y[i], Some(&mask), &mut grad)?;
                if !loss.is_finite() {
                    return Err(Error::Training(format!(
                        "FCMH loss diverged at epoch {epoch} (row {i}); lower the learning rate"
                    )));
                }
                total += loss;
                // Cross-entropy below ln 2 means the true class got p > 0.5.
                if loss < std::f64::consts::LN_2 {
                    correct += 1;
                }
            }
            model.finish_gradient(&mut grad);
            let mut step = cfg.learning_rate / batch.len() as f64;
            if cfg.clip_norm > 0.0 {
                let norm = grad.dense.iter().map(|g| g * g).sum::<f64>().sqrt() / batch.len() as f64;
                if norm > cfg.clip_norm {
                    step *= cfg.clip_norm / norm;
                }
            }
            for (p, g) in model.params.iter_mut().zip(&grad.dense) {
                *p -= step * g;
            }
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training(format!(
                "FCMH weights became non-finite at epoch {epoch}"
            )));
        }
        log.push(EpochLog {
            epoch,
            loss: total / x.len() as f64,
            accuracy: correct as f64 / x.len() as f64,
        });
    }
    Ok(Trained { model, log })
}
