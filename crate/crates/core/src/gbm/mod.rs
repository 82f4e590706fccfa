//! Gradient boosted decision trees for binary accident alarms.
//!
//! The model output is the log-odds `const + sum_i gamma_i * h_i(x)` and the
//! alarm probability is its logistic transform. Trees are grown with exact
//! greedy second-order splits on the weighted logistic loss.

mod train;
mod tree;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use train::{train, train_with_trace, TrainTrace};
pub use tree::{Node, Tree};

use crate::bag_of_features::FeatureVector;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Read access to one feature row.
pub trait FeatureRow {
    fn n_features(&self) -> usize;
    fn value(&self, j: usize) -> f64;
}

impl FeatureRow for [f64] {
    fn n_features(&self) -> usize {
        self.len()
    }

    fn value(&self, j: usize) -> f64 {
        self[j]
    }
}

impl FeatureRow for Vec<f64> {
    fn n_features(&self) -> usize {
        self.len()
    }

    fn value(&self, j: usize) -> f64 {
        self[j]
    }
}

impl FeatureRow for FeatureVector {
    fn n_features(&self) -> usize {
        self.len()
    }

    fn value(&self, j: usize) -> f64 {
        f64::from(self[j])
    }
}

/// Boosting hyperparameters. Defaults follow the production alarm model;
/// `lambda` and `min_child_weight` are the usual boosted-tree defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub positive_weight: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            estimators: 250,
            learning_rate: 0.05,
            max_depth: 10,
            subsample: 0.9,
            colsample_bytree: 0.9,
            positive_weight: 5.0,
            lambda: 1.0,
            min_child_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rate = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")))
            }
        };
        rate("learning_rate", self.learning_rate)?;
        rate("subsample", self.subsample)?;
        rate("colsample_bytree", self.colsample_bytree)?;
        if !(self.positive_weight > 0.0) {
            return Err(Error::Config("positive_weight must be positive".into()));
        }
        if self.lambda < 0.0 || self.min_child_weight < 0.0 {
            return Err(Error::Config(
                "lambda and min_child_weight must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Sparse row-major feature matrix; absent entries are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_features: usize,
    rows: Vec<Vec<(u32, f64)>>,
}

impl SparseMatrix {
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n_features = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_features) {
            return Err(Error::Usage("rows have differing widths".into()));
        }
        Ok(SparseMatrix {
            n_features,
            rows: rows
                .iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .filter(|(_, &v)| v != 0.0)
                        .map(|(j, &v)| (j as u32, v))
                        .collect()
                })
                .collect(),
        })
    }

    pub fn from_features<'a, I>(rows: I) -> Self
    where
        I: IntoIterator<Item = &'a FeatureVector>,
    {
        let rows: Vec<Vec<(u32, f64)>> = rows
            .into_iter()
            .map(|fv| fv.nonzero().map(|(j, c)| (j as u32, f64::from(c))).collect())
            .collect();
        SparseMatrix {
            n_features: crate::bag_of_features::N_FEATURES,
            rows,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> SparseRow<'_> {
        SparseRow {
            n_features: self.n_features,
            entries: &self.rows[i],
        }
    }

    pub(crate) fn raw_rows(&self) -> &[Vec<(u32, f64)>] {
        &self.rows
    }
}

/// Borrowed sparse row with sorted feature ids.
#[derive(Clone, Copy, Debug)]
pub struct SparseRow<'a> {
    n_features: usize,
    entries: &'a [(u32, f64)],
}

impl FeatureRow for SparseRow<'_> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn value(&self, j: usize) -> f64 {
        match self.entries.binary_search_by_key(&(j as u32), |e| e.0) {
            Ok(k) => self.entries[k].1,
            Err(_) => 0.0,
        }
    }
}

/// Numerically stable logistic function, kept strictly inside (0, 1).
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Additive tree ensemble on the log-odds scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub version: u32,
    pub config: TrainConfig,
    pub n_features: usize,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub tree_weights: Vec<f64>,
}

impl GbmModel {
    /// Assembles a model from parts, validating every tree.
    pub fn new(
        n_features: usize,
        base_score: f64,
        trees: Vec<Tree>,
        tree_weights: Vec<f64>,
    ) -> Result<Self> {
        if trees.len() != tree_weights.len() {
            return Err(Error::ModelIntegrity(
                "one weight per tree is required".into(),
            ));
        }
        for t in &trees {
            t.validate()?;
            for node in t.nodes() {
                if let Node::Split { feature, .. } = node {
                    if *feature as usize >= n_features {
                        return Err(Error::ModelIntegrity(format!(
                            "split on feature {feature} outside width {n_features}"
                        )));
                    }
                }
            }
        }
        Ok(GbmModel {
            version: MODEL_FORMAT_VERSION,
            config: TrainConfig::default(),
            n_features,
            base_score,
            trees,
            tree_weights,
        })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    fn check_width<X: FeatureRow + ?Sized>(&self, x: &X) -> Result<()> {
        if x.n_features() != self.n_features {
            return Err(Error::Usage(format!(
                "input has {} features, model expects {}",
                x.n_features(),
                self.n_features
            )));
        }
        Ok(())
    }

    pub fn predict_logit<X: FeatureRow + ?Sized>(&self, x: &X) -> Result<f64> {
        self.check_width(x)?;
        Ok(self.logit_unchecked(x))
    }

    pub fn predict_proba<X: FeatureRow + ?Sized>(&self, x: &X) -> Result<f64> {
        Ok(sigmoid(self.predict_logit(x)?))
    }

    pub(crate) fn logit_unchecked<X: FeatureRow + ?Sized>(&self, x: &X) -> f64 {
        self.base_score
            + self
                .trees
                .iter()
                .zip(&self.tree_weights)
                .map(|(t, w)| w * t.predict(x))
                .sum::<f64>()
    }

    /// Features referenced by at least one split.
    pub fn used_features(&self) -> BTreeSet<usize> {
        self.trees
            .iter()
            .flat_map(|t| t.nodes())
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature as usize),
                _ => None,
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: GbmModel = serde_json::from_str(text)?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                model.version
            )));
        }
        let config = model.config.clone();
        let mut checked = GbmModel::new(
            model.n_features,
            model.base_score,
            model.trees,
            model.tree_weights,
        )?;
        checked.config = config;
        Ok(checked)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GbmModel::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump(feature: u32, threshold: f64, lo: f64, hi: f64) -> Tree {
        Tree::new(vec![
            Node::Split {
                feature,
                threshold,
                left: 1,
                right: 2,
                cover: 2.0,
            },
            Node::Leaf {
                value: lo,
                cover: 1.0,
            },
            Node::Leaf {
                value: hi,
                cover: 1.0,
            },
        ])
        .unwrap()
    }

    #[test]
    fn empty_model_logit_is_const() {
        let m = GbmModel::new(3, 0.0, vec![], vec![]).unwrap();
        assert_eq!(m.predict_logit(&vec![1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn single_tree_arithmetic() {
        let m = GbmModel::new(1, -1.0, vec![Tree::single_leaf(2.0, 1.0)], vec![0.05]).unwrap();
        let logit = m.predict_logit(&vec![0.0]).unwrap();
        assert!((logit - -0.9).abs() < 1e-15);
    }

    #[test]
    fn width_mismatch_is_usage_error() {
        let m = GbmModel::new(2, 0.0, vec![stump(1, 0.5, -1.0, 1.0)], vec![1.0]).unwrap();
        assert!(matches!(m.predict_logit(&vec![1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        let p = sigmoid(25.0);
        assert!(p < 1.0 && 1.0 - p < 1e-9);
        assert!(sigmoid(800.0) < 1.0 && sigmoid(-800.0) > 0.0);
        // d/dz sigmoid = p (1 - p), checked by central differences.
        for z in [-4.0, -0.3, 0.0, 1.7, 6.0] {
            let h = 1e-5;
            let fd = (sigmoid(z + h) - sigmoid(z - h)) / (2.0 * h);
            let p = sigmoid(z);
            assert!((fd - p * (1.0 - p)).abs() < 1e-9, "z={z}");
        }
    }

    #[test]
    fn rejects_broken_covers() {
        let nodes = vec![
            Node::Split {
                feature: 0,
                threshold: 0.5,
                left: 1,
                right: 2,
                cover: 3.0,
            },
            Node::Leaf {
                value: 0.0,
                cover: 1.0,
            },
            Node::Leaf {
                value: 0.0,
                cover: 1.0,
            },
        ];
        assert!(matches!(Tree::new(nodes), Err(Error::ModelIntegrity(_))));
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let m = GbmModel::new(
            2,
            0.123456789012345,
            vec![stump(0, 0.1 + 0.2, -1.0 / 3.0, 2.0 / 7.0), stump(1, 1e-7, 0.5, -0.25)],
            vec![0.05, 0.05],
        )
        .unwrap();
        let back = GbmModel::from_json(&m.to_json().unwrap()).unwrap();
        for x in [[0.0, 0.0], [0.3, 1.0], [0.30000000000000004, 1e-7]] {
            assert_eq!(
                m.predict_logit(&x[..]).unwrap().to_bits(),
                back.predict_logit(&x[..]).unwrap().to_bits()
            );
        }
    }
}
