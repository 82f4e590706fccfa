use serde::{Deserialize, Serialize};

use super::FeatureRow;
use crate::error::{Error, Result};

/// A node of a regression tree stored in preorder. Samples with
/// `x[feature] < threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
        cover: f64,
    },
    Leaf {
        value: f64,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match *self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => cover,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Builds a tree from preorder nodes, checking links and covers.
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        let tree = Tree { nodes };
        tree.validate()?;
        Ok(tree)
    }

    pub(crate) fn from_nodes_unchecked(nodes: Vec<Node>) -> Self {
        Tree { nodes }
    }

    pub fn single_leaf(value: f64, cover: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value, cover }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    /// Every split must point forward to existing children whose covers sum
    /// to its own; every cover must be positive.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::ModelIntegrity("tree has no nodes".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !(node.cover() > 0.0) {
                return Err(Error::ModelIntegrity(format!(
                    "node {i} has non-positive cover {}",
                    node.cover()
                )));
            }
            if let Node::Split {
                left, right, cover, ..
            } = *node
            {
                let (l, r) = (left as usize, right as usize);
                if l <= i || r <= i || l >= self.nodes.len() || r >= self.nodes.len() {
                    return Err(Error::ModelIntegrity(format!(
                        "node {i} has invalid children {l}, {r}"
                    )));
                }
                let sum = self.nodes[l].cover() + self.nodes[r].cover();
                if (sum - cover).abs() > 1e-9 * cover.abs().max(1.0) {
                    return Err(Error::ModelIntegrity(format!(
                        "node {i} cover {cover} differs from children sum {sum}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn predict<X: FeatureRow + ?Sized>(&self, x: &X) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x.value(feature as usize) < threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(t, left as usize).max(walk(t, right as usize))
                }
            }
        }
        walk(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Cover-weighted mean of the leaf values.
    pub fn expected_value(&self) -> f64 {
        let total = self.nodes[0].cover();
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Leaf { value, cover } => Some(value * cover),
                _ => None,
            })
            .sum::<f64>()
            / total
    }
}
