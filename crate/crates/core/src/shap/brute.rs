use super::Attribution;
use crate::error::{Error, Result};
use crate::gbm::{FeatureRow, GbmModel, Node, Tree};

pub const MAX_BRUTE_FORCE_FEATURES: usize = 20;

/// Exact Shapley values by subset enumeration, used as a test oracle.
///
/// `v(S)` walks each tree following `x` on features in `S` and averaging
/// children by cover elsewhere. Every feature the model splits on must be in
/// `scope`.
pub fn brute_force_shapley<X: FeatureRow + ?Sized>(
    model: &GbmModel,
    x: &X,
    scope: &[usize],
) -> Result<Attribution> {
    if scope.len() > MAX_BRUTE_FORCE_FEATURES {
        return Err(Error::Capacity(format!(
            "{} features in scope exceed the enumeration limit of {MAX_BRUTE_FORCE_FEATURES}",
            scope.len()
        )));
    }
    if x.n_features() != model.n_features {
        return Err(Error::Usage(format!(
            "input has {} features, model expects {}",
            x.n_features(),
            model.n_features
        )));
    }
    if let Some(f) = model.used_features().into_iter().find(|f| !scope.contains(f)) {
        return Err(Error::Usage(format!("feature {f} is used by the model but not in scope")));
    }

    let n = scope.len();
    let value = |mask: u32| -> f64 {
        model.base_score
            + model
                .trees
                .iter()
                .zip(&model.tree_weights)
                .map(|(t, w)| w * conditional(t, 0, x, scope, mask))
                .sum::<f64>()
    };
    let values: Vec<f64> = (0..1u32 << n).map(value).collect();

    // Shapley weight |S|! (n - |S| - 1)! / n!, indexed by |S|.
    let mut fact = vec![1.0f64; n + 1];
    for i in 1..=n {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..n.max(1))
        .map(|s| fact[s] * fact[n.saturating_sub(s + 1)] / fact[n])
        .collect();

    let mut phi = vec![0.0; model.n_features];
    for (k, &feature) in scope.iter().enumerate() {
        let bit = 1u32 << k;
        let mut total = 0.0;
        for mask in 0..1u32 << n {
            if mask & bit == 0 {
                total += weight[mask.count_ones() as usize] * (values[(mask | bit) as usize] - values[mask as usize]);
            }
        }
        phi[feature] += total;
    }
    Ok(Attribution {
        base_value: values[0],
        values: phi,
    })
}

fn conditional<X: FeatureRow + ?Sized>(
    tree: &Tree,
    node: usize,
    x: &X,
    scope: &[usize],
    mask: u32,
) -> f64 {
    match *tree.node(node) {
        Node::Leaf { value, .. } => value,
        Node::Split {
            feature,
            threshold,
            left,
            right,
            cover,
        } => {
            let present = scope
                .iter()
                .position(|&f| f == feature as usize)
                .is_some_and(|k| mask & (1 << k) != 0);
            if present {
                let next = if x.value(feature as usize) < threshold { left } else { right };
                conditional(tree, next as usize, x, scope, mask)
            } else {
                let (l, r) = (left as usize, right as usize);
                (tree.node(l).cover() * conditional(tree, l, x, scope, mask)
                    + tree.node(r).cover() * conditional(tree, r, x, scope, mask))
                    / cover
            }
        }
    }
}
