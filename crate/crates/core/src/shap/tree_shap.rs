//! Path-dependent tree Shapley values (polynomial-time recursion over
//! decision paths with extend/unwind of the subset-weight polynomial).

use crate::gbm::{FeatureRow, Node, Tree};

#[derive(Clone, Copy, Debug)]
struct PathElement {
    feature: i64,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

/// Adds this tree's attributions, scaled by `scale`, into `phi`.
pub(crate) fn tree_contributions<X: FeatureRow + ?Sized>(
    tree: &Tree,
    x: &X,
    scale: f64,
    phi: &mut [f64],
) {
    let mut path = Vec::with_capacity(32);
    recurse(tree, x, 0, &mut path, 1.0, 1.0, -1, scale, phi);
}

#[allow(clippy::too_many_arguments)]
fn recurse<X: FeatureRow + ?Sized>(
    tree: &Tree,
    x: &X,
    node: usize,
    parent_path: &[PathElement],
    zero_fraction: f64,
    one_fraction: f64,
    feature: i64,
    scale: f64,
    phi: &mut [f64],
) {
    let mut path = parent_path.to_vec();
    extend(&mut path, zero_fraction, one_fraction, feature);

    match *tree.node(node) {
        Node::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let e = path[i];
                phi[e.feature as usize] += scale * w * (e.one_fraction - e.zero_fraction) * value;
            }
        }
        Node::Split {
            feature: split_feature,
            threshold,
            left,
            right,
            cover,
        } => {
            let (hot, cold) = if x.value(split_feature as usize) < threshold {
                (left as usize, right as usize)
            } else {
                (right as usize, left as usize)
            };
            let mut incoming_zero = 1.0;
            let mut incoming_one = 1.0;
            if let Some(k) = (1..path.len()).find(|&k| path[k].feature == split_feature as i64) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind(&mut path, k);
            }
            let hot_ratio = tree.node(hot).cover() / cover;
            let cold_ratio = tree.node(cold).cover() / cover;
            let f = split_feature as i64;
            recurse(tree, x, hot, &path, incoming_zero * hot_ratio, incoming_one, f, scale, phi);
            recurse(tree, x, cold, &path, incoming_zero * cold_ratio, 0.0, f, scale, phi);
        }
    }
}

fn extend(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: i64) {
    let l = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let denom = (l + 1) as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += one_fraction * path[i].weight * (i + 1) as f64 / denom;
        path[i].weight = zero_fraction * path[i].weight * (l - i) as f64 / denom;
    }
}

fn unwind(path: &mut Vec<PathElement>, index: usize) {
    let l = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next = path[l].weight;
    let denom = (l + 1) as f64;
    for j in (0..l).rev() {
        if one != 0.0 {
            let tmp = path[j].weight;
            path[j].weight = next * denom / ((j + 1) as f64 * one);
            next = tmp - path[j].weight * zero * (l - j) as f64 / denom;
        } else {
            path[j].weight = path[j].weight * denom / (zero * (l - j) as f64);
        }
    }
    for j in index..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero_fraction = path[j + 1].zero_fraction;
        path[j].one_fraction = path[j + 1].one_fraction;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let l = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let denom = (l + 1) as f64;
    let mut total = 0.0;
    if one != 0.0 {
        let mut next = path[l].weight;
        for j in (0..l).rev() {
            let tmp = next * denom / ((j + 1) as f64 * one);
            total += tmp;
            next = path[j].weight - tmp * zero * (l - j) as f64 / denom;
        }
    } else {
        for j in (0..l).rev() {
            total += path[j].weight * denom / (zero * (l - j) as f64);
        }
    }
    total
}
