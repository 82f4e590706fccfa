use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tree::{Node, Tree};
use super::{sigmoid, GbmModel, SparseMatrix, TrainConfig};
use crate::error::{Error, Result};

const MIN_GAIN: f64 = 1e-12;

/// Weighted training log-loss before the first tree and after every tree.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
}

pub fn train(x: &SparseMatrix, y: &[bool], cfg: &TrainConfig) -> Result<GbmModel> {
    train_with_trace(x, y, cfg).map(|(m, _)| m)
}

pub fn train_with_trace(
    x: &SparseMatrix,
    y: &[bool],
    cfg: &TrainConfig,
) -> Result<(GbmModel, TrainTrace)> {
    cfg.validate()?;
    let n = x.n_rows();
    if n != y.len() {
        return Err(Error::Usage(format!("{n} rows but {} labels", y.len())));
    }
    if n < 2 {
        return Err(Error::Training("at least two training rows are required".into()));
    }
    let n_pos = y.iter().filter(|&&b| b).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::Training("training labels contain a single class".into()));
    }

    let weights: Vec<f64> = y
        .iter()
        .map(|&b| if b { cfg.positive_weight } else { 1.0 })
        .collect();
    let targets: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let w_pos: f64 = weights.iter().zip(&targets).map(|(w, t)| w * t).sum();
    let w_neg: f64 = weights.iter().zip(&targets).map(|(w, t)| w * (1.0 - t)).sum();
    let base_score = (w_pos / w_neg).ln();

    let binned = Binned::new(x);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut logits = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(cfg.estimators);
    let mut losses = vec![log_loss(&logits, &targets, &weights)];
    let mut grower = Grower::new(&binned, cfg);

    for _ in 0..cfg.estimators {
        for i in 0..n {
            let p = sigmoid(logits[i]);
            grad[i] = weights[i] * (p - targets[i]);
            hess[i] = weights[i] * p * (1.0 - p);
        }

        let mut rows: Vec<u32> = if cfg.subsample < 1.0 {
            (0..n as u32).filter(|_| rng.gen::<f64>() < cfg.subsample).collect()
        } else {
            (0..n as u32).collect()
        };
        if rows.is_empty() {
            rows = (0..n as u32).collect();
        }
        let n_feat = x.n_features();
        let allowed: Vec<bool> = if cfg.colsample_bytree < 1.0 && n_feat > 0 {
            let take = ((cfg.colsample_bytree * n_feat as f64).round() as usize).clamp(1, n_feat);
            let mut mask = vec![false; n_feat];
            for j in rand::seq::index::sample(&mut rng, n_feat, take) {
                mask[j] = true;
            }
            mask
        } else {
            vec![true; n_feat]
        };

        let tree = grower.grow(&mut rows, &grad, &hess, &weights, &allowed);
        for (i, f) in logits.iter_mut().enumerate() {
            *f += cfg.learning_rate * tree.predict(&x.row(i));
        }
        losses.push(log_loss(&logits, &targets, &weights));
        trees.push(tree);
    }

    let tree_weights = vec![cfg.learning_rate; trees.len()];
    let mut model = GbmModel::new(x.n_features(), base_score, trees, tree_weights)?;
    model.config = cfg.clone();
    Ok((model, TrainTrace { losses }))
}

fn log_loss(logits: &[f64], targets: &[f64], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for ((&f, &t), &w) in logits.iter().zip(targets).zip(weights) {
        // -[t ln p + (1-t) ln(1-p)] written via softplus for stability.
        let softplus = |z: f64| if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        total += w * (t * softplus(-f) + (1.0 - t) * softplus(f));
        wsum += w;
    }
    total / wsum
}

/// Per-feature sorted unique values (zero always included) and rows
/// rewritten as `(feature, bin)` pairs.
struct Binned {
    values: Vec<Vec<f64>>,
    zero_bin: Vec<u32>,
    offsets: Vec<usize>,
    bin_feature: Vec<u32>,
    rows: Vec<Vec<(u32, u32)>>,
}

impl Binned {
    fn new(x: &SparseMatrix) -> Self {
        let nf = x.n_features();
        let mut values: Vec<Vec<f64>> = vec![vec![0.0]; nf];
        for row in x.raw_rows() {
            for &(j, v) in row {
                values[j as usize].push(v);
            }
        }
        for v in values.iter_mut() {
            v.sort_by(f64::total_cmp);
            // -0.0 and 0.0 compare equal for splitting purposes.
            v.dedup_by(|a, b| a == b);
        }
        let zero_bin: Vec<u32> = values
            .iter()
            .map(|v| v.iter().position(|&a| a == 0.0).unwrap() as u32)
            .collect();
        let mut offsets = Vec::with_capacity(nf + 1);
        let mut bin_feature = Vec::new();
        offsets.push(0);
        for (j, v) in values.iter().enumerate() {
            bin_feature.extend(std::iter::repeat(j as u32).take(v.len()));
            offsets.push(offsets[j] + v.len());
        }
        let rows = x
            .raw_rows()
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&(j, v)| {
                        let vals = &values[j as usize];
                        let b = vals.partition_point(|&a| a < v);
                        (j, b as u32)
                    })
                    .collect()
            })
            .collect();
        Binned {
            values,
            zero_bin,
            offsets,
            bin_feature,
            rows,
        }
    }

    fn n_bins(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn bin_of(&self, row: usize, feature: u32) -> u32 {
        let r = &self.rows[row];
        match r.binary_search_by_key(&feature, |e| e.0) {
            Ok(k) => r[k].1,
            Err(_) => self.zero_bin[feature as usize],
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Split {
    feature: u32,
    bin: u32,
    threshold: f64,
    gain: f64,
}

/// Gradient, hessian and row count of one histogram bin.
#[derive(Clone, Copy, Debug, Default)]
struct Bin {
    g: f64,
    h: f64,
    n: u32,
}

/// Sparse histogram: dense bins plus the list of bins with rows in them.
#[derive(Default)]
struct Hist {
    bins: Vec<Bin>,
    touched: Vec<u32>,
}

impl Hist {
    fn reset(&mut self, n_bins: usize) {
        if self.bins.len() != n_bins {
            self.bins = vec![Bin::default(); n_bins];
        } else {
            for &t in &self.touched {
                self.bins[t as usize] = Bin::default();
            }
        }
        self.touched.clear();
    }

    fn fill(&mut self, data: &Binned, rows: &[u32], grad: &[f64], hess: &[f64], allowed: &[bool]) {
        self.reset(data.n_bins());
        for &r in rows {
            let r = r as usize;
            for &(f, b) in &data.rows[r] {
                if !allowed[f as usize] {
                    continue;
                }
                let flat = data.offsets[f as usize] + b as usize;
                let bin = &mut self.bins[flat];
                if bin.n == 0 {
                    self.touched.push(flat as u32);
                }
                bin.g += grad[r];
                bin.h += hess[r];
                bin.n += 1;
            }
        }
    }

    /// `self = parent - sibling` over the parent's bins.
    fn difference(&mut self, parent: &Hist, sibling: &Hist) {
        self.reset(parent.bins.len());
        for &t in &parent.touched {
            let (p, s) = (parent.bins[t as usize], sibling.bins[t as usize]);
            let n = p.n - s.n;
            if n > 0 {
                self.bins[t as usize] = Bin {
                    g: p.g - s.g,
                    h: p.h - s.h,
                    n,
                };
                self.touched.push(t);
            }
        }
    }
}

struct Grower<'a> {
    data: &'a Binned,
    lambda: f64,
    min_child_weight: f64,
    max_depth: usize,
    // Two histograms per depth, one for each child of the node above.
    hists: Vec<[Hist; 2]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl<'a> Grower<'a> {
    fn new(data: &'a Binned, cfg: &TrainConfig) -> Self {
        Grower {
            data,
            lambda: cfg.lambda,
            min_child_weight: cfg.min_child_weight,
            max_depth: cfg.max_depth,
            hists: (0..cfg.max_depth).map(|_| Default::default()).collect(),
            order: Vec::new(),
            nodes: Vec::new(),
        }
    }

    fn grow(
        &mut self,
        rows: &mut [u32],
        grad: &[f64],
        hess: &[f64],
        weights: &[f64],
        allowed: &[bool],
    ) -> Tree {
        self.nodes.clear();
        if self.max_depth > 0 && rows.len() >= 2 {
            self.hists[0][0].fill(self.data, rows, grad, hess, allowed);
        }
        self.build(rows, 0, 0, grad, hess, weights, allowed);
        Tree::from_nodes_unchecked(std::mem::take(&mut self.nodes))
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        let d = h + self.lambda;
        if d > 0.0 {
            g * g / d
        } else {
            0.0
        }
    }

    fn splittable(&self, depth: usize, n_rows: usize) -> bool {
        depth < self.max_depth && n_rows >= 2
    }

    /// Grows the subtree over `rows`. When the node is splittable its
    /// histogram is already in `hists[depth][slot]`.
    #[allow(clippy::too_many_arguments)]
    fn build(
        &mut self,
        rows: &mut [u32],
        depth: usize,
        slot: usize,
        grad: &[f64],
        hess: &[f64],
        weights: &[f64],
        allowed: &[bool],
    ) -> u32 {
        let mut g = 0.0;
        let mut h = 0.0;
        let mut cover = 0.0;
        for &r in rows.iter() {
            let r = r as usize;
            g += grad[r];
            h += hess[r];
            cover += weights[r];
        }
        let id = self.nodes.len() as u32;
        let split = if self.splittable(depth, rows.len()) {
            self.find_split(depth, slot, rows.len() as u32, g, h)
        } else {
            None
        };
        let Some(split) = split else {
            let d = h + self.lambda;
            let value = if d > 0.0 { -g / d } else { 0.0 };
            self.nodes.push(Node::Leaf { value, cover });
            return id;
        };

        let data = self.data;
        let mut mid = 0;
        for k in 0..rows.len() {
            if data.bin_of(rows[k] as usize, split.feature) <= split.bin {
                rows.swap(k, mid);
                mid += 1;
            }
        }
        // Keep row order stable within each side for determinism of sums.
        rows[..mid].sort_unstable();
        rows[mid..].sort_unstable();

        // Child histograms: scan the smaller side, subtract for the larger.
        let child = depth + 1;
        let (nl, nr) = (mid, rows.len() - mid);
        if self.splittable(child, nl) || self.splittable(child, nr) {
            let (small, small_rows) = if nl <= nr { (0, &rows[..mid]) } else { (1, &rows[mid..]) };
            let (upper, lower) = self.hists.split_at_mut(child);
            let parent = &upper[depth][slot];
            let [a, b] = &mut lower[0];
            let (s, l) = if small == 0 { (a, b) } else { (b, a) };
            s.fill(data, small_rows, grad, hess, allowed);
            l.difference(parent, s);
        }

        self.nodes.push(Node::Leaf { value: 0.0, cover });
        let (left_rows, right_rows) = rows.split_at_mut(mid);
        let left = self.build(left_rows, child, 0, grad, hess, weights, allowed);
        let right = self.build(right_rows, child, 1, grad, hess, weights, allowed);
        let cover = self.nodes[left as usize].cover() + self.nodes[right as usize].cover();
        self.nodes[id as usize] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            cover,
        };
        id
    }

    fn find_split(&mut self, depth: usize, slot: usize, n: u32, g: f64, h: f64) -> Option<Split> {
        let data = self.data;
        let hist = &self.hists[depth][slot];
        // Few touched bins: sort them. Many: a full ordered scan is cheaper
        // than the sort and yields the same order.
        let mut order = std::mem::take(&mut self.order);
        order.clear();
        if hist.touched.len() * 8 < hist.bins.len() {
            order.extend_from_slice(&hist.touched);
            order.sort_unstable();
        } else {
            order.extend((0..hist.bins.len() as u32).filter(|&t| hist.bins[t as usize].n > 0));
        }
        let bins = &hist.bins;

        let parent = self.score(g, h);
        let mut best: Option<Split> = None;
        let mut start = 0;
        while start < order.len() {
            let f = data.bin_feature[order[start] as usize];
            let mut end = start;
            let (mut gx, mut hx, mut nx) = (0.0, 0.0, 0u32);
            while end < order.len() && data.bin_feature[order[end] as usize] == f {
                let t = order[end] as usize;
                gx += bins[t].g;
                hx += bins[t].h;
                nx += bins[t].n;
                end += 1;
            }
            let off = data.offsets[f as usize];
            let zb = data.zero_bin[f as usize] as usize;
            let zero = (g - gx, h - hx, n - nx);
            let vals = &data.values[f as usize];

            // Walk present bins in ascending order, slotting the implicit
            // zero bin in its place.
            let mut gl = 0.0;
            let mut hl = 0.0;
            let mut prev: Option<usize> = None;
            let mut k = start;
            let mut zero_done = zero.2 == 0;
            loop {
                let next_explicit = (k < end).then(|| order[k] as usize - off);
                let (bin, sg, sh) = match next_explicit {
                    Some(b) if zero_done || b < zb => {
                        k += 1;
                        let t = off + b;
                        (b, bins[t].g, bins[t].h)
                    }
                    _ if !zero_done => {
                        zero_done = true;
                        (zb, zero.0, zero.1)
                    }
                    _ => break,
                };
                if let Some(a) = prev {
                    let hr = h - hl;
                    if hl >= self.min_child_weight && hr >= self.min_child_weight {
                        let gain = self.score(gl, hl) + self.score(g - gl, hr) - parent;
                        if gain > MIN_GAIN && best.map_or(true, |s| gain > s.gain) {
                            let mut threshold = 0.5 * (vals[a] + vals[bin]);
                            if threshold <= vals[a] {
                                threshold = vals[bin];
                            }
                            best = Some(Split {
                                feature: f,
                                bin: a as u32,
                                threshold,
                                gain,
                            });
                        }
                    }
                }
                gl += sg;
                hl += sh;
                prev = Some(bin);
            }
            start = end;
        }
        self.order = order;
        best
    }
}
