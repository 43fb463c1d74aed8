//! Random forest of Gini-split decision trees.
//!
//! Split quality is compared exactly on integer class counts, so equal
//! candidates are recognised as ties and resolved by the documented rule:
//! lowest feature index first, then lowest threshold.

use std::cmp::Ordering;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{TxnFeatures, FEATURE_DIM};
use super::{AdsError, LabeledDataset};

/// Gini impurity `1 - sum p_c^2` of a class-count vector.
pub fn gini(counts: &[u64]) -> Result<f64, AdsError> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(AdsError::InvalidArgument("gini of an empty node".into()));
    }
    let t = total as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: usize,
    /// Train each tree on a bootstrap resample rather than the full set.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 8,
            min_leaf: 5,
            // ceil(sqrt(6))
            features_per_split: 3,
            bootstrap: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        /// `[legit, fraud]` training samples that reached this leaf.
        counts: [u64; 2],
    },
}

impl Node {
    pub fn leaf_for(&self, x: &[f64]) -> [u64; 2] {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { counts } => return *counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<[u64; 2]> {
        match self {
            Node::Leaf { counts } => vec![*counts],
            Node::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }

    /// Fraction of fraud samples in the leaf `x` lands in.
    pub fn fraud_fraction(&self, x: &[f64]) -> f64 {
        let [legit, fraud] = self.leaf_for(x);
        fraud as f64 / (legit + fraud) as f64
    }
}

/// Something that turns a feature vector into a fraud probability.
pub trait FraudScorer {
    fn fraud_score(&self, x: &[f64]) -> f64;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestModel {
    pub params: ForestParams,
    pub seed: u64,
    pub dim: usize,
    pub trees: Vec<Node>,
}

impl ForestModel {
    /// Mean over trees of the leaf fraud fraction.
    pub fn score(&self, features: &TxnFeatures) -> f64 {
        self.fraud_score(&features.to_array())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, AdsError> {
        serde_json::from_str(s).map_err(|e| AdsError::InvalidArgument(e.to_string()))
    }
}

impl FraudScorer for ForestModel {
    fn fraud_score(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.fraud_fraction(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Row-major training matrix with binary class indices.
#[derive(Clone, Copy, Debug)]
pub struct TrainingView<'a> {
    pub x: &'a [f64],
    pub y: &'a [u8],
    pub dim: usize,
}

impl<'a> TrainingView<'a> {
    pub fn new(x: &'a [f64], y: &'a [u8], dim: usize) -> Self {
        assert_eq!(x.len(), y.len() * dim, "matrix shape mismatch");
        TrainingView { x, y, dim }
    }

    fn value(&self, row: usize, feature: usize) -> f64 {
        self.x[row * self.dim + feature]
    }

    fn counts(&self, rows: &[usize]) -> [u64; 2] {
        let mut c = [0u64; 2];
        for &r in rows {
            c[self.y[r] as usize] += 1;
        }
        c
    }
}

/// A chosen split. Rows with `x[feature] <= threshold` go left.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub left: [u64; 2],
    pub right: [u64; 2],
    /// Parent impurity minus the size-weighted child impurity.
    pub impurity_decrease: f64,
}

/// Exact purity score `sum_c l_c^2 / n_l + sum_c r_c^2 / n_r` as a fraction.
/// Maximising it is the same as minimising weighted child Gini impurity.
#[derive(Clone, Copy, Debug)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn of_split(left: [u64; 2], right: [u64; 2]) -> Self {
        let sq = |c: [u64; 2]| (c[0] as u128).pow(2) + (c[1] as u128).pow(2);
        let nl = (left[0] + left[1]) as u128;
        let nr = (right[0] + right[1]) as u128;
        Purity {
            num: sq(left) * nr + sq(right) * nl,
            den: nl * nr,
        }
    }

    fn of_node(c: [u64; 2]) -> Self {
        Purity {
            num: (c[0] as u128).pow(2) + (c[1] as u128).pow(2),
            den: (c[0] + c[1]) as u128,
        }
    }

    fn cmp(&self, other: &Purity) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

fn weighted_gini(left: [u64; 2], right: [u64; 2]) -> f64 {
    let nl = (left[0] + left[1]) as f64;
    let nr = (right[0] + right[1]) as f64;
    (nl * gini(&left).unwrap_or(0.0) + nr * gini(&right).unwrap_or(0.0)) / (nl + nr)
}

/// Best strictly-improving split of `rows` over `features`, each child
/// keeping at least `min_leaf` rows. Candidate thresholds are midpoints
/// between consecutive distinct values.
pub fn best_split(
    data: &TrainingView<'_>,
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let parent = data.counts(rows);
    let parent_purity = Purity::of_node(parent);
    let mut best: Option<(Purity, SplitChoice)> = None;
    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();
    let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(rows.len());
    let min_leaf = min_leaf.max(1);

    for &feature in &features {
        sorted.clear();
        sorted.extend(rows.iter().map(|&r| (data.value(r, feature), data.y[r])));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0u64; 2];
        for k in 0..sorted.len().saturating_sub(1) {
            left[sorted[k].1 as usize] += 1;
            let (lo, hi) = (sorted[k].0, sorted[k + 1].0);
            if lo >= hi {
                continue;
            }
            let n_left = k + 1;
            if n_left < min_leaf || sorted.len() - n_left < min_leaf {
                continue;
            }
            let right = [parent[0] - left[0], parent[1] - left[1]];
            let purity = Purity::of_split(left, right);
            if purity.cmp(&parent_purity) != Ordering::Greater {
                continue;
            }
            // Strictly better only: earlier (feature, threshold) wins ties.
            if best
                .as_ref()
                .is_some_and(|(b, _)| purity.cmp(b) != Ordering::Greater)
            {
                continue;
            }
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold >= hi {
                threshold = lo;
            }
            let decrease = gini(&parent).unwrap_or(0.0) - weighted_gini(left, right);
            best = Some((
                purity,
                SplitChoice {
                    feature,
                    threshold,
                    left,
                    right,
                    impurity_decrease: decrease,
                },
            ));
        }
    }
    best.map(|(_, s)| s)
}

struct TreeBuilder<'a> {
    data: TrainingView<'a>,
    params: ForestParams,
    rng: ChaCha8Rng,
}

impl TreeBuilder<'_> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> Node {
        let counts = self.data.counts(&rows);
        let pure = counts[0] == 0 || counts[1] == 0;
        if depth >= self.params.max_depth || pure || rows.len() < 2 * self.params.min_leaf.max(1) {
            return Node::Leaf { counts };
        }
        let k = self.params.features_per_split.clamp(1, self.data.dim);
        let features = index::sample(&mut self.rng, self.data.dim, k).into_vec();
        let Some(split) = best_split(&self.data, &rows, &features, self.params.min_leaf) else {
            return Node::Leaf { counts };
        };
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&r| self.data.value(r, split.feature) <= split.threshold);
        Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(self.build(left, depth + 1)),
            right: Box::new(self.build(right, depth + 1)),
        }
    }
}

/// Train a single tree; tree `index` uses its own ChaCha stream of `seed`.
pub fn train_tree(data: TrainingView<'_>, params: ForestParams, seed: u64, index: u64) -> Node {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let n = data.y.len();
    let rows: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    TreeBuilder { data, params, rng }.build(rows, 0)
}

/// Train a forest on a row-major matrix. Trees are built in parallel; the
/// result depends only on the inputs.
pub fn train_forest_matrix(
    data: TrainingView<'_>,
    params: ForestParams,
    seed: u64,
) -> Result<ForestModel, AdsError> {
    if data.y.is_empty() {
        return Err(AdsError::EmptyDataset);
    }
    let fraud = data.y.iter().filter(|&&c| c == 1).count();
    if fraud == 0 || fraud == data.y.len() {
        return Err(AdsError::SingleClass);
    }
    if params.n_trees == 0 {
        return Err(AdsError::InvalidArgument("n_trees must be positive".into()));
    }
    let trees = (0..params.n_trees as u64)
        .into_par_iter()
        .map(|i| train_tree(data, params, seed, i))
        .collect();
    Ok(ForestModel {
        params,
        seed,
        dim: data.dim,
        trees,
    })
}

pub fn train_forest(
    data: &LabeledDataset,
    params: ForestParams,
    seed: u64,
) -> Result<ForestModel, AdsError> {
    let (x, y) = data.to_matrix();
    train_forest_matrix(TrainingView::new(&x, &y, FEATURE_DIM), params, seed)
}
