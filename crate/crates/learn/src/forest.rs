//! Random forest: bagged Gini trees with per-node feature subsets.

use ndarray::{ArrayView1, ArrayView2};
use num_rational::Ratio;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use restrictml_core::Label;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TREES: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum ForestError {
    #[error("no training rows")]
    EmptyData,
    #[error("{rows} rows but {labels} labels")]
    LabelMismatch { rows: usize, labels: usize },
    #[error("features_per_node={given} outside 1..={dim}")]
    FeaturesOutOfRange { given: usize, dim: usize },
    #[error("n_trees must be >= 1")]
    NoTrees,
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// How each tree's training rows are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BagMode {
    /// `⌈2n/3⌉` rows with replacement.
    #[default]
    TwoThirds,
    /// `n` rows with replacement.
    Classical,
}

impl BagMode {
    pub fn bag_size(self, n: usize) -> usize {
        match self {
            BagMode::TwoThirds => (2 * n).div_ceil(3),
            BagMode::Classical => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feature: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub left: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub right: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub leaf_class: Option<Label>,
    /// `[inapplicable, applicable]` training rows reaching this node.
    pub counts: [u64; 2],
}

/// Majority class; ties go to inapplicable.
fn majority(counts: [u64; 2]) -> Label {
    Label::from_bool(counts[1] > counts[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    /// Node 0 is the root. Rows with `x[feature] <= threshold` go left.
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn predict_row(&self, row: ArrayView1<f64>) -> Label {
        let mut at = 0;
        loop {
            let node = &self.nodes[at];
            match (node.feature, node.threshold, node.left, node.right) {
                (Some(f), Some(t), Some(l), Some(r)) => at = if row[f] <= t { l } else { r },
                _ => return node.leaf_class.unwrap_or_else(|| majority(node.counts)),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, at: usize) -> usize {
            match (t.nodes[at].left, t.nodes[at].right) {
                (Some(l), Some(r)) => 1 + walk(t, l).max(walk(t, r)),
                _ => 0,
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub features_per_node: usize,
    pub max_depth: Option<usize>,
}

fn gini(counts: [u64; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = counts[1] as f64 / n;
    2.0 * p * (1.0 - p)
}

fn tally(rows: &[usize], y: &[Label]) -> [u64; 2] {
    let mut c = [0u64; 2];
    for &r in rows {
        c[y[r].as_u8() as usize] += 1;
    }
    c
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [Label],
    params: TreeParams,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn leaf(&mut self, counts: [u64; 2]) -> usize {
        self.nodes.push(TreeNode {
            feature: None,
            threshold: None,
            left: None,
            right: None,
            leaf_class: Some(majority(counts)),
            counts,
        });
        self.nodes.len() - 1
    }

    /// Best `(weighted child impurity, feature, threshold)` over `features`.
    fn best_split(&self, rows: &[usize], features: &[usize]) -> Option<(f64, usize, f64)> {
        let total = tally(rows, self.y);
        let n = rows.len() as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted: Vec<(f64, Label)> = Vec::with_capacity(rows.len());
        for &f in features {
            sorted.clear();
            sorted.extend(rows.iter().map(|&r| (self.x[[r, f]], self.y[r])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0u64; 2];
            for k in 0..sorted.len() - 1 {
                left[sorted[k].1.as_u8() as usize] += 1;
                if sorted[k].0 == sorted[k + 1].0 {
                    continue;
                }
                let right = [total[0] - left[0], total[1] - left[1]];
                let nl = (k + 1) as f64;
                let score = (nl * gini(left) + (n - nl) * gini(right)) / n;
                if best.is_none_or(|(s, _, _)| score < s) {
                    let threshold = sorted[k].0 + (sorted[k + 1].0 - sorted[k].0) / 2.0;
                    best = Some((score, f, threshold));
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = tally(&rows, self.y);
        let pure = counts[0] == 0 || counts[1] == 0;
        if pure || rows.len() < 2 || self.params.max_depth.is_some_and(|d| depth >= d) {
            return self.leaf(counts);
        }
        let d = self.x.ncols();
        let mut features = index::sample(rng, d, self.params.features_per_node).into_vec();
        features.sort_unstable();
        let Some((_, feature, threshold)) = self.best_split(&rows, &features) else {
            return self.leaf(counts);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| self.x[[i, feature]] <= threshold);
        let at = self.nodes.len();
        self.nodes.push(TreeNode {
            feature: Some(feature),
            threshold: Some(threshold),
            left: None,
            right: None,
            leaf_class: None,
            counts,
        });
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[at].left = Some(left);
        self.nodes[at].right = Some(right);
        at
    }
}

/// Grows one tree on `rows` (duplicates allowed).
pub fn grow_tree(
    x: ArrayView2<f64>,
    y: &[Label],
    rows: Vec<usize>,
    params: TreeParams,
    rng: &mut ChaCha8Rng,
) -> DecisionTree {
    let mut b = Builder {
        x,
        y,
        params,
        nodes: Vec::new(),
    };
    b.grow(rows, 0, rng);
    DecisionTree { nodes: b.nodes }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Defaults to `⌈√d⌉` when `None`.
    pub features_per_node: Option<usize>,
    pub max_depth: Option<usize>,
    pub bag_mode: BagMode,
    pub seed: u64,
}

impl ForestParams {
    pub fn new(seed: u64) -> Self {
        ForestParams {
            n_trees: DEFAULT_TREES,
            features_per_node: None,
            max_depth: None,
            bag_mode: BagMode::TwoThirds,
            seed,
        }
    }
}

pub fn default_features_per_node(dim: usize) -> usize {
    ((dim as f64).sqrt().ceil() as usize).clamp(1, dim.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub n_trees: usize,
    pub features_per_node: usize,
    pub max_depth: Option<usize>,
    pub bag_mode: BagMode,
    pub seed: u64,
    pub n_features: usize,
    /// Distinct training rows in each tree's bag, ascending.
    pub bags: Vec<Vec<usize>>,
    pub oob: OobError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OobError {
    pub misclassified: u64,
    /// Rows that were out of bag for at least one tree.
    pub evaluated: u64,
}

impl OobError {
    pub fn ratio(&self) -> Ratio<u64> {
        if self.evaluated == 0 {
            Ratio::from_integer(0)
        } else {
            Ratio::new(self.misclassified, self.evaluated)
        }
    }

    pub fn rate(&self) -> f64 {
        let r = self.ratio();
        *r.numer() as f64 / *r.denom() as f64
    }
}

/// RNG for tree `index`: one ChaCha stream per tree under the forest seed.
fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw_bag(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<usize> {
    (0..size).map(|_| rng.random_range(0..n)).collect()
}

/// The training rows (with repeats) that tree `index` is grown on.
pub fn tree_bag(seed: u64, index: usize, n: usize, mode: BagMode) -> Vec<usize> {
    draw_bag(&mut tree_rng(seed, index), n, mode.bag_size(n))
}

pub fn forest_train(x: ArrayView2<f64>, y: &[Label], params: &ForestParams) -> Result<ForestModel, ForestError> {
    let n = x.nrows();
    let d = x.ncols();
    if n == 0 {
        return Err(ForestError::EmptyData);
    }
    if y.len() != n {
        return Err(ForestError::LabelMismatch { rows: n, labels: y.len() });
    }
    if params.n_trees == 0 {
        return Err(ForestError::NoTrees);
    }
    let fpn = params.features_per_node.unwrap_or_else(|| default_features_per_node(d));
    if fpn == 0 || fpn > d {
        return Err(ForestError::FeaturesOutOfRange { given: fpn, dim: d });
    }
    let tree_params = TreeParams {
        features_per_node: fpn,
        max_depth: params.max_depth,
    };
    let bag_size = params.bag_mode.bag_size(n);

    let grown: Vec<(DecisionTree, Vec<usize>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            let rows = draw_bag(&mut rng, n, bag_size);
            let mut bag = rows.clone();
            bag.sort_unstable();
            bag.dedup();
            (grow_tree(x, y, rows, tree_params, &mut rng), bag)
        })
        .collect();
    let (trees, bags): (Vec<_>, Vec<_>) = grown.into_iter().unzip();

    let mut model = ForestModel {
        trees,
        n_trees: params.n_trees,
        features_per_node: fpn,
        max_depth: params.max_depth,
        bag_mode: params.bag_mode,
        seed: params.seed,
        n_features: d,
        bags,
        oob: OobError {
            misclassified: 0,
            evaluated: 0,
        },
    };
    model.oob = oob_error(&model, x, y);
    Ok(model)
}

impl ForestModel {
    /// Applicable votes per row.
    pub fn votes(&self, x: ArrayView2<f64>) -> Result<Vec<usize>, ForestError> {
        if x.ncols() != self.n_features {
            return Err(ForestError::DimensionMismatch {
                expected: self.n_features,
                found: x.ncols(),
            });
        }
        Ok(x.rows()
            .into_iter()
            .map(|row| self.trees.iter().filter(|t| t.predict_row(row).is_applicable()).count())
            .collect())
    }

    /// Majority vote; a tie goes to inapplicable.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<Label>, ForestError> {
        let n = self.trees.len();
        Ok(self.votes(x)?.into_iter().map(|v| Label::from_bool(2 * v > n)).collect())
    }
}

pub fn forest_predict(model: &ForestModel, x: ArrayView2<f64>) -> Result<Vec<Label>, ForestError> {
    model.predict(x)
}

/// Error of the out-of-bag vote over the training rows `x`, `y`.
pub fn oob_error(model: &ForestModel, x: ArrayView2<f64>, y: &[Label]) -> OobError {
    let n = x.nrows();
    let mut votes = vec![[0usize; 2]; n];
    for (tree, bag) in model.trees.iter().zip(&model.bags) {
        let mut in_bag = vec![false; n];
        for &r in bag {
            if r < n {
                in_bag[r] = true;
            }
        }
        for (r, v) in votes.iter_mut().enumerate() {
            if !in_bag[r] {
                v[tree.predict_row(x.row(r)).as_u8() as usize] += 1;
            }
        }
    }
    let mut out = OobError {
        misclassified: 0,
        evaluated: 0,
    };
    for (v, &truth) in votes.iter().zip(y) {
        if v[0] + v[1] == 0 {
            continue;
        }
        out.evaluated += 1;
        if Label::from_bool(v[1] > v[0]) != truth {
            out.misclassified += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use Label::{Applicable as P, Inapplicable as N};

    #[test]
    fn bag_sizes() {
        assert_eq!(BagMode::TwoThirds.bag_size(3), 2);
        assert_eq!(BagMode::TwoThirds.bag_size(10), 7);
        assert_eq!(BagMode::Classical.bag_size(10), 10);
    }

    #[test]
    fn single_class_gives_single_leaves() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let m = forest_train(x.view(), &[P, P, P], &ForestParams::new(1)).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(m.oob.misclassified, 0);
        assert_eq!(m.trees.len(), DEFAULT_TREES);
    }

    #[test]
    fn ties_go_to_false() {
        assert_eq!(majority([2, 2]), N);
        let leaf = |c| DecisionTree {
            nodes: vec![TreeNode {
                feature: None,
                threshold: None,
                left: None,
                right: None,
                leaf_class: Some(c),
                counts: [0, 0],
            }],
        };
        let m = ForestModel {
            trees: vec![leaf(P), leaf(N)],
            n_trees: 2,
            features_per_node: 1,
            max_depth: None,
            bag_mode: BagMode::TwoThirds,
            seed: 0,
            n_features: 1,
            bags: vec![vec![], vec![]],
            oob: OobError { misclassified: 0, evaluated: 0 },
        };
        assert_eq!(m.predict(array![[0.0]].view()).unwrap(), vec![N]);
    }

    #[test]
    fn midpoint_threshold_and_depth_cap() {
        let x = array![[0.0], [1.0], [3.0], [4.0]];
        let y = [N, N, P, P];
        let params = TreeParams { features_per_node: 1, max_depth: None };
        let t = grow_tree(x.view(), &y, vec![0, 1, 2, 3], params, &mut tree_rng(0, 0));
        assert_eq!(t.nodes[0].threshold, Some(2.0));
        assert_eq!(t.depth(), 1);
        let stump = grow_tree(
            x.view(),
            &y,
            vec![0, 1, 2, 3],
            TreeParams { features_per_node: 1, max_depth: Some(0) },
            &mut tree_rng(0, 0),
        );
        assert_eq!(stump.nodes.len(), 1);
    }

    #[test]
    fn errors() {
        let x = Array2::<f64>::zeros((0, 2));
        assert_eq!(forest_train(x.view(), &[], &ForestParams::new(1)).unwrap_err(), ForestError::EmptyData);
        let x = array![[1.0, 2.0]];
        let mut p = ForestParams::new(1);
        p.features_per_node = Some(3);
        assert_eq!(
            forest_train(x.view(), &[P], &p).unwrap_err(),
            ForestError::FeaturesOutOfRange { given: 3, dim: 2 }
        );
        let m = forest_train(x.view(), &[P], &ForestParams::new(1)).unwrap();
        assert!(m.predict(array![[1.0]].view()).is_err());
    }
}
