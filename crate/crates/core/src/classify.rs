//! Area-of-interest classification: C4.5-style decision trees over block
//! features, bagged into an equal-vote ensemble.
//!
//! Splits are binary on one numeric feature at midpoints between consecutive
//! distinct values, scored by gain ratio. There is no pruning; `max_depth`
//! and `min_leaf` bound the tree. Every tie is broken by a fixed order
//! (lowest feature index, then lowest threshold; classes by ordinal), so a
//! tree is a pure function of its examples and parameters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BlockId, FeatureVector, FEATURE_COUNT};

const SPLIT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaClass {
    Office,
    Corridor,
    Elevator,
    Stairs,
}

impl AreaClass {
    pub const ALL: [AreaClass; 4] = [AreaClass::Office, AreaClass::Corridor, AreaClass::Elevator, AreaClass::Stairs];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<AreaClass> {
        AreaClass::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AreaClass::Office => "office",
            AreaClass::Corridor => "corridor",
            AreaClass::Elevator => "elevator",
            AreaClass::Stairs => "stairs",
        }
    }
}

pub type ClassCounts = [u64; 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub fv: FeatureVector,
    pub label: AreaClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        label: AreaClass,
        class_counts: ClassCounts,
    },
    Split {
        feature_index: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, fv: &FeatureVector) -> AreaClass {
        let x = fv.to_array();
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { label, .. } => return *label,
                TreeNode::Split { feature_index, threshold, left, right } => {
                    node = if x[*feature_index] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub n_trees: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { max_depth: 12, min_leaf: 3, n_trees: 15, seed: 42 }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.min_leaf == 0 || self.n_trees == 0 {
            return Err(Error::InvalidParams("max_depth, min_leaf and n_trees must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub trees: Vec<TreeNode>,
    pub seed: u64,
    pub n_trees: usize,
    pub params: TrainParams,
}

impl Ensemble {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ensemble serializes")
    }

    pub fn from_json(text: &str) -> Result<Ensemble> {
        let e: Ensemble = serde_json::from_str(text)?;
        if e.trees.is_empty() {
            return Err(Error::InvalidParams("ensemble has no trees".into()));
        }
        Ok(e)
    }
}

pub fn entropy(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyCounts);
    }
    let total = total as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0))
}

fn counts_of<'a>(it: impl Iterator<Item = &'a LabeledExample>) -> ClassCounts {
    let mut c = [0u64; 4];
    for e in it {
        c[e.label.index()] += 1;
    }
    c
}

fn n(c: &ClassCounts) -> u64 {
    c.iter().sum()
}

/// Information gain and split information of partitioning `total` into
/// `left` and `total - left`.
fn gain_and_split_info(total: &ClassCounts, left: &ClassCounts) -> (f64, f64) {
    let right: ClassCounts = std::array::from_fn(|i| total[i] - left[i]);
    let (nt, nl, nr) = (n(total) as f64, n(left) as f64, n(&right) as f64);
    let h = |c: &ClassCounts| entropy(c).unwrap_or(0.0);
    let gain = h(total) - (nl / nt) * h(left) - (nr / nt) * h(&right);
    let split_info = entropy(&[n(left), n(&right)]).unwrap_or(0.0);
    (gain, split_info)
}

/// Gain ratio of splitting `examples` into `x[feature] <= threshold` and the
/// rest.
pub fn gain_ratio(examples: &[LabeledExample], feature_index: usize, threshold: f64) -> Result<f64> {
    if feature_index >= FEATURE_COUNT {
        return Err(Error::InvalidParams(format!("feature index {feature_index} out of range")));
    }
    let total = counts_of(examples.iter());
    let left = counts_of(examples.iter().filter(|e| e.fv.get(feature_index) <= threshold));
    if n(&left) == 0 || n(&left) == n(&total) {
        return Err(Error::DegenerateSplit);
    }
    let (gain, split_info) = gain_and_split_info(&total, &left);
    Ok(if gain <= 0.0 { 0.0 } else { gain / split_info })
}

fn majority(counts: &ClassCounts) -> AreaClass {
    let mut best = 0;
    for i in 1..4 {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    AreaClass::ALL[best]
}

/// Best admissible `(feature, threshold, gain_ratio)` over all midpoint
/// candidates, or `None` when no split has positive gain and `min_leaf`
/// examples on both sides.
pub fn best_split(examples: &[LabeledExample], min_leaf: usize) -> Option<(usize, f64, f64)> {
    if examples.len() < 2 {
        return None;
    }
    let total = counts_of(examples.iter());
    let mut best: Option<(usize, f64, f64)> = None;
    let mut order: Vec<(f64, AreaClass)> = Vec::with_capacity(examples.len());
    for f in 0..FEATURE_COUNT {
        order.clear();
        order.extend(examples.iter().map(|e| (e.fv.get(f), e.label)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0u64; 4];
        for i in 0..order.len() - 1 {
            left[order[i].1.index()] += 1;
            let (lo, hi) = (order[i].0, order[i + 1].0);
            if lo == hi {
                continue;
            }
            let nl = i + 1;
            if nl < min_leaf || order.len() - nl < min_leaf {
                continue;
            }
            let (gain, split_info) = gain_and_split_info(&total, &left);
            if gain <= SPLIT_EPS || split_info <= 0.0 {
                continue;
            }
            let ratio = gain / split_info;
            if best.map_or(true, |(_, _, r)| ratio > r + SPLIT_EPS) {
                let mid = lo + (hi - lo) / 2.0;
                best = Some((f, mid, ratio));
            }
        }
    }
    best
}

fn grow(examples: &[LabeledExample], p: &TrainParams, depth: usize) -> TreeNode {
    let counts = counts_of(examples.iter());
    let leaf = || TreeNode::Leaf { label: majority(&counts), class_counts: counts };
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    if pure || depth >= p.max_depth || examples.len() < 2 * p.min_leaf {
        return leaf();
    }
    match best_split(examples, p.min_leaf) {
        None => leaf(),
        Some((feature_index, threshold, _)) => {
            let (l, r): (Vec<LabeledExample>, Vec<LabeledExample>) =
                examples.iter().partition(|e| e.fv.get(feature_index) <= threshold);
            TreeNode::Split {
                feature_index,
                threshold,
                left: Box::new(grow(&l, p, depth + 1)),
                right: Box::new(grow(&r, p, depth + 1)),
            }
        }
    }
}

pub fn train_tree(examples: &[LabeledExample], params: &TrainParams) -> Result<TreeNode> {
    params.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if examples.iter().any(|e| !e.fv.is_finite()) {
        return Err(Error::InvalidParams("non-finite feature in training set".into()));
    }
    Ok(grow(examples, params, 0))
}

/// Bootstrap resample of size `n` for tree `tree_index`.
pub fn bootstrap(examples: &[LabeledExample], seed: u64, tree_index: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree_index);
    (0..examples.len()).map(|_| examples[rng.random_range(0..examples.len())]).collect()
}

pub fn train_bagged(examples: &[LabeledExample], params: &TrainParams) -> Result<Ensemble> {
    params.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let trees = (0..params.n_trees as u64)
        .into_par_iter()
        .map(|i| train_tree(&bootstrap(examples, params.seed, i), params))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { trees, seed: params.seed, n_trees: params.n_trees, params: *params })
}

pub fn predict(ensemble: &Ensemble, fv: &FeatureVector) -> AreaClass {
    let mut votes = [0u64; 4];
    for t in &ensemble.trees {
        votes[t.predict(fv).index()] += 1;
    }
    majority(&votes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[u64; 4]; 4],
}

impl Evaluation {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// FN / (TP + FN); 0 when the class is absent.
    pub fn false_negative_rate(&self, c: AreaClass) -> f64 {
        let row = &self.confusion[c.index()];
        let actual: u64 = row.iter().sum();
        if actual == 0 {
            0.0
        } else {
            (actual - row[c.index()]) as f64 / actual as f64
        }
    }

    /// FP / (FP + TN); 0 when every block is of class `c`.
    pub fn false_positive_rate(&self, c: AreaClass) -> f64 {
        let i = c.index();
        let negatives: u64 = (0..4).filter(|&r| r != i).map(|r| self.confusion[r].iter().sum::<u64>()).sum();
        let fp: u64 = (0..4).filter(|&r| r != i).map(|r| self.confusion[r][i]).sum();
        if negatives == 0 {
            0.0
        } else {
            fp as f64 / negatives as f64
        }
    }
}

pub fn evaluate(ensemble: &Ensemble, labeled: &[LabeledExample]) -> Result<Evaluation> {
    if labeled.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let predicted: Vec<AreaClass> = labeled.par_iter().map(|e| predict(ensemble, &e.fv)).collect();
    let mut confusion = [[0u64; 4]; 4];
    let mut correct = 0u64;
    for (e, p) in labeled.iter().zip(predicted) {
        confusion[e.label.index()][p.index()] += 1;
        correct += (e.label == p) as u64;
    }
    Ok(Evaluation { accuracy: correct as f64 / labeled.len() as f64, confusion })
}

/// Per-class 80/20 split of labeled blocks. Each class with at least two
/// blocks puts `max(1, round(0.2·n))` of them in the test set; a class with
/// a single block trains only.
pub fn split_blocks(
    blocks: &[(BlockId, LabeledExample)],
    test_fraction: f64,
    seed: u64,
) -> (Vec<(BlockId, LabeledExample)>, Vec<(BlockId, LabeledExample)>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in AreaClass::ALL {
        let mut members: Vec<_> = blocks.iter().filter(|(_, e)| e.label == c).copied().collect();
        members.sort_by_key(|(id, _)| *id);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c.index() as u64);
        members.shuffle(&mut rng);
        let n_test = if members.len() < 2 {
            0
        } else {
            ((test_fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1)
        };
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_by_key(|(id, _)| *id);
    test.sort_by_key(|(id, _)| *id);
    (train, test)
}
