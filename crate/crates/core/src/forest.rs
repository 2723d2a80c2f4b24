//! CART random forest for binary debris scoring.
//!
//! Each tree is grown on a bootstrap sample. At every node a random subset
//! of `features_per_split` features is scanned and the split minimizing the
//! weighted Gini impurity of the children is taken. Leaves hold the debris
//! fraction of their bootstrap samples; the forest averages them.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledPixel;
use crate::error::{Error, Result};
use crate::features::{FeatureVector, N_FEATURES};
use crate::raster::Label;
use crate::rng;

pub const SCHEMA_VERSION: u32 = 1;
const DOMAIN_TREE: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or cannot be split.
    pub max_depth: Option<usize>,
    pub features_per_split: usize,
    pub min_leaf: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            // ceil(sqrt(26))
            features_per_split: 6,
            min_leaf: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        probability: f64,
    },
}

/// Nodes in pre-order; the root is node 0 and children always follow their
/// parent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { probability } => return *probability,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Schema("tree without nodes".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Leaf { probability } => {
                    if !(0.0..=1.0).contains(probability) {
                        return Err(Error::Schema(format!(
                            "leaf {i} probability {probability} outside [0, 1]"
                        )));
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= n_features {
                        return Err(Error::Schema(format!(
                            "node {i} splits on feature {feature} of {n_features}"
                        )));
                    }
                    if threshold.is_nan() {
                        return Err(Error::Schema(format!("node {i} has a NaN threshold")));
                    }
                    // children strictly after the parent rules out cycles
                    for c in [left, right] {
                        if *c <= i || *c >= self.nodes.len() {
                            return Err(Error::Schema(format!(
                                "node {i} has invalid child {c}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub schema_version: u32,
    pub n_features: usize,
    pub config: ForestConfig,
    pub seed: u64,
    pub trees: Vec<DecisionTree>,
}

impl RandomForestModel {
    /// Mean leaf probability over the trees.
    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::FeatureLength {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok((sum / self.trees.len() as f64).clamp(0.0, 1.0))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "schema version {} (supported: {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.trees.is_empty() {
            return Err(Error::Schema("forest without trees".into()));
        }
        self.trees.iter().try_for_each(|t| t.validate(self.n_features))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: RandomForestModel =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }
}

pub fn predict_proba(model: &RandomForestModel, features: &FeatureVector) -> Result<f64> {
    model.predict_row(features.as_slice())
}

pub fn serialize_model(model: &RandomForestModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn deserialize_model(path: impl AsRef<Path>) -> Result<RandomForestModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RandomForestModel::from_json(&text)
}

/// Row-major feature matrix with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub n_features: usize,
    pub values: Vec<f64>,
    pub labels: Vec<bool>,
}

impl TrainingSet {
    pub fn new(rows: &[Vec<f64>], labels: &[bool]) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: rows.len(),
                right: labels.len(),
            });
        }
        let n_features = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != n_features) {
            return Err(Error::FeatureLength {
                expected: n_features,
                got: r.len(),
            });
        }
        Ok(TrainingSet {
            n_features,
            values: rows.iter().flatten().copied().collect(),
            labels: labels.to_vec(),
        })
    }

    pub fn from_pixels(data: &[LabeledPixel]) -> Self {
        TrainingSet {
            n_features: N_FEATURES,
            values: data.iter().flat_map(|p| p.features.0).collect(),
            labels: data.iter().map(|p| p.label == Label::Debris).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.n_features + feature]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.n_features..(row + 1) * self.n_features]
    }
}

/// Weighted child impurity `n_l * gini_l + n_r * gini_r` from class counts.
/// Lower is better.
pub fn child_impurity(n_left: usize, pos_left: usize, n_right: usize, pos_right: usize) -> f64 {
    Impurity::new(n_left, pos_left, n_right, pos_right).value()
}

/// Weighted child impurity held as an exact fraction, so that equal splits
/// compare equal regardless of rounding. With `t = p * (n - p)` per child it
/// is `2 * (t_l / n_l + t_r / n_r)`.
#[derive(Clone, Copy, Debug)]
pub struct Impurity {
    num: u128,
    den: u128,
}

impl Impurity {
    pub fn new(n_left: usize, pos_left: usize, n_right: usize, pos_right: usize) -> Self {
        let t = |n: usize, p: usize| (p as u128) * ((n - p) as u128);
        let (nl, nr) = (n_left.max(1) as u128, n_right.max(1) as u128);
        Impurity {
            num: 2 * (t(n_left, pos_left) * nr + t(n_right, pos_right) * nl),
            den: nl * nr,
        }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Ord for Impurity {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.num.checked_mul(other.den), other.num.checked_mul(self.den)) {
            (Some(a), Some(b)) => a.cmp(&b),
            _ => self.value().total_cmp(&other.value()),
        }
    }
}

impl PartialOrd for Impurity {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Impurity {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Impurity {}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub impurity: Impurity,
}

impl Split {
    /// Lower impurity, then lower feature index, then lower threshold.
    fn better_than(&self, other: &Split) -> bool {
        self.impurity
            .cmp(&other.impurity)
            .then(self.feature.cmp(&other.feature))
            .then(self.threshold.total_cmp(&other.threshold))
            == Ordering::Less
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) * 0.5;
    // adjacent floats: keep the lower value so `<=` still separates them
    if m >= b {
        a
    } else {
        m
    }
}

/// Best split of `rows` on `feature`, or `None` if every value is equal or no
/// cut leaves `min_leaf` rows on each side.
pub fn best_split_on_feature(
    data: &TrainingSet,
    rows: &[usize],
    feature: usize,
    min_leaf: usize,
    scratch: &mut Vec<(f64, bool)>,
) -> Option<Split> {
    scratch.clear();
    scratch.extend(rows.iter().map(|&r| (data.value(r, feature), data.labels[r])));
    scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = scratch.len();
    let total_pos = scratch.iter().filter(|s| s.1).count();
    let mut best: Option<Split> = None;
    let mut pos_left = 0;
    for i in 0..n.saturating_sub(1) {
        pos_left += scratch[i].1 as usize;
        let (a, b) = (scratch[i].0, scratch[i + 1].0);
        if a == b {
            continue;
        }
        let n_left = i + 1;
        if n_left < min_leaf || n - n_left < min_leaf {
            continue;
        }
        let cand = Split {
            feature,
            threshold: midpoint(a, b),
            impurity: Impurity::new(n_left, pos_left, n - n_left, total_pos - pos_left),
        };
        if best.as_ref().is_none_or(|b| cand.better_than(b)) {
            best = Some(cand);
        }
    }
    best
}

/// Best split over `features`, scanning until `max_scanned` non-constant
/// features have been evaluated.
pub fn best_split(
    data: &TrainingSet,
    rows: &[usize],
    features: &[usize],
    max_scanned: usize,
    min_leaf: usize,
) -> Option<Split> {
    let mut scratch = Vec::with_capacity(rows.len());
    let mut best: Option<Split> = None;
    let mut scanned = 0;
    for &f in features {
        if scanned >= max_scanned && best.is_some() {
            break;
        }
        let first = data.value(rows[0], f);
        if rows.iter().all(|&r| data.value(r, f) == first) {
            continue;
        }
        scanned += 1;
        if let Some(s) = best_split_on_feature(data, rows, f, min_leaf, &mut scratch) {
            if best.as_ref().is_none_or(|b| s.better_than(b)) {
                best = Some(s);
            }
        }
    }
    best
}

/// Grows one tree on the given (possibly repeated) row indices.
pub fn grow_tree<R: Rng>(
    data: &TrainingSet,
    rows: Vec<usize>,
    config: &ForestConfig,
    rng: &mut R,
) -> DecisionTree {
    let mut nodes = Vec::new();
    let mut features: Vec<usize> = (0..data.n_features).collect();
    grow_node(data, rows, 0, config, rng, &mut features, &mut nodes);
    DecisionTree { nodes }
}

fn grow_node<R: Rng>(
    data: &TrainingSet,
    rows: Vec<usize>,
    depth: usize,
    config: &ForestConfig,
    rng: &mut R,
    features: &mut [usize],
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    let pos = rows.iter().filter(|&&r| data.labels[r]).count();
    let probability = pos as f64 / rows.len() as f64;
    nodes.push(Node::Leaf { probability });

    let pure = pos == 0 || pos == rows.len();
    let depth_capped = config.max_depth.is_some_and(|d| depth >= d);
    if pure || depth_capped || rows.len() < 2 * config.min_leaf.max(1) {
        return id;
    }
    features.shuffle(rng);
    let Some(split) = best_split(
        data,
        &rows,
        features,
        config.features_per_split.max(1),
        config.min_leaf.max(1),
    ) else {
        return id;
    };
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
        .into_iter()
        .partition(|&r| data.value(r, split.feature) <= split.threshold);
    let left = grow_node(data, left_rows, depth + 1, config, rng, features, nodes);
    let right = grow_node(data, right_rows, depth + 1, config, rng, features, nodes);
    nodes[id] = Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    id
}

/// Bootstrap row indices of tree `tree` under `seed`.
pub fn bootstrap_rows(n: usize, seed: u64, tree: usize) -> (Vec<usize>, rand_chacha::ChaCha8Rng) {
    let mut rng = rng::derive(seed, DOMAIN_TREE, tree as u64);
    let rows = (0..n).map(|_| rng.random_range(0..n)).collect();
    (rows, rng)
}

pub fn train_on(data: &TrainingSet, config: ForestConfig, seed: u64) -> Result<RandomForestModel> {
    if config.n_trees == 0 {
        return Err(Error::InvalidParameter("n_trees must be at least 1".into()));
    }
    if data.n_features == 0 {
        return Err(Error::InvalidParameter("no features".into()));
    }
    let pos = data.labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == data.len() {
        return Err(Error::SingleClass);
    }
    if data.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite feature value".into()));
    }
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let (rows, mut rng) = bootstrap_rows(data.len(), seed, t);
            grow_tree(data, rows, &config, &mut rng)
        })
        .collect();
    Ok(RandomForestModel {
        schema_version: SCHEMA_VERSION,
        n_features: data.n_features,
        config,
        seed,
        trees,
    })
}

pub fn train_forest(data: &[LabeledPixel], config: ForestConfig, seed: u64) -> Result<RandomForestModel> {
    train_on(&TrainingSet::from_pixels(data), config, seed)
}
