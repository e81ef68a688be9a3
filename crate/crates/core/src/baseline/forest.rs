//! Random forest over dense feature vectors: bootstrap sampling,
//! Gini-impurity splits over a random feature subset per node.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{derive_stream_seed, ClassLabel};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate features per split; floor(sqrt(256)) for LBP histograms.
    pub features_per_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 16,
            min_leaf: 5,
            features_per_split: 16,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 {
            return Err(Error::Config(
                "n_trees and max_depth must be at least 1".into(),
            ));
        }
        if self.min_leaf == 0 || self.features_per_split == 0 {
            return Err(Error::Config(
                "min_leaf and features_per_split must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        class: ClassLabel,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    fn predict(&self, features: &[f64]) -> ClassLabel {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { class } => return *class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if features[*feature] < *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    feature_dim: usize,
    /// Set when training saw a single class; the forest is a constant
    /// predictor and this carries the degenerate-model warning.
    pub degenerate_class: Option<ClassLabel>,
}

impl RandomForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

fn gini(counts: &[usize; 3], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let mut sum_sq = 0.0;
    for &c in counts {
        let p = c as f64 / total as f64;
        sum_sq += p * p;
    }
    1.0 - sum_sq
}

fn majority(counts: &[usize; 3]) -> ClassLabel {
    let mut best = 0;
    for i in 1..3 {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    ClassLabel::from_index(best).expect("index < 3")
}

struct TreeBuilder<'a> {
    features: &'a [&'a [f64]],
    labels: &'a [ClassLabel],
    config: &'a ForestConfig,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn class_counts(&self, indices: &[usize]) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for &i in indices {
            counts[self.labels[i].index()] += 1;
        }
        counts
    }

    fn build(&mut self, indices: &mut Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.class_counts(indices);
        let total = indices.len();
        let node_gini = gini(&counts, total);
        let leaf = |nodes: &mut Vec<Node>| {
            nodes.push(Node::Leaf {
                class: majority(&counts),
            });
            nodes.len() - 1
        };
        if depth >= self.config.max_depth
            || node_gini == 0.0
            || total < 2 * self.config.min_leaf
        {
            return leaf(&mut self.nodes);
        }

        let dim = self.features[0].len();
        let n_candidates = self.config.features_per_split.min(dim);
        // Partial Fisher-Yates over feature indices.
        let mut pool: Vec<usize> = (0..dim).collect();
        for i in 0..n_candidates {
            let j = i + (rng.next_u64() as usize) % (dim - i);
            pool.swap(i, j);
        }

        let mut best: Option<(f64, usize, f64)> = None; // (impurity, feature, threshold)
        let mut scratch: Vec<(f64, ClassLabel)> = Vec::with_capacity(total);
        for &feature in &pool[..n_candidates] {
            scratch.clear();
            scratch.extend(
                indices
                    .iter()
                    .map(|&i| (self.features[i][feature], self.labels[i])),
            );
            scratch.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));

            let mut left = [0usize; 3];
            let mut right = counts;
            for split_at in 0..total - 1 {
                let (value, label) = scratch[split_at];
                left[label.index()] += 1;
                right[label.index()] -= 1;
                let next_value = scratch[split_at + 1].0;
                if value == next_value {
                    continue;
                }
                let n_left = split_at + 1;
                let n_right = total - n_left;
                if n_left < self.config.min_leaf || n_right < self.config.min_leaf {
                    continue;
                }
                let impurity = (n_left as f64 * gini(&left, n_left)
                    + n_right as f64 * gini(&right, n_right))
                    / total as f64;
                let threshold = (value + next_value) / 2.0;
                let better = match best {
                    None => impurity < node_gini,
                    Some((best_imp, _, _)) => impurity < best_imp,
                };
                if better {
                    best = Some((impurity, feature, threshold));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            return leaf(&mut self.nodes);
        };
        let (mut left_idx, mut right_idx): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .partition(|&&i| self.features[i][feature] < threshold);

        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf {
            class: ClassLabel::Blank,
        }); // placeholder
        let left = self.build(&mut left_idx, depth + 1, rng);
        let right = self.build(&mut right_idx, depth + 1, rng);
        self.nodes[slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot
    }
}

/// Trains a forest of Gini trees on bootstrap samples, deterministic for a
/// given seed. Single-class input yields a constant predictor flagged via
/// `degenerate_class`.
pub fn train_forest(
    features: &[&[f64]],
    labels: &[ClassLabel],
    config: &ForestConfig,
) -> Result<RandomForest> {
    config.validate()?;
    if features.len() < 2 {
        return Err(Error::Usage(format!(
            "random forest needs at least 2 samples, got {}",
            features.len()
        )));
    }
    if features.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} feature rows against {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::Usage("inconsistent feature dimensions".into()));
    }

    let mut present = [false; 3];
    for label in labels {
        present[label.index()] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        // Degenerate but usable: a constant predictor.
        let class = labels[0];
        return Ok(RandomForest {
            trees: vec![DecisionTree {
                nodes: vec![Node::Leaf { class }],
            }],
            feature_dim: dim,
            degenerate_class: Some(class),
        });
    }

    let n = features.len();
    let trees: Vec<DecisionTree> = (0..config.n_trees)
        .map(|tree_no| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_stream_seed(
                config.seed,
                "tree",
                tree_no as u64,
                0,
            ));
            let mut bootstrap: Vec<usize> =
                (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut builder = TreeBuilder {
                features,
                labels,
                config,
                nodes: Vec::new(),
            };
            builder.build(&mut bootstrap, 0, &mut rng);
            DecisionTree {
                nodes: builder.nodes,
            }
        })
        .collect();

    Ok(RandomForest {
        trees,
        feature_dim: dim,
        degenerate_class: None,
    })
}

/// Majority vote over trees; frequencies are vote fractions. Ties break by
/// class order (blank < human < robot).
pub fn predict_forest(forest: &RandomForest, features: &[f64]) -> Result<(ClassLabel, [f64; 3])> {
    if features.len() != forest.feature_dim {
        return Err(Error::Usage(format!(
            "forest expects {} features, got {}",
            forest.feature_dim,
            features.len()
        )));
    }
    let mut votes = [0usize; 3];
    for tree in &forest.trees {
        votes[tree.predict(features).index()] += 1;
    }
    let total = forest.trees.len() as f64;
    let freq = [
        votes[0] as f64 / total,
        votes[1] as f64 / total,
        votes[2] as f64 / total,
    ];
    let mut best = 0;
    for i in 1..3 {
        if votes[i] > votes[best] {
            best = i;
        }
    }
    Ok((ClassLabel::from_index(best)?, freq))
}
