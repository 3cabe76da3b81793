use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, ClassifierError, Dataset, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Minimum number of (bootstrap) samples on each side of a split.
    pub min_leaf: usize,
    /// Candidate features per split; `None` means round(sqrt(dim)).
    pub features_per_split: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 2,
            features_per_split: None,
        }
    }
}

impl ForestParams {
    pub fn resolved_features_per_split(&self, dim: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (dim as f64).sqrt().round() as usize)
            .clamp(1, dim.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { counts: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    /// Root at index 0; children always have larger indices than parents.
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    fn leaf(&self, features: &[f64]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if features[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { counts } => return counts,
            }
        }
    }

    /// Majority class of the leaf reached by `features`; ties → lowest class.
    pub fn vote(&self, features: &[f64]) -> usize {
        let counts = self.leaf(features);
        let mut best = 0;
        for (c, n) in counts.iter().enumerate() {
            if *n > counts[best] {
                best = c;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub(crate) trees: Vec<DecisionTree>,
    pub(crate) params: ForestParams,
    pub(crate) seed: u64,
    pub(crate) feature_dim: usize,
    pub(crate) class_count: usize,
}

/// Score of a partition: sum over sides of (sum of squared class counts) / size.
/// Higher is purer; kept as an exact fraction `num / den`.
#[derive(Debug, Clone, Copy)]
struct SplitScore {
    num: u128,
    den: u128,
}

impl SplitScore {
    fn better_than(self, other: SplitScore) -> bool {
        self.num * other.den > other.num * self.den
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: SplitScore,
}

struct Grower<'a> {
    data: &'a Dataset,
    params: &'a ForestParams,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
}

impl Grower<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<u32> {
        let mut counts = vec![0u32; self.data.class_count()];
        for &i in idx {
            counts[self.data.label(i)] += 1;
        }
        counts
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let node = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            counts: counts.clone(),
        });

        let pure = counts.iter().filter(|c| **c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || idx.len() < 2 * self.params.min_leaf {
            return node;
        }
        let Some(best) = self.best_split(&idx, &counts) else {
            return node;
        };

        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.data.row(i)[best.feature] <= best.threshold);
        let left = self.grow(left_idx, depth + 1);
        let right = self.grow(right_idx, depth + 1);
        self.nodes[node] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        node
    }

    fn sample_features(&mut self) -> Vec<usize> {
        let dim = self.data.dim();
        let mut pool: Vec<usize> = (0..dim).collect();
        for i in 0..self.mtry {
            let j = self.rng.random_range(i..dim);
            pool.swap(i, j);
        }
        pool.truncate(self.mtry);
        pool
    }

    fn best_split(&mut self, idx: &[usize], counts: &[u32]) -> Option<Candidate> {
        let n = idx.len() as u128;
        let parent_sq: u128 = counts.iter().map(|c| (*c as u128).pow(2)).sum();
        // parent score parent_sq / n; a split must beat it strictly
        let mut best: Option<Candidate> = None;
        let mut bar = SplitScore { num: parent_sq, den: n };
        let min_leaf = self.params.min_leaf.max(1);

        let mut column: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        for feature in self.sample_features() {
            column.clear();
            column.extend(idx.iter().map(|&i| (self.data.row(i)[feature], self.data.label(i))));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));

            let mut left = vec![0u128; counts.len()];
            let mut right: Vec<u128> = counts.iter().map(|c| *c as u128).collect();
            let mut left_sq: u128 = 0;
            let mut right_sq: u128 = parent_sq;
            for k in 0..column.len() - 1 {
                let c = column[k].1;
                left_sq += 2 * left[c] + 1;
                right_sq -= 2 * right[c] - 1;
                left[c] += 1;
                right[c] -= 1;

                let nl = (k + 1) as u128;
                let nr = n - nl;
                if nl < min_leaf as u128 || nr < min_leaf as u128 {
                    continue;
                }
                let (lo, hi) = (column[k].0, column[k + 1].0);
                if lo == hi {
                    continue;
                }
                let score = SplitScore {
                    num: left_sq * nr + right_sq * nl,
                    den: nl * nr,
                };
                if score.better_than(bar) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    bar = score;
                    best = Some(Candidate {
                        feature,
                        threshold,
                        score,
                    });
                }
            }
        }
        debug_assert!(best.as_ref().is_none_or(|b| b.score.better_than(SplitScore {
            num: parent_sq,
            den: n
        })));
        best
    }
}

fn grow_tree(data: &Dataset, params: &ForestParams, mtry: usize, seed: u64) -> DecisionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.len();
    let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut grower = Grower {
        data,
        params,
        mtry,
        rng,
        nodes: Vec::new(),
    };
    grower.grow(bootstrap, 0);
    DecisionTree {
        nodes: grower.nodes,
    }
}

impl ForestModel {
    /// Grows `n_trees` Gini trees on bootstrap resamples. Deterministic in
    /// (row order, params, seed); trees are grown in parallel from
    /// per-tree seeds drawn up front.
    pub fn train(
        data: &Dataset,
        params: &ForestParams,
        seed: u64,
    ) -> Result<ForestModel, ClassifierError> {
        if data.len() < 2 {
            return Err(ClassifierError::TooFewRows {
                needed: 2,
                got: data.len(),
            });
        }
        if params.n_trees == 0 {
            return Err(ClassifierError::InvalidData("n_trees must be positive".into()));
        }
        if data.dim() == 0 {
            return Err(ClassifierError::InvalidData("zero-dimensional features".into()));
        }
        let mtry = params.resolved_features_per_split(data.dim());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree_seeds: Vec<u64> = (0..params.n_trees).map(|_| rng.next_u64()).collect();
        let trees = tree_seeds
            .par_iter()
            .map(|s| grow_tree(data, params, mtry, *s))
            .collect();
        Ok(ForestModel {
            trees,
            params: ForestParams {
                features_per_split: Some(mtry),
                ..*params
            },
            seed,
            feature_dim: data.dim(),
            class_count: data.class_count(),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    fn check_dim(&self, features: &[f64]) -> Result<(), ClassifierError> {
        if features.len() != self.feature_dim {
            return Err(ClassifierError::DimMismatch {
                expected: self.feature_dim,
                got: features.len(),
            });
        }
        Ok(())
    }

    /// Number of trees voting for each class; sums to the tree count.
    pub fn votes(&self, features: &[f64]) -> Result<Vec<u32>, ClassifierError> {
        self.check_dim(features)?;
        let mut votes = vec![0u32; self.class_count];
        for t in &self.trees {
            votes[t.vote(features)] += 1;
        }
        Ok(votes)
    }

    pub fn probabilities(&self, features: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        let n = self.trees.len() as f64;
        Ok(self
            .votes(features)?
            .into_iter()
            .map(|v| v as f64 / n)
            .collect())
    }

    /// Majority vote; confidence is the winning vote fraction.
    pub fn predict(&self, features: &[f64]) -> Result<Prediction, ClassifierError> {
        let probs = self.probabilities(features)?;
        let class = argmax(&probs);
        Ok(Prediction {
            class,
            confidence: probs[class],
        })
    }
}
