//! CART decision trees: greedy binary axis-aligned splits.
//!
//! Shared by the decision-tree surrogate (all features considered at every
//! split) and the random forest (random feature subset per split). Variance
//! reduction is used for regression, Gini impurity for classification;
//! leaves predict the mean or the majority label.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::Task;

#[derive(Debug, Clone, Serialize, Deserialize)]
enum TreeNode<F> {
    Leaf(F),
    Split {
        feature: usize,
        threshold: F,
        left: Box<TreeNode<F>>,
        right: Box<TreeNode<F>>,
    },
}

/// A fitted CART model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionTree<F> {
    root: TreeNode<F>,
    n_features: usize,
    task: Task,
}

impl<F: Real> DecisionTree<F> {
    /// Fits a tree considering every feature at every split. `max_depth`
    /// counts split levels, so 0 yields a single leaf.
    pub fn fit(x: &[Vec<F>], y: &[F], task: Task, max_depth: usize) -> Self {
        assert!(!x.is_empty() && x.len() == y.len());
        let n_features = x[0].len();
        let idx: Vec<usize> = (0..x.len()).collect();
        let mut all_features = |_: &mut ()| (0..n_features).collect::<Vec<_>>();
        let root = build(x, y, &idx, task, max_depth, &mut all_features, &mut ());
        Self {
            root,
            n_features,
            task,
        }
    }

    /// Forest variant: at every split a fresh random subset of
    /// `max_features` candidate features is drawn from `rng`.
    pub fn fit_with_feature_sampling<R: Rng>(
        x: &[Vec<F>],
        y: &[F],
        task: Task,
        max_depth: usize,
        max_features: usize,
        rng: &mut R,
    ) -> Self {
        assert!(!x.is_empty() && x.len() == y.len());
        let n_features = x[0].len();
        let k = max_features.clamp(1, n_features);
        let mut sample_features = |rng: &mut R| {
            let mut pool: Vec<usize> = (0..n_features).collect();
            for i in 0..k {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            let mut chosen = pool[..k].to_vec();
            chosen.sort_unstable();
            chosen
        };
        let root = build(x, y, &(0..x.len()).collect::<Vec<_>>(), task, max_depth, &mut sample_features, rng);
        Self {
            root,
            n_features,
            task,
        }
    }

    pub fn predict(&self, row: &[F]) -> F {
        assert!(row.len() >= self.n_features);
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf(v) => return *v,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn depth(&self) -> usize {
        fn d<F>(n: &TreeNode<F>) -> usize {
            match n {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }
}

fn label_key<F: Real>(v: F) -> i64 {
    v.round().to_i64().unwrap_or(0)
}

fn leaf_value<F: Real>(y: &[F], idx: &[usize], task: Task) -> F {
    match task {
        Task::Regression => {
            let sum: F = idx.iter().map(|&i| y[i]).sum();
            sum / F::from_config(idx.len() as f64)
        }
        Task::Classification => {
            // Majority label, ties resolved toward the smallest label.
            let mut counts = std::collections::BTreeMap::new();
            for &i in idx {
                *counts.entry(label_key(y[i])).or_insert(0usize) += 1;
            }
            let (&label, _) = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .unwrap();
            F::from_config(label as f64)
        }
    }
}

fn sum_and_sumsq<F: Real>(y: &[F], idx: &[usize]) -> (F, F) {
    let mut s = F::zero();
    let mut s2 = F::zero();
    for &i in idx {
        s = s + y[i];
        s2 = s2 + y[i] * y[i];
    }
    (s, s2)
}

fn gini<F: Real>(counts: &std::collections::BTreeMap<i64, usize>, total: usize) -> F {
    let t = F::from_config(total as f64);
    let mut acc = F::one();
    for &c in counts.values() {
        let p = F::from_config(c as f64) / t;
        acc = acc - p * p;
    }
    acc
}

struct BestSplit<F> {
    feature: usize,
    threshold: F,
    score: F,
}

/// Lower score is better: SSE for regression, weighted Gini for classification.
fn best_split_on<F: Real>(
    x: &[Vec<F>],
    y: &[F],
    idx: &[usize],
    feature: usize,
    task: Task,
) -> Option<BestSplit<F>> {
    let mut order: Vec<usize> = idx.to_vec();
    order.sort_by(|&a, &b| {
        x[a][feature]
            .partial_cmp(&x[b][feature])
            .expect("finite feature values")
    });
    let m = order.len();
    let mut best: Option<BestSplit<F>> = None;

    match task {
        Task::Regression => {
            let (total_sum, total_sq) = sum_and_sumsq(y, idx);
            let mut left_sum = F::zero();
            let mut left_sq = F::zero();
            for split in 1..m {
                let i = order[split - 1];
                left_sum = left_sum + y[i];
                left_sq = left_sq + y[i] * y[i];
                let a = x[order[split - 1]][feature];
                let b = x[order[split]][feature];
                if a == b {
                    continue;
                }
                let nl = F::from_config(split as f64);
                let nr = F::from_config((m - split) as f64);
                let right_sum = total_sum - left_sum;
                let right_sq = total_sq - left_sq;
                let sse = (left_sq - left_sum * left_sum / nl)
                    + (right_sq - right_sum * right_sum / nr);
                if best.as_ref().map_or(true, |bst| sse < bst.score) {
                    best = Some(BestSplit {
                        feature,
                        threshold: (a + b) / F::from_config(2.0),
                        score: sse,
                    });
                }
            }
        }
        Task::Classification => {
            let mut right_counts = std::collections::BTreeMap::new();
            for &i in idx {
                *right_counts.entry(label_key(y[i])).or_insert(0usize) += 1;
            }
            let mut left_counts: std::collections::BTreeMap<i64, usize> =
                std::collections::BTreeMap::new();
            for split in 1..m {
                let i = order[split - 1];
                let key = label_key(y[i]);
                *left_counts.entry(key).or_insert(0) += 1;
                let rc = right_counts.get_mut(&key).unwrap();
                *rc -= 1;
                if *rc == 0 {
                    right_counts.remove(&key);
                }
                let a = x[order[split - 1]][feature];
                let b = x[order[split]][feature];
                if a == b {
                    continue;
                }
                let nl = split;
                let nr = m - split;
                let score = F::from_config(nl as f64) * gini::<F>(&left_counts, nl)
                    + F::from_config(nr as f64) * gini::<F>(&right_counts, nr);
                if best.as_ref().map_or(true, |bst| score < bst.score) {
                    best = Some(BestSplit {
                        feature,
                        threshold: (a + b) / F::from_config(2.0),
                        score,
                    });
                }
            }
        }
    }
    best
}

fn build<F, R, G>(
    x: &[Vec<F>],
    y: &[F],
    idx: &[usize],
    task: Task,
    depth_left: usize,
    candidate_features: &mut G,
    rng: &mut R,
) -> TreeNode<F>
where
    F: Real,
    G: FnMut(&mut R) -> Vec<usize>,
{
    let first = y[idx[0]];
    let homogeneous = idx.iter().all(|&i| y[i] == first);
    if depth_left == 0 || idx.len() < 2 || homogeneous {
        return TreeNode::Leaf(leaf_value(y, idx, task));
    }
    let mut best: Option<BestSplit<F>> = None;
    for feature in candidate_features(rng) {
        if let Some(cand) = best_split_on(x, y, idx, feature, task) {
            if best.as_ref().map_or(true, |b| cand.score < b.score) {
                best = Some(cand);
            }
        }
    }
    let Some(split) = best else {
        return TreeNode::Leaf(leaf_value(y, idx, task));
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
        .iter()
        .partition(|&&i| x[i][split.feature] <= split.threshold);
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(build(
            x,
            y,
            &left_idx,
            task,
            depth_left - 1,
            candidate_features,
            rng,
        )),
        right: Box::new(build(
            x,
            y,
            &right_idx,
            task,
            depth_left - 1,
            candidate_features,
            rng,
        )),
    }
}
