//! CART classification trees: greedy binary splits on single features.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::staterep::StateMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Gini,
    Entropy,
}

impl Criterion {
    fn impurity(self, counts: &[usize], n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let n = n as f64;
        match self {
            Criterion::Gini => 1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>(),
            Criterion::Entropy => -counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / n;
                    p * p.log2()
                })
                .sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { counts: Vec<usize> },
}

/// Fitted tree; node 0 is the root. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_classes: usize,
    pub criterion: Criterion,
}

/// Minimum impurity decrease for a split to be taken; also the tolerance
/// under which two candidate splits count as tied.
const GAIN_EPS: f64 = 1e-12;

struct Builder<'a> {
    data: &'a StateMatrix,
    criterion: Criterion,
    max_depth: Option<usize>,
    min_samples_split: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.data.n_actions()];
        for &r in rows {
            c[self.data.labels[r]] += 1;
        }
        c
    }

    fn best_split(&self, rows: &[usize], parent: &[usize]) -> Option<BestSplit> {
        let k = self.data.n_actions();
        let n = rows.len();
        let parent_imp = self.criterion.impurity(parent, n);
        let mut best: Option<BestSplit> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        for f in 0..self.data.n_features() {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.data.row(r)[f], self.data.labels[r])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[n - 1].0 {
                continue;
            }
            let mut left = vec![0usize; k];
            let mut right = vec![0usize; k];
            for i in 0..n - 1 {
                left[pairs[i].1] += 1;
                let (a, b) = (pairs[i].0, pairs[i + 1].0);
                if a == b {
                    continue;
                }
                let nl = i + 1;
                for c in 0..k {
                    right[c] = parent[c] - left[c];
                }
                let child = (nl as f64 * self.criterion.impurity(&left, nl)
                    + (n - nl) as f64 * self.criterion.impurity(&right, n - nl))
                    / n as f64;
                let gain = parent_imp - child;
                let better = match &best {
                    None => gain > GAIN_EPS,
                    Some(bs) => gain > bs.gain + GAIN_EPS,
                };
                if better {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(BestSplit { gain, feature: f, threshold });
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&rows);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: counts.clone() });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_ok = self.max_depth.is_none_or(|m| depth < m);
        if pure || !depth_ok || rows.len() < self.min_samples_split.max(2) {
            return id;
        }
        let Some(split) = self.best_split(&rows, &counts) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| self.data.row(i)[split.feature] <= split.threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }
}

/// Grows a CART tree. Ties between equal-gain splits go to the lowest
/// feature index, then the lowest threshold. A single-class training set
/// yields a one-leaf tree.
pub fn fit_tree(
    train: &StateMatrix,
    criterion: Criterion,
    max_depth: Option<usize>,
    min_samples_split: usize,
) -> Result<DecisionTree> {
    if train.n_rows() == 0 {
        return Err(crate::Error::Fit("empty training set".into()));
    }
    let mut b = Builder { data: train, criterion, max_depth, min_samples_split, nodes: Vec::new() };
    b.build((0..train.n_rows()).collect(), 0);
    Ok(DecisionTree { nodes: b.nodes, n_classes: train.n_actions(), criterion })
}

impl DecisionTree {
    pub fn leaf_for(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn leaf_counts(&self, x: &[f64]) -> &[usize] {
        match &self.nodes[self.leaf_for(x)] {
            Node::Leaf { counts } => counts,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let counts = self.leaf_counts(x);
        let n: usize = counts.iter().sum();
        counts.iter().map(|&c| c as f64 / n as f64).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
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

    /// Graphviz rendering for inspection.
    pub fn to_dot(&self, feature_names: &[String], class_labels: &[String]) -> String {
        let mut s = String::from("digraph tree {\n  node [shape=box, fontname=\"Helvetica\"];\n");
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Split { feature, threshold, left, right } => {
                    let name = feature_names.get(*feature).map(String::as_str).unwrap_or("?");
                    let _ = writeln!(s, "  n{i} [label=\"{} <= {threshold:.4}\"];", escape(name));
                    let _ = writeln!(s, "  n{i} -> n{left} [label=\"yes\"];");
                    let _ = writeln!(s, "  n{i} -> n{right} [label=\"no\"];");
                }
                Node::Leaf { counts } => {
                    let n: usize = counts.iter().sum();
                    let best = (0..counts.len()).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
                    let label = class_labels.get(best).map(String::as_str).unwrap_or("?");
                    let _ = writeln!(s, "  n{i} [label=\"{} ({}/{n})\", style=rounded];", escape(label), counts[best]);
                }
            }
        }
        s.push_str("}\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
