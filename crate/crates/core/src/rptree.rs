//! Random projection trees.
//!
//! A node holding at least `n_s` points is split by projecting its points
//! onto a random unit direction and cutting at the median projection (or at
//! a uniformly drawn point between the extreme projections). Nodes smaller
//! than `n_s` become leaves.
//!
//! Randomness follows node lineage: a node consumes its own stream for the
//! split direction and its children use `derive(node_stream, 0)` and
//! `derive(node_stream, 1)`. The resulting partition does not depend on the
//! order in which nodes are visited.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Fresh directions tried before a node is declared degenerate.
pub const DEGENERATE_RETRIES: usize = 5;

/// Projection spread below which a direction cannot split a node.
pub const MIN_SPREAD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Splitter {
    #[default]
    Median,
    Uniform,
}

/// Points with projection `<= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub direction: Vec<f64>,
    pub threshold: f64,
}

impl SplitRule {
    pub fn project(&self, point: &[f64]) -> f64 {
        dot(&self.direction, point)
    }
}

/// A successful split of a node.
#[derive(Debug, Clone)]
pub struct Split {
    pub rule: SplitRule,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum SplitOutcome {
    Split(Split),
    /// Every tried direction had zero spread; the node must become a leaf.
    Degenerate,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project_all(points: &ArrayView2<f64>, indices: &[usize], direction: &[f64]) -> Vec<f64> {
    indices
        .iter()
        .map(|&i| {
            let row = points.row(i);
            match row.as_slice() {
                Some(s) => dot(direction, s),
                None => row.iter().zip(direction).map(|(x, y)| x * y).sum(),
            }
        })
        .collect()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let n = v.len();
    let mid = n / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid]
            .iter()
            .copied()
            .max_by(f64::total_cmp)
            .expect("non-empty lower half");
        lower + (upper - lower) / 2.0
    }
}

/// Splits `indices` (rows of `points`) along a random direction.
///
/// Ties at the threshold go left; if that leaves the right side empty, the
/// block of points sharing the largest projection moves right instead.
pub fn split_node(
    points: &ArrayView2<f64>,
    indices: &[usize],
    splitter: Splitter,
    stream: &mut RandomStream,
) -> Result<SplitOutcome> {
    if indices.len() < 2 {
        return Err(Error::invalid("cannot split a node with fewer than two points"));
    }
    let d = points.ncols();
    for _ in 0..DEGENERATE_RETRIES {
        let direction = stream.random_unit_direction(d)?;
        let proj = project_all(points, indices, &direction);
        let (lo, hi) = proj
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        if hi - lo < MIN_SPREAD {
            continue;
        }
        let mut threshold = match splitter {
            Splitter::Median => median(&proj),
            Splitter::Uniform => lo + stream.uniform() * (hi - lo),
        };
        if threshold >= hi {
            // Everything would go left: push the top tied block right.
            threshold = proj
                .iter()
                .copied()
                .filter(|&p| p < hi)
                .max_by(f64::total_cmp)
                .expect("spread is positive");
        }
        let mut left = Vec::with_capacity(indices.len() / 2 + 1);
        let mut right = Vec::with_capacity(indices.len() / 2 + 1);
        for (&i, &p) in indices.iter().zip(&proj) {
            if p <= threshold {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        debug_assert!(!left.is_empty() && !right.is_empty());
        return Ok(SplitOutcome::Split(Split {
            rule: SplitRule {
                direction,
                threshold,
            },
            left,
            right,
        }));
    }
    Ok(SplitOutcome::Degenerate)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Internal {
        rule: SplitRule,
        left: usize,
        right: usize,
    },
    Leaf {
        indices: Vec<usize>,
        /// Set when the node reached `n_s` points but could not be split.
        degenerate: bool,
    },
}

/// An immutable grown tree. Node 0 is the root; leaves are listed in
/// left-to-right order by [`RpTree::leaves`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RpTree {
    nodes: Vec<Node>,
    node_size_limit: usize,
    leaf_ids: Vec<usize>,
}

impl RpTree {
    /// Grows a tree over the given rows of `points`.
    pub fn grow(
        points: &ArrayView2<f64>,
        indices: Vec<usize>,
        node_size_limit: usize,
        splitter: Splitter,
        stream: &RandomStream,
    ) -> Result<Self> {
        if node_size_limit < 2 {
            return Err(Error::invalid("node size limit n_s must be at least 2"));
        }
        if indices.is_empty() {
            return Err(Error::invalid("cannot grow a tree over an empty index set"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= points.nrows()) {
            return Err(Error::invalid(format!("row index {bad} out of range")));
        }
        let mut nodes: Vec<Option<Node>> = vec![None];
        // (node id, member indices, node stream)
        let mut stack = vec![(0usize, indices, stream.clone())];
        while let Some((id, members, node_stream)) = stack.pop() {
            if members.len() < node_size_limit {
                nodes[id] = Some(Node::Leaf {
                    indices: members,
                    degenerate: false,
                });
                continue;
            }
            let mut split_stream = node_stream.clone();
            match split_node(points, &members, splitter, &mut split_stream)? {
                SplitOutcome::Degenerate => {
                    nodes[id] = Some(Node::Leaf {
                        indices: members,
                        degenerate: true,
                    });
                }
                SplitOutcome::Split(split) => {
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(None);
                    nodes.push(None);
                    nodes[id] = Some(Node::Internal {
                        rule: split.rule,
                        left,
                        right,
                    });
                    stack.push((right, split.right, node_stream.derive(1)));
                    stack.push((left, split.left, node_stream.derive(0)));
                }
            }
        }
        let nodes: Vec<Node> = nodes
            .into_iter()
            .map(|n| n.expect("every node is filled"))
            .collect();
        let leaf_ids = Self::collect_leaves(&nodes);
        Ok(Self {
            nodes,
            node_size_limit,
            leaf_ids,
        })
    }

    fn collect_leaves(nodes: &[Node]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            match &nodes[id] {
                Node::Leaf { .. } => out.push(id),
                Node::Internal { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        out
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_size_limit(&self) -> usize {
        self.node_size_limit
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_ids.len()
    }

    /// Leaf member lists, left to right.
    pub fn leaves(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.leaf_ids.iter().map(|&id| match &self.nodes[id] {
            Node::Leaf { indices, .. } => indices.as_slice(),
            Node::Internal { .. } => unreachable!("leaf ids point at leaves"),
        })
    }

    /// Whether each leaf (in [`RpTree::leaves`] order) is degenerate.
    pub fn degenerate_flags(&self) -> Vec<bool> {
        self.leaf_ids
            .iter()
            .map(|&id| matches!(self.nodes[id], Node::Leaf { degenerate: true, .. }))
            .collect()
    }

    /// All indices covered by the tree, in leaf order.
    pub fn indices(&self) -> Vec<usize> {
        self.leaves().flatten().copied().collect()
    }

    /// Debug dump. Not a stable format.
    pub fn to_json(&self) -> serde_json::Value {
        let nodes: Vec<serde_json::Value> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, node)| match node {
                Node::Internal { rule, left, right } => serde_json::json!({
                    "id": id,
                    "direction": rule.direction,
                    "threshold": rule.threshold,
                    "children": [left, right],
                }),
                Node::Leaf {
                    indices,
                    degenerate,
                } => serde_json::json!({
                    "id": id,
                    "members": indices,
                    "degenerate": degenerate,
                }),
            })
            .collect();
        serde_json::json!({ "node_size_limit": self.node_size_limit, "nodes": nodes })
    }
}

/// Mean and maximum leaf radius, where a leaf's radius is the largest
/// distance from a member to the leaf centroid.
pub fn leaf_radius_stats(tree: &RpTree, points: &ArrayView2<f64>) -> (f64, f64) {
    let d = points.ncols();
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for leaf in tree.leaves() {
        let mut centroid = vec![0.0; d];
        for &i in leaf {
            for (c, v) in centroid.iter_mut().zip(points.row(i)) {
                *c += v;
            }
        }
        for c in &mut centroid {
            *c /= leaf.len() as f64;
        }
        let radius = leaf
            .iter()
            .map(|&i| {
                points
                    .row(i)
                    .iter()
                    .zip(&centroid)
                    .map(|(x, c)| (x - c) * (x - c))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        sum += radius;
        max = max.max(radius);
    }
    (sum / tree.leaf_count() as f64, max)
}
