//! Divide and compress.
//!
//! The data is first divided into `n_p` partitions, either by repeatedly
//! splitting the largest remaining piece with a median random projection or
//! by balanced random sampling. Each partition then gets its own rpTree and
//! every leaf is compressed to a single signature point. The signatures of
//! all partitions, in partition order, form the signature set handed to the
//! kernel learner, along with the point-to-signature map used to propagate
//! results back to the full data.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::rptree::{split_node, RpTree, SplitOutcome, Splitter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Projection,
    Sampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignatureMode {
    #[default]
    Centroid,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub n_p: usize,
    pub scheme: Scheme,
    /// Partition id of every point.
    pub assignments: Vec<usize>,
}

impl PartitionPlan {
    /// Member indices of each partition, ascending within a partition.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_p];
        for (i, &p) in self.assignments.iter().enumerate() {
            out[p].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_p];
        for &p in &self.assignments {
            sizes[p] += 1;
        }
        sizes
    }
}

/// Divides `points` into `n_p` partitions.
pub fn partition(
    points: &ArrayView2<f64>,
    n_p: usize,
    scheme: Scheme,
    stream: &RandomStream,
) -> Result<PartitionPlan> {
    let n = points.nrows();
    if n_p == 0 || n < n_p {
        return Err(Error::invalid(format!(
            "cannot divide {n} points into {n_p} partitions"
        )));
    }
    let mut assignments = vec![0; n];
    match scheme {
        Scheme::Sampling => {
            let mut order: Vec<usize> = (0..n).collect();
            stream.clone().shuffle(&mut order);
            for (pos, &i) in order.iter().enumerate() {
                assignments[i] = pos % n_p;
            }
        }
        Scheme::Projection => {
            // (creation index, members, node stream)
            let mut working = vec![(0usize, (0..n).collect::<Vec<_>>(), stream.clone())];
            let mut created = 1;
            for _ in 1..n_p {
                let pos = (0..working.len())
                    .max_by(|&a, &b| {
                        working[a]
                            .1
                            .len()
                            .cmp(&working[b].1.len())
                            .then(working[b].0.cmp(&working[a].0))
                    })
                    .expect("working set is non-empty");
                let (_, members, node_stream) = working.swap_remove(pos);
                let (left, right) =
                    match split_node(points, &members, Splitter::Median, &mut node_stream.clone())? {
                        SplitOutcome::Split(s) => (s.left, s.right),
                        SplitOutcome::Degenerate => {
                            // Identical points: any balanced split is as good as another.
                            let mid = members.len().div_ceil(2);
                            (members[..mid].to_vec(), members[mid..].to_vec())
                        }
                    };
                working.push((created, left, node_stream.derive(0)));
                working.push((created + 1, right, node_stream.derive(1)));
                created += 2;
            }
            working.sort_by_key(|w| w.0);
            for (pid, (_, members, _)) in working.iter().enumerate() {
                for &i in members {
                    assignments[i] = pid;
                }
            }
        }
    }
    Ok(PartitionPlan {
        n_p,
        scheme,
        assignments,
    })
}

/// Compressed representation of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureSet {
    /// One row per signature.
    pub signatures: Array2<f64>,
    /// Partition that produced each signature.
    pub owner_partition: Vec<usize>,
    /// Signature id of every original point.
    pub point_to_signature: Vec<usize>,
    /// Number of points mapped to each signature.
    pub weights: Vec<usize>,
}

impl SignatureSet {
    pub fn len(&self) -> usize {
        self.signatures.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.nrows() == 0
    }

    /// Builds a set from explicit signatures and a point map, recomputing
    /// the weights. Used for compressions not produced by rpTrees.
    pub fn from_assignment(signatures: Array2<f64>, point_to_signature: Vec<usize>) -> Result<Self> {
        let m = signatures.nrows();
        let mut weights = vec![0; m];
        for &s in &point_to_signature {
            if s >= m {
                return Err(Error::invalid(format!("signature id {s} out of range for {m}")));
            }
            weights[s] += 1;
        }
        Ok(Self {
            signatures,
            owner_partition: vec![0; m],
            point_to_signature,
            weights,
        })
    }

    /// Each point replaced by its signature.
    pub fn lift(&self) -> Array2<f64> {
        let d = self.signatures.ncols();
        Array2::from_shape_fn((self.point_to_signature.len(), d), |(i, j)| {
            self.signatures[[self.point_to_signature[i], j]]
        })
    }
}

struct PartitionOutput {
    signatures: Vec<Vec<f64>>,
    leaves: Vec<Vec<usize>>,
}

fn compress_partition(
    points: &ArrayView2<f64>,
    members: Vec<usize>,
    n_s: usize,
    splitter: Splitter,
    mode: SignatureMode,
    stream: &RandomStream,
) -> Result<PartitionOutput> {
    let tree = RpTree::grow(points, members, n_s, splitter, &stream.derive(0))?;
    let d = points.ncols();
    let mut picker = stream.derive(1);
    let mut signatures = Vec::with_capacity(tree.leaf_count());
    let mut leaves = Vec::with_capacity(tree.leaf_count());
    for leaf in tree.leaves() {
        let sig = match mode {
            SignatureMode::Centroid => {
                let mut c = vec![0.0; d];
                for &i in leaf {
                    for (acc, v) in c.iter_mut().zip(points.row(i)) {
                        *acc += v;
                    }
                }
                c.iter_mut().for_each(|v| *v /= leaf.len() as f64);
                c
            }
            SignatureMode::Sample => points.row(leaf[picker.index(leaf.len())]).to_vec(),
        };
        signatures.push(sig);
        leaves.push(leaf.to_vec());
    }
    Ok(PartitionOutput { signatures, leaves })
}

/// Grows one rpTree per partition (in parallel) and compresses each leaf to
/// a signature. Partition `p` uses the stream `derive(stream, p)`.
pub fn compress(
    points: &ArrayView2<f64>,
    plan: &PartitionPlan,
    n_s: usize,
    splitter: Splitter,
    mode: SignatureMode,
    stream: &RandomStream,
) -> Result<SignatureSet> {
    let n = points.nrows();
    if plan.assignments.len() != n {
        return Err(Error::invalid(format!(
            "plan covers {} points, data has {n}",
            plan.assignments.len()
        )));
    }
    if plan.assignments.iter().any(|&p| p >= plan.n_p) {
        return Err(Error::invalid("plan has partition ids outside 0..n_p"));
    }
    let members = plan.members();
    let outputs: Vec<Result<Option<PartitionOutput>>> = members
        .into_par_iter()
        .enumerate()
        .map(|(p, m)| {
            if m.is_empty() {
                return Ok(None);
            }
            compress_partition(points, m, n_s, splitter, mode, &stream.derive(p as u64)).map(Some)
        })
        .collect();

    let d = points.ncols();
    let mut flat = Vec::new();
    let mut owner_partition = Vec::new();
    let mut weights = Vec::new();
    let mut point_to_signature = vec![usize::MAX; n];
    for (p, out) in outputs.into_iter().enumerate() {
        let Some(out) = out? else { continue };
        for (sig, leaf) in out.signatures.into_iter().zip(out.leaves) {
            let id = owner_partition.len();
            flat.extend(sig);
            owner_partition.push(p);
            weights.push(leaf.len());
            for i in leaf {
                point_to_signature[i] = id;
            }
        }
    }
    let m = owner_partition.len();
    Ok(SignatureSet {
        signatures: Array2::from_shape_vec((m, d), flat).expect("m*d values"),
        owner_partition,
        point_to_signature,
        weights,
    })
}

/// Node size that makes rpTrees over `n` points produce roughly
/// `target_signatures` leaves.
pub fn choose_node_size(n: usize, target_signatures: usize) -> Result<usize> {
    if target_signatures == 0 || target_signatures > n {
        return Err(Error::invalid(format!(
            "target signature count {target_signatures} must be in 1..={n}"
        )));
    }
    let n_s = (2.0 * n as f64 / target_signatures as f64).round() as usize;
    Ok(n_s.max(2))
}

/// Mean squared distance between each point and its signature.
pub fn approximation_mse(points: &ArrayView2<f64>, sigs: &SignatureSet) -> Result<f64> {
    let n = points.nrows();
    if sigs.point_to_signature.len() != n {
        return Err(Error::invalid(format!(
            "signature map covers {} points, data has {n}",
            sigs.point_to_signature.len()
        )));
    }
    if sigs.signatures.ncols() != points.ncols() {
        return Err(Error::invalid("signature dimension differs from data"));
    }
    let mut total = 0.0;
    for (row, &s) in points.rows().into_iter().zip(&sigs.point_to_signature) {
        if s >= sigs.len() {
            return Err(Error::invalid(format!("point mapped to missing signature {s}")));
        }
        total += row
            .iter()
            .zip(sigs.signatures.row(s))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    }
    Ok(total / n as f64)
}

/// On-disk form of a signature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureFile {
    pub seed: u64,
    pub scheme: Scheme,
    pub n_p: usize,
    pub n_s: usize,
    #[serde(default)]
    pub signature_mode: SignatureMode,
    pub signatures: Vec<Vec<f64>>,
    pub weights: Vec<usize>,
    pub point_to_signature: Vec<usize>,
    #[serde(default)]
    pub owner_partition: Vec<usize>,
}

impl SignatureFile {
    pub fn new(
        sigs: &SignatureSet,
        seed: u64,
        scheme: Scheme,
        n_p: usize,
        n_s: usize,
        signature_mode: SignatureMode,
    ) -> Self {
        Self {
            seed,
            scheme,
            n_p,
            n_s,
            signature_mode,
            signatures: sigs.signatures.rows().into_iter().map(|r| r.to_vec()).collect(),
            weights: sigs.weights.clone(),
            point_to_signature: sigs.point_to_signature.clone(),
            owner_partition: sigs.owner_partition.clone(),
        }
    }

    pub fn to_signature_set(&self) -> Result<SignatureSet> {
        let m = self.signatures.len();
        let d = self.signatures.first().map_or(0, Vec::len);
        if m == 0 || d == 0 || self.signatures.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("signature rows must be non-empty and of equal length"));
        }
        let mut set = SignatureSet::from_assignment(
            Array2::from_shape_vec((m, d), self.signatures.concat()).expect("m*d"),
            self.point_to_signature.clone(),
        )?;
        if set.weights != self.weights {
            return Err(Error::invalid("weights disagree with point_to_signature"));
        }
        if self.owner_partition.len() == m {
            set.owner_partition = self.owner_partition.clone();
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
