//! Similarity kernels over signature points.
//!
//! The rpf-kernel counts, over a forest of `T` rpTrees, how often two points
//! land in the same leaf. Counts are integers accumulated per tree and merged
//! by addition, so the result is exact and independent of how trees are
//! scheduled. The average co-membership can then be passed through
//! `exp(K / beta)`.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::rptree::{RpTree, Splitter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum KernelStage {
    /// Average leaf co-membership over the forest, entries in `[0, 1]`.
    IncidenceAverage,
    /// `exp(K / beta)` of an incidence average.
    Exponentiated { beta: f64 },
    /// `exp(-|x - y|^2 / (2 sigma^2))`.
    Gaussian { sigma: f64 },
}

/// A dense symmetric similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: Array2<f64>,
    pub stage: KernelStage,
    /// Forest size for rpf kernels.
    pub trees: Option<usize>,
}

impl KernelMatrix {
    /// Wraps an arbitrary symmetric matrix, e.g. for diagnostics on
    /// hand-built affinities.
    pub fn from_values(values: Array2<f64>, stage: KernelStage) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c {
            return Err(Error::invalid(format!("kernel must be square, got {r}x{c}")));
        }
        for i in 0..r {
            for j in 0..i {
                if values[[i, j]] != values[[j, i]] {
                    return Err(Error::invalid(format!("kernel not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            values,
            stage,
            trees: None,
        })
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    /// Writes `m` on the first line, then the upper triangle row by row.
    pub fn write_upper_triangle(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let m = self.size();
        let io = |e| Error::io(path, e);
        writeln!(w, "{m}").map_err(io)?;
        for i in 0..m {
            let row: Vec<String> = (i..m).map(|j| format!("{:e}", self.values[[i, j]])).collect();
            writeln!(w, "{}", row.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads a matrix written by [`KernelMatrix::write_upper_triangle`].
    pub fn read_upper_triangle(path: impl AsRef<Path>, stage: KernelStage) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let parse_err = |line: usize, column: usize, message: String| Error::Parse {
            path: path.to_owned(),
            line,
            column,
            message,
        };
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, 0, "empty file".into()))?
            .map_err(|e| Error::io(path, e))?;
        let m: usize = header
            .trim()
            .parse()
            .map_err(|_| parse_err(1, 0, format!("bad size `{header}`")))?;
        let mut values = Array2::zeros((m, m));
        for i in 0..m {
            let line = lines
                .next()
                .ok_or_else(|| parse_err(i + 2, 0, "missing row".into()))?
                .map_err(|e| Error::io(path, e))?;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != m - i {
                return Err(parse_err(i + 2, 0, format!("expected {} values", m - i)));
            }
            for (off, cell) in cells.iter().enumerate() {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(i + 2, off, format!("bad value `{cell}`")))?;
                values[[i, i + off]] = v;
                values[[i + off, i]] = v;
            }
        }
        Ok(Self {
            values,
            stage,
            trees: None,
        })
    }
}

/// Per-tree leaf co-membership counts, upper triangle including the
/// diagonal, packed row-major.
fn accumulate_tree(counts: &mut [u32], m: usize, tree: &RpTree) {
    for leaf in tree.leaves() {
        let mut members = leaf.to_vec();
        members.sort_unstable();
        for (a, &i) in members.iter().enumerate() {
            let base = packed_row_start(i, m);
            for &j in &members[a..] {
                counts[base + (j - i)] += 1;
            }
        }
    }
}

fn packed_row_start(i: usize, m: usize) -> usize {
    i * m - i * i.saturating_sub(1) / 2
}

/// Average co-membership over `trees` rpTrees grown on the rows of
/// `signatures`. Tree `t` uses the stream `derive(stream, t)`.
pub fn build_incidence(
    signatures: &ArrayView2<f64>,
    trees: usize,
    n_s: usize,
    splitter: Splitter,
    stream: &RandomStream,
) -> Result<KernelMatrix> {
    let m = signatures.nrows();
    if trees == 0 {
        return Err(Error::invalid("forest needs at least one tree"));
    }
    if n_s < 2 {
        return Err(Error::invalid("node size limit n_s must be at least 2"));
    }
    if m == 0 {
        return Err(Error::invalid("cannot build a kernel over zero points"));
    }
    let packed = m * (m + 1) / 2;
    let counts = (0..trees)
        .into_par_iter()
        .try_fold(
            || vec![0u32; packed],
            |mut acc, t| {
                let tree = RpTree::grow(signatures, (0..m).collect(), n_s, splitter, &stream.derive(t as u64))?;
                accumulate_tree(&mut acc, m, &tree);
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(
            || vec![0u32; packed],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let t = trees as f64;
    let mut values = Array2::zeros((m, m));
    for i in 0..m {
        let base = packed_row_start(i, m);
        for j in i..m {
            let v = counts[base + (j - i)] as f64 / t;
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    Ok(KernelMatrix {
        values,
        stage: KernelStage::IncidenceAverage,
        trees: Some(trees),
    })
}

/// Elementwise `exp(K / beta)` of an incidence average.
pub fn exponentiate(kernel: &KernelMatrix, beta: f64) -> Result<KernelMatrix> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("bandwidth beta must be positive, got {beta}")));
    }
    if kernel.stage != KernelStage::IncidenceAverage {
        return Err(Error::invalid("only incidence averages can be exponentiated"));
    }
    Ok(KernelMatrix {
        values: kernel.values.mapv(|v| (v / beta).exp()),
        stage: KernelStage::Exponentiated { beta },
        trees: kernel.trees,
    })
}

/// Gaussian kernel `exp(-|x_i - x_j|^2 / (2 sigma^2))` over the rows of `points`.
pub fn gaussian_kernel(points: &ArrayView2<f64>, sigma: f64) -> Result<KernelMatrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("bandwidth sigma must be positive, got {sigma}")));
    }
    let m = points.nrows();
    let denom = 2.0 * sigma * sigma;
    let mut values = Array2::zeros((m, m));
    for i in 0..m {
        values[[i, i]] = 1.0;
        let xi = points.row(i);
        for j in 0..i {
            let d2: f64 = xi
                .iter()
                .zip(points.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = (-d2 / denom).exp();
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    Ok(KernelMatrix {
        values,
        stage: KernelStage::Gaussian { sigma },
        trees: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_blobs;
    use ndarray::{array, Array2};

    fn check_incidence_invariants(k: &KernelMatrix) {
        let t = k.trees.unwrap() as f64;
        let m = k.size();
        for i in 0..m {
            assert_eq!(k.values[[i, i]], 1.0);
            for j in 0..m {
                let v = k.values[[i, j]];
                assert_eq!(v, k.values[[j, i]]);
                assert!((0.0..=1.0).contains(&v));
                assert!(((v * t).round() - v * t).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn packed_layout_covers_triangle() {
        let m = 7;
        let mut seen = vec![false; m * (m + 1) / 2];
        for i in 0..m {
            for j in i..m {
                let idx = packed_row_start(i, m) + (j - i);
                assert!(!seen[idx]);
                seen[idx] = true;
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn one_leaf_forest_is_all_ones() {
        let ds = make_blobs(20, 3, 2, 4.0, 1).unwrap();
        for trees in [1, 7] {
            let k = build_incidence(&ds.points(), trees, 50, Splitter::Median, &RandomStream::root(0)).unwrap();
            assert!(k.values.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn identical_points_always_together() {
        let pts = array![[3.0, 1.0], [3.0, 1.0]];
        let k = build_incidence(&pts.view(), 100, 2, Splitter::Median, &RandomStream::root(2)).unwrap();
        assert!(k.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn separated_clusters_rarely_share_leaves() {
        // Two tight clusters of 20 points, 100 apart.
        let mut s = RandomStream::root(5);
        let pts = Array2::from_shape_fn((40, 2), |(i, j)| {
            let offset = if i < 20 && j == 0 { 100.0 } else { 0.0 };
            offset + s.standard_normal()
        });
        let k = build_incidence(&pts.view(), 200, 21, Splitter::Median, &RandomStream::root(6)).unwrap();
        check_incidence_invariants(&k);
        let mut within = Vec::new();
        for i in 0..40 {
            for j in 0..40 {
                if (i < 20) != (j < 20) {
                    assert!(k.values[[i, j]] < 0.05, "cross entry {}", k.values[[i, j]]);
                } else {
                    within.push(k.values[[i, j]]);
                }
            }
        }
        assert!(within.iter().sum::<f64>() / within.len() as f64 > 0.5);
    }

    #[test]
    fn parallel_equals_sequential() {
        let ds = make_blobs(150, 4, 3, 3.0, 8).unwrap();
        let run = || build_incidence(&ds.points(), 64, 10, Splitter::Uniform, &RandomStream::root(8)).unwrap();
        let par = run();
        let seq = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
        assert_eq!(par, seq);
        check_incidence_invariants(&par);
    }

    #[test]
    fn more_trees_reduce_variance() {
        let ds = make_blobs(60, 3, 2, 3.0, 3).unwrap();
        let spread = |trees: usize| {
            let reps: Vec<KernelMatrix> = (0..10)
                .map(|r| build_incidence(&ds.points(), trees, 10, Splitter::Median, &RandomStream::root(100 + r)).unwrap())
                .collect();
            let m = 60;
            let mut total = 0.0;
            for i in 0..m {
                for j in 0..m {
                    let vals: Vec<f64> = reps.iter().map(|k| k.values[[i, j]]).collect();
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    total += vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
                }
            }
            total / (m * m) as f64
        };
        assert!(spread(400) < spread(100));
    }

    #[test]
    fn exponentiate_values() {
        let k = KernelMatrix::from_values(array![[1.0, 0.0], [0.0, 1.0]], KernelStage::IncidenceAverage).unwrap();
        let e = exponentiate(&k, 10.0).unwrap();
        assert_eq!(e.values[[0, 1]], 1.0);
        assert!((e.values[[0, 0]] - 1.10517).abs() < 1e-5);
        assert_eq!(e.values[[0, 0]], (0.1f64).exp());
        assert_eq!(e.stage, KernelStage::Exponentiated { beta: 10.0 });
        assert!(exponentiate(&k, 0.0).is_err());
        assert!(exponentiate(&k, -1.0).is_err());
        assert!(exponentiate(&e, 1.0).is_err());
    }

    #[test]
    fn exponentiate_preserves_order_and_range() {
        let ds = make_blobs(40, 2, 2, 3.0, 2).unwrap();
        let k = build_incidence(&ds.points(), 50, 8, Splitter::Median, &RandomStream::root(1)).unwrap();
        let beta = 20.0;
        let e = exponentiate(&k, beta).unwrap();
        let top = (1.0 / beta).exp();
        let flat: Vec<(f64, f64)> = k.values.iter().copied().zip(e.values.iter().copied()).collect();
        for &(a, ea) in &flat {
            assert!((1.0..=top).contains(&ea));
            for &(b, eb) in &flat {
                if a > b {
                    assert!(ea > eb);
                }
            }
        }
        for i in 0..40 {
            assert_eq!(e.values[[i, i]], top);
        }
    }

    #[test]
    fn gaussian_values() {
        let sigma = 0.7;
        let pts = array![[0.0], [sigma * 2f64.sqrt()]];
        let k = gaussian_kernel(&pts.view(), sigma).unwrap();
        assert_eq!(k.values[[0, 0]], 1.0);
        assert!((k.values[[0, 1]] - (-1.0f64).exp()).abs() < 1e-12);
        assert!((k.values[[0, 1]] - 0.36788).abs() < 1e-5);
        assert!(gaussian_kernel(&pts.view(), 0.0).is_err());
    }

    #[test]
    fn gaussian_widens_monotonically() {
        let pts = array![[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5]];
        let mut prev = gaussian_kernel(&pts.view(), 0.5).unwrap();
        for sigma in [1.0, 2.0, 5.0, 50.0, 500.0] {
            let k = gaussian_kernel(&pts.view(), sigma).unwrap();
            for (a, b) in k.values.iter().zip(prev.values.iter()) {
                assert!(a >= b && *a <= 1.0 && *a > 0.0);
            }
            prev = k;
        }
        assert!(prev.values.iter().all(|&v| v > 0.999));
    }

    #[test]
    fn upper_triangle_round_trip() {
        let ds = make_blobs(12, 2, 2, 3.0, 2).unwrap();
        let k = gaussian_kernel(&ds.points(), 1.3).unwrap();
        let tmp = tempfile::NamedTempFile::new().unwrap();
        k.write_upper_triangle(tmp.path()).unwrap();
        let text = std::fs::read_to_string(tmp.path()).unwrap();
        let values: usize = text.lines().skip(1).map(|l| l.split(',').count()).sum();
        assert_eq!(values, 12 * 13 / 2);
        let back = KernelMatrix::read_upper_triangle(tmp.path(), k.stage).unwrap();
        assert_eq!(back.values, k.values);
    }

    #[test]
    fn rejects_asymmetric_input() {
        assert!(KernelMatrix::from_values(array![[1.0, 0.5], [0.4, 1.0]], KernelStage::IncidenceAverage).is_err());
    }
}
