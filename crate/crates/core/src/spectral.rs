//! Normalized graph Laplacian, spectral embedding and clustering.
//!
//! `L = D^{-1/2} (D - A) D^{-1/2}` with `D` the diagonal of row sums of the
//! affinity `A`. The embedding keeps the eigenvectors of the `k` smallest
//! eigenvalues (the trivial one included) and normalizes each row to unit
//! length before k-means, as in the Ng-Jordan-Weiss recipe.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};

use crate::baselines::{kmeans, DEFAULT_MAX_ITER, DEFAULT_RESTARTS};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    pub values: Array2<f64>,
    pub degrees: Vec<f64>,
}

/// Normalized Laplacian of a symmetric non-negative affinity matrix.
pub fn laplacian(affinity: &ArrayView2<f64>) -> Result<Laplacian> {
    let (m, c) = affinity.dim();
    if m != c {
        return Err(Error::invalid(format!("affinity must be square, got {m}x{c}")));
    }
    if affinity.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("affinity entries must be finite and non-negative"));
    }
    let degrees: Vec<f64> = affinity.rows().into_iter().map(|r| r.sum()).collect();
    if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
        return Err(Error::ZeroDegree(i));
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut values = Array2::zeros((m, m));
    for i in 0..m {
        values[[i, i]] = (degrees[i] - affinity[[i, i]]) / degrees[i];
        for j in 0..i {
            let v = -affinity[[i, j]] * (inv_sqrt[i] * inv_sqrt[j]);
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    Ok(Laplacian { values, degrees })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEmbedding {
    /// `m x k`, rows of unit length.
    pub coordinates: Array2<f64>,
    /// The `k` smallest eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Rows whose eigenvector entries were all zero; these are mapped to the
    /// first basis direction.
    pub zero_rows: Vec<usize>,
}

/// Full symmetric eigendecomposition, eigenvalues ascending. Each
/// eigenvector's sign is fixed so that its largest-magnitude entry is positive.
pub fn symmetric_eigen(matrix: &ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let m = matrix.nrows();
    let dm = DMatrix::from_fn(m, m, |i, j| matrix[[i, j]]);
    let eig = dm
        .try_symmetric_eigen(f64::EPSILON, 100 * m.max(10))
        .ok_or(Error::EigenNonConvergence(m))?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&c| eig.eigenvalues[c]).collect();
    let mut vectors = Array2::zeros((m, m));
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let pivot = col
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            vectors[[i, dst]] = sign * col[i];
        }
    }
    Ok((values, vectors))
}

/// Row-normalized eigenvectors of the `k` smallest eigenvalues.
pub fn embed(lap: &Laplacian, k: usize) -> Result<SpectralEmbedding> {
    let m = lap.values.nrows();
    if k == 0 || k > m {
        return Err(Error::invalid(format!("embedding dimension {k} must be in 1..={m}")));
    }
    let (values, vectors) = symmetric_eigen(&lap.values.view())?;
    let mut coordinates = vectors.slice(ndarray::s![.., ..k]).to_owned();
    let mut zero_rows = Vec::new();
    for (i, mut row) in coordinates.rows_mut().into_iter().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-300 {
            row /= norm;
        } else {
            row.fill(0.0);
            row[0] = 1.0;
            zero_rows.push(i);
        }
    }
    if !zero_rows.is_empty() {
        log::warn!("{} zero rows in spectral embedding", zero_rows.len());
    }
    Ok(SpectralEmbedding {
        coordinates,
        eigenvalues: values[..k].to_vec(),
        zero_rows,
    })
}

/// k-means (200 iterations, 20 restarts) on the embedding rows; labels in `1..=k`.
pub fn kway_cluster(embedding: &SpectralEmbedding, k: usize, stream: &RandomStream) -> Result<Vec<usize>> {
    if k > embedding.coordinates.ncols() {
        return Err(Error::invalid(format!(
            "embedding has {} columns, need at least {k}",
            embedding.coordinates.ncols()
        )));
    }
    Ok(kmeans(
        &embedding.coordinates.view(),
        k,
        DEFAULT_MAX_ITER,
        DEFAULT_RESTARTS,
        stream,
    )?
    .labels)
}

/// Two-way split from the second-smallest eigenvector, by 1-D 2-means on
/// its entries. Labels in `{1, 2}`.
pub fn bipartition(lap: &Laplacian) -> Result<Vec<usize>> {
    let m = lap.values.nrows();
    if m < 2 {
        return Err(Error::invalid("bipartition needs at least two points"));
    }
    let (_, vectors) = symmetric_eigen(&lap.values.view())?;
    let fiedler = vectors.column(1).to_owned().insert_axis(ndarray::Axis(1));
    // The 1-D problem is tiny; a fixed stream keeps this a pure function.
    Ok(kmeans(&fiedler.view(), 2, DEFAULT_MAX_ITER, DEFAULT_RESTARTS, &RandomStream::root(0))?.labels)
}

/// Frobenius norm of `L(b) - L(a)`.
pub fn laplacian_difference(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "affinity shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let la = laplacian(a)?;
    let lb = laplacian(b)?;
    Ok(la
        .values
        .iter()
        .zip(lb.values.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_blobs;
    use crate::rpfkernel::gaussian_kernel;
    use ndarray::array;

    fn block_diagonal(sizes: &[usize]) -> Array2<f64> {
        let m: usize = sizes.iter().sum();
        let mut block = vec![0; m];
        let mut at = 0;
        for (b, &s) in sizes.iter().enumerate() {
            block[at..at + s].fill(b);
            at += s;
        }
        Array2::from_shape_fn((m, m), |(i, j)| if block[i] == block[j] { 1.0 } else { 0.0 })
    }

    fn random_affinity(m: usize, seed: u64) -> Array2<f64> {
        let mut s = RandomStream::root(seed);
        let mut a = Array2::zeros((m, m));
        for i in 0..m {
            for j in 0..=i {
                let v = s.uniform() + 0.01;
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        a
    }

    #[test]
    fn two_by_two_all_ones() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let l = laplacian(&a.view()).unwrap();
        assert_eq!(l.degrees, vec![2.0, 2.0]);
        let expected = array![[0.5, -0.5], [-0.5, 0.5]];
        assert!((&l.values - &expected).iter().all(|v| v.abs() < 1e-15), "{}", l.values);
    }

    #[test]
    fn zero_degree_is_reported() {
        let a = array![[1.0, 0.0], [0.0, 0.0]];
        assert!(matches!(laplacian(&a.view()), Err(Error::ZeroDegree(1))));
        let neg = array![[1.0, -1.0], [-1.0, 1.0]];
        assert!(laplacian(&neg.view()).is_err());
    }

    #[test]
    fn blocks_give_zero_multiplicity() {
        let a = block_diagonal(&[3, 4, 5]);
        let l = laplacian(&a.view()).unwrap();
        let (vals, _) = symmetric_eigen(&l.values.view()).unwrap();
        assert!(vals[..3].iter().all(|v| v.abs() < 1e-9));
        assert!(vals[3] > 0.5);
    }

    #[test]
    fn laplacian_invariants_on_random_affinity() {
        for seed in 0..5 {
            let a = random_affinity(30, seed);
            let l = laplacian(&a.view()).unwrap();
            assert_eq!(l.values, l.values.t());
            let (vals, _) = symmetric_eigen(&l.values.view()).unwrap();
            assert!(vals[0] >= -1e-9 && *vals.last().unwrap() <= 2.0 + 1e-9);
            let null: Vec<f64> = l.degrees.iter().map(|d| d.sqrt()).collect();
            let scale = null.iter().map(|v| v * v).sum::<f64>().sqrt();
            for i in 0..30 {
                let r: f64 = (0..30).map(|j| l.values[[i, j]] * null[j]).sum();
                assert!(r.abs() < 1e-8 * scale);
            }
        }
    }

    #[test]
    fn block_embedding_rows_match_within_blocks() {
        let sizes = [4, 6, 5];
        let a = block_diagonal(&sizes);
        let l = laplacian(&a.view()).unwrap();
        let e = embed(&l, 3).unwrap();
        let block = |i: usize| if i < 4 { 0 } else if i < 10 { 1 } else { 2 };
        for i in 0..15 {
            let ri = e.coordinates.row(i);
            assert!((ri.dot(&ri) - 1.0).abs() < 1e-9);
            for j in 0..15 {
                let dot = ri.dot(&e.coordinates.row(j));
                if block(i) == block(j) {
                    assert!((dot.abs() - 1.0).abs() < 1e-9);
                } else {
                    assert!(dot.abs() < 1e-9);
                }
            }
        }
        let labels = kway_cluster(&e, 3, &RandomStream::root(1)).unwrap();
        for i in 0..15 {
            for j in 0..15 {
                assert_eq!(labels[i] == labels[j], block(i) == block(j));
            }
        }
    }

    #[test]
    fn full_basis_reconstructs() {
        let a = random_affinity(20, 7);
        let l = laplacian(&a.view()).unwrap();
        let (vals, q) = symmetric_eigen(&l.values.view()).unwrap();
        let recon = q.dot(&Array2::from_diag(&ndarray::Array1::from(vals.clone()))).dot(&q.t());
        let err = (&recon - &l.values).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err < 1e-6);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let e = embed(&l, 20).unwrap();
        assert_eq!(e.eigenvalues, vals);
    }

    #[test]
    fn single_point_embedding() {
        let l = laplacian(&array![[2.0]].view()).unwrap();
        let e = embed(&l, 1).unwrap();
        assert_eq!(e.coordinates, array![[1.0]]);
        assert_eq!(e.eigenvalues, vec![0.0]);
        assert!(embed(&l, 2).is_err());
    }

    #[test]
    fn kway_trivial_cases() {
        let a = random_affinity(12, 3);
        let l = laplacian(&a.view()).unwrap();
        let e = embed(&l, 12).unwrap();
        assert!(kway_cluster(&e, 1, &RandomStream::root(0)).unwrap().iter().all(|&v| v == 1));
        let mut all = kway_cluster(&e, 12, &RandomStream::root(0)).unwrap();
        all.sort_unstable();
        assert_eq!(all, (1..=12).collect::<Vec<_>>());
        let narrow = embed(&l, 2).unwrap();
        assert!(kway_cluster(&narrow, 3, &RandomStream::root(0)).is_err());
    }

    #[test]
    fn kway_is_permutation_equivariant() {
        let ds = make_blobs(60, 3, 3, 8.0, 4).unwrap();
        let k = gaussian_kernel(&ds.points(), 2.0).unwrap();
        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..60).collect();
            RandomStream::root(9).shuffle(&mut p);
            p
        };
        let permuted = Array2::from_shape_fn((60, 60), |(i, j)| k.values[[perm[i], perm[j]]]);
        let base = kway_cluster(&embed(&laplacian(&k.values.view()).unwrap(), 3).unwrap(), 3, &RandomStream::root(2)).unwrap();
        let moved = kway_cluster(&embed(&laplacian(&permuted.view()).unwrap(), 3).unwrap(), 3, &RandomStream::root(2)).unwrap();
        for i in 0..60 {
            for j in 0..60 {
                assert_eq!(moved[i] == moved[j], base[perm[i]] == base[perm[j]]);
            }
        }
    }

    #[test]
    fn bipartition_two_blocks() {
        let a = block_diagonal(&[5, 7]);
        let labels = bipartition(&laplacian(&a.view()).unwrap()).unwrap();
        assert!(labels[..5].iter().all(|&l| l == labels[0]));
        assert!(labels[5..].iter().all(|&l| l == labels[5]));
        assert_ne!(labels[0], labels[5]);
    }

    #[test]
    fn bipartition_path_graph() {
        let a = array![
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 1.0, 1.0, 0.0],
            [0.0, 1.0, 1.0, 1.0],
            [0.0, 0.0, 1.0, 1.0]
        ];
        let labels = bipartition(&laplacian(&a.view()).unwrap()).unwrap();
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[2], labels[3]);
        assert_ne!(labels[0], labels[2]);
    }

    #[test]
    fn bipartition_pair_and_validation() {
        let a = array![[1.0, 0.2], [0.2, 1.0]];
        let mut labels = bipartition(&laplacian(&a.view()).unwrap()).unwrap();
        labels.sort_unstable();
        assert_eq!(labels, vec![1, 2]);
        assert!(bipartition(&laplacian(&array![[1.0]].view()).unwrap()).is_err());
    }

    #[test]
    fn identical_affinities_have_zero_difference() {
        let a = random_affinity(10, 1);
        assert_eq!(laplacian_difference(&a.view(), &a.view()).unwrap(), 0.0);
        assert!(laplacian_difference(&a.view(), &random_affinity(9, 1).view()).is_err());
    }
}
