//! Lloyd's k-means with k-means++ seeding and independent restarts.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::RandomStream;

pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_RESTARTS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    /// Cluster of each point, in `1..=k`.
    pub labels: Vec<usize>,
    pub wcss: f64,
    pub iterations_used: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid (lowest index on ties).
pub fn nearest_centroid(point: &[f64], centroids: &ArrayView2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, row.as_slice().expect("standard layout"));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn row<'a>(points: &'a ArrayView2<f64>, i: usize) -> &'a [f64] {
    let (d, stride) = (points.ncols(), points.strides()[0] as usize);
    &points.as_slice().expect("standard layout")[i * stride..i * stride + d]
}

fn kmeans_plus_plus(points: &ArrayView2<f64>, k: usize, stream: &mut RandomStream) -> Array2<f64> {
    let (n, d) = points.dim();
    let mut centroids = Array2::zeros((k, d));
    let first = stream.index(n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(row(points, i), row(points, first)))
        .collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = stream.uniform() * total;
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // Rounding can run past the end; fall back to the last positive weight.
            if dist[chosen] == 0.0 {
                chosen = dist.iter().rposition(|&w| w > 0.0).expect("total > 0");
            }
            chosen
        } else {
            stream.index(n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        let new = row(points, pick);
        for (i, dv) in dist.iter_mut().enumerate() {
            *dv = dv.min(sq_dist(row(points, i), new));
        }
    }
    centroids
}

/// One restart: seeding plus Lloyd iterations until the assignment stops
/// changing or `max_iter` is reached. Also returns the WCSS after each
/// assignment step.
pub(crate) fn lloyd(
    points: &ArrayView2<f64>,
    k: usize,
    max_iter: usize,
    stream: &mut RandomStream,
) -> (KMeansResult, Vec<f64>) {
    let (n, d) = points.dim();
    let mut centroids = kmeans_plus_plus(points, k, stream);
    let mut assign = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        for i in 0..n {
            let (c, dd) = nearest_centroid(row(points, i), &centroids.view());
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
            dists[i] = dd;
        }
        trace.push(dists.iter().sum());
        if !changed || iterations >= max_iter {
            break;
        }
        iterations += 1;

        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            let mut row = sums.row_mut(c);
            row += &points.row(i);
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let mut row = centroids.row_mut(c);
                row.assign(&sums.row(c));
                row /= count as f64;
            }
        }
        // Empty clusters take the point farthest from its own centroid.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far = (usize::MAX, 0.0);
            for i in 0..n {
                if counts[assign[i]] < 2 {
                    continue;
                }
                let dd = sq_dist(row(points, i), centroids.row(assign[i]).as_slice().unwrap());
                if dd > far.1 {
                    far = (i, dd);
                }
            }
            if far.0 == usize::MAX {
                break;
            }
            let i = far.0;
            counts[assign[i]] -= 1;
            counts[c] += 1;
            assign[i] = c;
            centroids.row_mut(c).assign(&points.row(i));
        }
    }
    let wcss = *trace.last().expect("at least one assignment");
    (
        KMeansResult {
            centroids,
            labels: assign.into_iter().map(|c| c + 1).collect(),
            wcss,
            iterations_used: iterations,
        },
        trace,
    )
}

/// Best-of-`restarts` k-means. Restart `r` uses `derive(stream, r)`; ties in
/// WCSS go to the lowest restart index.
pub fn kmeans(
    points: &ArrayView2<f64>,
    k: usize,
    max_iter: usize,
    restarts: usize,
    stream: &RandomStream,
) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k-means needs 1 <= k <= n, got k={k}, n={n}")));
    }
    if restarts == 0 {
        return Err(Error::invalid("k-means needs at least one restart"));
    }
    let points = points.as_standard_layout();
    let points = points.view();
    let results: Vec<KMeansResult> = (0..restarts)
        .into_par_iter()
        .map(|r| lloyd(&points, k, max_iter, &mut stream.derive(r as u64)).0)
        .collect();
    Ok(results
        .into_iter()
        .enumerate()
        .min_by(|(ra, a), (rb, b)| a.wcss.total_cmp(&b.wcss).then(ra.cmp(rb)))
        .map(|(_, r)| r)
        .expect("restarts > 0"))
}
