//! Tabular datasets: CSV ingestion, standardization and synthetic generators.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// An `n x d` matrix of finite reals with optional class labels in `1..=l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Array2<f64>,
    labels: Option<Vec<usize>>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(points: Array2<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "dataset must have at least one row and one column, got {n}x{d}"
            )));
        }
        if let Some((idx, _)) = points.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at row {}, column {}",
                idx / d,
                idx % d
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::invalid(format!(
                    "{} labels for {n} points",
                    labels.len()
                )));
            }
            if labels.contains(&0) {
                return Err(Error::invalid("labels must be in 1..=l"));
            }
        }
        Ok(Self {
            points,
            labels,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dim() {
            return Err(Error::invalid(format!(
                "{} feature names for {} columns",
                names.len(),
                self.dim()
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Number of distinct classes, when labelled.
    pub fn class_count(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().collect::<BTreeSet<_>>().len())
    }

    /// Rescales each column to sample mean 0 and sample variance 1.
    /// Constant columns are centered only.
    pub fn standardize(&mut self) {
        standardize_columns(&mut self.points);
    }
}

fn standardize_columns(points: &mut Array2<f64>) {
    let n = points.nrows();
    for mut col in points.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n as f64;
        col.mapv_inplace(|v| v - mean);
        let var = if n > 1 {
            col.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        if var > 0.0 {
            let sd = var.sqrt();
            col.mapv_inplace(|v| v / sd);
        }
    }
}

/// Which column, if any, carries class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    pub label_column: Option<LabelColumn>,
    pub standardize: bool,
}

/// A loaded dataset together with the data rows that were dropped for
/// missing values (1-based file line numbers).
#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub dataset: Dataset,
    pub dropped_lines: Vec<usize>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "?" | "NA" | "na" | "NaN" | "nan" | "null" | "NULL")
}

/// Reads a comma separated file with an optional header row.
///
/// The first line is treated as a header when any of its cells fails to
/// parse as a number. Rows with a missing cell are dropped and reported;
/// any other non-numeric feature cell is an error naming line and column.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<CsvLoad> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        records.push((line, rec));
    }
    if records.is_empty() {
        return Err(Error::invalid(format!("{}: no rows", path.display())));
    }

    let first = &records[0].1;
    let has_header = first
        .iter()
        .any(|c| !is_missing(c) && c.parse::<f64>().is_err());
    let header: Option<Vec<String>> = if has_header {
        Some(first.iter().map(str::to_owned).collect())
    } else {
        None
    };
    let rows = if has_header { &records[1..] } else { &records[..] };
    let width = first.len();

    let label_idx = match &options.label_column {
        None => None,
        Some(LabelColumn::Index(i)) => {
            if *i >= width {
                return Err(Error::invalid(format!(
                    "label column {i} out of range for {width} columns"
                )));
            }
            Some(*i)
        }
        Some(LabelColumn::Name(name)) => {
            let header = header.as_ref().ok_or_else(|| {
                Error::invalid(format!("label column `{name}` requested but file has no header"))
            })?;
            Some(header.iter().position(|h| h == name).ok_or_else(|| {
                Error::invalid(format!("no column named `{name}`"))
            })?)
        }
    };
    let d = width - usize::from(label_idx.is_some());
    if d == 0 {
        return Err(Error::invalid("no feature columns"));
    }

    let mut values = Vec::with_capacity(rows.len() * d);
    let mut raw_labels = Vec::new();
    let mut dropped_lines = Vec::new();
    'rows: for (line, rec) in rows {
        if rec.len() != width {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: *line,
                column: rec.len().min(width),
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        if rec.iter().any(is_missing) {
            dropped_lines.push(*line);
            continue 'rows;
        }
        for (col, cell) in rec.iter().enumerate() {
            if Some(col) == label_idx {
                raw_labels.push(cell.to_owned());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_owned(),
                line: *line,
                column: col,
                message: format!("non-numeric value `{cell}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: *line,
                    column: col,
                    message: format!("non-finite value `{cell}`"),
                });
            }
            values.push(v);
        }
    }
    if !dropped_lines.is_empty() {
        log::warn!(
            "{}: dropped {} rows with missing values",
            path.display(),
            dropped_lines.len()
        );
    }
    let n = values.len() / d;
    if n == 0 {
        return Err(Error::invalid(format!(
            "{}: every row has missing values",
            path.display()
        )));
    }

    let mut points = Array2::from_shape_vec((n, d), values)
        .map_err(|e| Error::invalid(e.to_string()))?;
    if options.standardize {
        standardize_columns(&mut points);
    }
    let labels = label_idx.map(|_| encode_labels(&raw_labels));
    let mut dataset = Dataset::new(points, labels)?;
    if let Some(header) = header {
        let names = header
            .into_iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != label_idx)
            .map(|(_, h)| h)
            .collect();
        dataset = dataset.with_feature_names(names)?;
    }
    Ok(CsvLoad {
        dataset,
        dropped_lines,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_owned(),
            line,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Maps raw label strings to `1..=l`, ordered numerically when every label
/// is numeric and lexicographically otherwise.
fn encode_labels(raw: &[String]) -> Vec<usize> {
    let numeric: Option<Vec<f64>> = raw.iter().map(|s| s.parse::<f64>().ok()).collect();
    let mut distinct: Vec<&String> = raw.iter().collect::<BTreeSet<_>>().into_iter().collect();
    if let Some(nums) = &numeric {
        let lookup = |s: &String| nums[raw.iter().position(|r| r == s).unwrap()];
        distinct.sort_by(|a, b| lookup(a).total_cmp(&lookup(b)));
    }
    raw.iter()
        .map(|s| distinct.iter().position(|d| *d == s).unwrap() + 1)
        .collect()
}

/// Writes points (and labels as a trailing `label` column) as CSV with a header.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header: Vec<String> = match dataset.feature_names() {
        Some(names) => names.to_vec(),
        None => (0..dataset.dim()).map(|j| format!("x{j}")).collect(),
    };
    if dataset.labels().is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, row) in dataset.points().rows().into_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(labels) = dataset.labels() {
            rec.push(labels[i].to_string());
        }
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Centers of `k` blobs in `d` dimensions with pairwise distance at least
/// `separation`.
pub fn blob_centers(d: usize, k: usize, separation: f64, seed: u64) -> Result<Array2<f64>> {
    if d == 0 || k == 0 {
        return Err(Error::invalid("blob centers need d >= 1 and k >= 1"));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::invalid("separation must be positive"));
    }
    let mut stream = RandomStream::root(seed).derive(0);
    // Box whose volume comfortably holds k separated centers.
    let half = separation * (k as f64).powf(1.0 / d as f64);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while centers.len() < k && attempts < 10_000 {
        attempts += 1;
        let c: Vec<f64> = (0..d).map(|_| (2.0 * stream.uniform() - 1.0) * half).collect();
        if centers.iter().all(|o| dist2(o, &c).sqrt() >= separation) {
            centers.push(c);
        }
    }
    if centers.len() < k {
        // Evenly spaced along a random line always satisfies the separation.
        let dir = stream.random_unit_direction(d)?;
        centers = (0..k)
            .map(|j| dir.iter().map(|u| u * separation * j as f64).collect())
            .collect();
    }
    Ok(Array2::from_shape_fn((k, d), |(i, j)| centers[i][j]))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `k` isotropic unit-variance Gaussian clusters with balanced sizes.
/// Point `i` belongs to cluster `i mod k`; labels are `1..=k`.
pub fn make_blobs(n: usize, d: usize, k: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if k == 0 || n < k {
        return Err(Error::invalid(format!("make_blobs needs n >= k >= 1, got n={n}, k={k}")));
    }
    let centers = blob_centers(d, k, separation, seed)?;
    let mut stream = RandomStream::root(seed).derive(1);
    let mut points = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in points.rows_mut().into_iter().enumerate() {
        let c = i % k;
        for (j, v) in row.iter_mut().enumerate() {
            *v = centers[[c, j]] + stream.standard_normal();
        }
        labels.push(c + 1);
    }
    Dataset::new(points, Some(labels))
}

/// Concentric noisy rings in the plane. Points are spread evenly over the
/// rings and labelled by ring (innermost is 1).
pub fn make_rings(n: usize, radii: &[f64], noise_std: f64, seed: u64) -> Result<Dataset> {
    if radii.is_empty() || n < radii.len() {
        return Err(Error::invalid("make_rings needs at least one ring and one point per ring"));
    }
    if radii[0] <= 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("radii must be positive and strictly increasing"));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::invalid("noise_std must be non-negative"));
    }
    let r = radii.len();
    let mut stream = RandomStream::root(seed);
    let mut points = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in points.rows_mut().into_iter().enumerate() {
        let ring = i % r;
        let angle = stream.uniform() * std::f64::consts::TAU;
        let radius = if noise_std > 0.0 {
            radii[ring] + noise_std * stream.standard_normal()
        } else {
            radii[ring]
        };
        row[0] = radius * angle.cos();
        row[1] = radius * angle.sin();
        labels.push(ring + 1);
    }
    Dataset::new(points, Some(labels))
}
