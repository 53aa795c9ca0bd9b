//! Benchmark matrices: datasets x expanded methods x seeds, one result file
//! per run plus `runs.csv` and `summary.csv`.
//!
//! Spec format (TOML):
//!
//! ```toml
//! seed_count = 20            # or: seeds = [0, 1, 2]
//!
//! [[datasets]]
//! name = "blobs"
//! source = { kind = "blobs", n = 30000, d = 10, k = 3, separation = 8.0 }
//!
//! [[datasets]]
//! name = "mine"
//! source = { kind = "file", path = "data.csv", label_column = "label", standardize = true }
//!
//! [[methods]]
//! method = "rpfcluster_plus"
//! trees = 200
//!
//! [sweeps]
//! n_p = [1, 2, 4]
//! scheme = ["projection", "sampling"]
//! execution = ["parallel", "sequential"]
//! beta = [10.0, 20.0, 40.0]
//! sigma = [0.5, 1.0, 2.0]
//! ```
//!
//! Synthetic data is redrawn for every seed unless the source fixes its own
//! `seed`. With labels present, each run sweeps the bandwidth list of its
//! method and keeps the most accurate value.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dcc::dataset::{load_csv, make_blobs, make_rings, CsvOptions, Dataset};
use dcc::dc2::Scheme;
use dcc::metrics::clustering_accuracy;
use dcc::pipelines::{self, Execution, Method, MethodConfig};

use crate::commands::parse_label_column;
use crate::record::RunRecord;
use crate::{CliError, CliResult};

pub const DEFAULT_SEED_COUNT: usize = 20;

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// TOML bench spec.
    pub spec: PathBuf,
    /// Output directory; overrides the spec's `output_dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Run independent runs concurrently. Timings are then not comparable.
    #[arg(long)]
    pub parallel_runs: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub datasets: Vec<DatasetSpec>,
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub sweeps: Sweeps,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub seed_count: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub source: Source,
    /// Cluster count; defaults to the number of classes.
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Source {
    Blobs {
        n: usize,
        d: usize,
        k: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Rings {
        n: usize,
        radii: Vec<f64>,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    File {
        path: PathBuf,
        #[serde(default)]
        label_column: Option<String>,
        #[serde(default)]
        standardize: bool,
    },
}

fn default_separation() -> f64 {
    8.0
}

fn default_noise() -> f64 {
    0.1
}

/// Values to cross with every method. An empty list keeps the method's own value.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweeps {
    #[serde(default)]
    pub n_p: Vec<usize>,
    #[serde(default)]
    pub scheme: Vec<Scheme>,
    #[serde(default)]
    pub execution: Vec<Execution>,
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub sigma: Vec<f64>,
}

impl Sweeps {
    fn bandwidths(&self, method: Method) -> &[f64] {
        match method {
            Method::RpfclusterPlus => &self.beta,
            Method::Kasp | Method::Rasp => &self.sigma,
            Method::Kmeans => &[],
        }
    }
}

fn or_own<T: Clone>(values: &[T], own: T) -> Vec<T> {
    if values.is_empty() {
        vec![own]
    } else {
        values.to_vec()
    }
}

impl BenchSpec {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut spec: BenchSpec = toml::from_str(&text).map_err(|e| CliError::Spec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for ds in &mut spec.datasets {
            if let Source::File { path, .. } = &mut ds.source {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        if let Some(dir) = &mut spec.output_dir {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        spec.validate().map_err(|message| CliError::Spec {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.methods.is_empty() {
            return Err("bench spec lists no methods".into());
        }
        if self.datasets.is_empty() {
            return Err("bench spec lists no datasets".into());
        }
        if self.seeds.as_ref().is_some_and(Vec::is_empty) || self.seed_count == Some(0) {
            return Err("bench spec has no seeds".into());
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err("dataset names must be unique".into());
        }
        if self.sweeps.n_p.contains(&0) {
            return Err("n_p sweep values must be at least 1".into());
        }
        if let Some(b) = self.sweeps.beta.iter().chain(&self.sweeps.sigma).find(|&&b| !(b > 0.0 && b.is_finite())) {
            return Err(format!("bandwidth {b} must be positive"));
        }
        for cfg in &self.methods {
            let probe = MethodConfig { k: cfg.k.max(2), ..cfg.clone() };
            probe.validate().map_err(|e| format!("method {}: {e}", cfg.method))?;
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.seed_count.unwrap_or(DEFAULT_SEED_COUNT) as u64).collect(),
        }
    }

    /// Every method crossed with the n_p, scheme and execution sweeps.
    /// Only rpfCluster+ partitions its input, so the other methods are only
    /// crossed with execution.
    pub fn expanded_methods(&self) -> Vec<(usize, MethodConfig)> {
        let mut out = Vec::new();
        for (index, cfg) in self.methods.iter().enumerate() {
            let partitioned = cfg.method == Method::RpfclusterPlus;
            let n_ps = if partitioned { or_own(&self.sweeps.n_p, cfg.n_p) } else { vec![cfg.n_p] };
            let schemes = if partitioned { or_own(&self.sweeps.scheme, cfg.scheme) } else { vec![cfg.scheme] };
            for &n_p in &n_ps {
                for &scheme in &schemes {
                    for &execution in &or_own(&self.sweeps.execution, cfg.execution) {
                        out.push((
                            index,
                            MethodConfig {
                                n_p,
                                scheme,
                                execution,
                                ..cfg.clone()
                            },
                        ));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PlannedRun {
    pub dataset: usize,
    pub method_index: usize,
    pub config: MethodConfig,
}

impl PlannedRun {
    pub fn file_stem(&self, spec: &BenchSpec) -> String {
        let c = &self.config;
        let scheme = match c.scheme {
            Scheme::Projection => "projection",
            Scheme::Sampling => "sampling",
        };
        let execution = match c.execution {
            Execution::Parallel => "parallel",
            Execution::Sequential => "sequential",
        };
        format!(
            "{}_m{}-{}_np{}_{scheme}_{execution}_seed{}",
            spec.datasets[self.dataset].name, self.method_index, c.method, c.n_p, c.seed
        )
    }
}

/// All runs in execution order.
pub fn plan(spec: &BenchSpec) -> Vec<PlannedRun> {
    let methods = spec.expanded_methods();
    let mut runs = Vec::new();
    for dataset in 0..spec.datasets.len() {
        for (method_index, cfg) in &methods {
            for seed in spec.seeds() {
                runs.push(PlannedRun {
                    dataset,
                    method_index: *method_index,
                    config: MethodConfig { seed, ..cfg.clone() },
                });
            }
        }
    }
    runs
}

fn materialize(source: &Source, seed: u64) -> CliResult<Dataset> {
    Ok(match source {
        Source::Blobs { n, d, k, separation, seed: fixed } => make_blobs(*n, *d, *k, *separation, fixed.unwrap_or(seed))?,
        Source::Rings { n, radii, noise, seed: fixed } => make_rings(*n, radii, *noise, fixed.unwrap_or(seed))?,
        Source::File {
            path,
            label_column,
            standardize,
        } => {
            let load = load_csv(
                path,
                &CsvOptions {
                    label_column: label_column.as_deref().map(parse_label_column),
                    standardize: *standardize,
                },
            )?;
            load.dataset
        }
    })
}

fn execute_run(spec: &BenchSpec, run: &PlannedRun, fixed: Option<&Dataset>) -> RunRecord {
    let ds_spec = &spec.datasets[run.dataset];
    let mut cfg = run.config.clone();
    let owned;
    let data = match fixed {
        Some(d) => d,
        None => match materialize(&ds_spec.source, cfg.seed) {
            Ok(d) => {
                owned = d;
                &owned
            }
            Err(e) => return RunRecord::failed(None, &cfg, e.to_string()),
        },
    };
    let outcome = (|| -> CliResult<RunRecord> {
        cfg.k = match ds_spec.k.or_else(|| data.class_count()) {
            Some(k) => k,
            None => return Err(CliError::Usage(format!("dataset {} needs k", ds_spec.name))),
        };
        let bandwidths = spec.sweeps.bandwidths(cfg.method);
        let result = if data.labels().is_some() && !bandwidths.is_empty() {
            let truth = data.labels().expect("checked");
            let mut best: Option<(f64, pipelines::ClusterResult)> = None;
            for r in pipelines::sweep(data, &cfg, bandwidths)? {
                let acc = clustering_accuracy(truth, &r.labels)?.accuracy;
                if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                    best = Some((acc, r));
                }
            }
            best.expect("non-empty sweep").1
        } else {
            pipelines::run(data, &cfg)?
        };
        RunRecord::from_result(data, &result)
    })();
    let mut record = outcome.unwrap_or_else(|e| RunRecord::failed(Some(data), &cfg, e.to_string()));
    record.dataset = Some(ds_spec.name.clone());
    record.method_index = Some(run.method_index);
    record
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub dataset: String,
    pub method_index: Option<usize>,
    pub method: String,
    pub n_p: usize,
    pub scheme: String,
    pub execution: String,
    pub seed: u64,
    pub bandwidth: Option<f64>,
    pub accuracy: Option<f64>,
    pub mse: Option<f64>,
    pub m: Option<usize>,
    pub total_ms: Option<f64>,
    pub error: Option<String>,
    pub result_file: String,
}

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn run_row(record: &RunRecord, result_file: String) -> RunRow {
    RunRow {
        dataset: record.dataset.clone().unwrap_or_default(),
        method_index: record.method_index,
        method: record.method.to_string(),
        n_p: record.config.n_p,
        scheme: enum_name(&record.config.scheme),
        execution: enum_name(&record.config.execution),
        seed: record.seed,
        bandwidth: record.bandwidth,
        accuracy: record.accuracy,
        mse: record.mse,
        m: record.m,
        total_ms: record.total_ms(),
        error: record.error.clone(),
        result_file,
    }
}

/// Stages reported in the summary, in column order.
pub const SUMMARY_STAGES: [&str; 6] = ["partition", "compress", "kernel", "spectral", "propagate", "kmeans"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub method_index: Option<usize>,
    pub method: String,
    pub n_p: usize,
    pub scheme: String,
    pub execution: String,
    pub runs: usize,
    pub failed: usize,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub total_ms_mean: Option<f64>,
    pub total_ms_std: Option<f64>,
    pub mse_mean: Option<f64>,
    pub mse_std: Option<f64>,
    /// Mean over seeds of MSE(sampling) / MSE(projection), on sampling rows.
    pub mse_ratio_mean: Option<f64>,
    pub partition_ms_mean: Option<f64>,
    pub compress_ms_mean: Option<f64>,
    pub kernel_ms_mean: Option<f64>,
    pub spectral_ms_mean: Option<f64>,
    pub propagate_ms_mean: Option<f64>,
    pub kmeans_ms_mean: Option<f64>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

type GroupKey = (String, Option<usize>, String, usize, String, String);

fn group_key(r: &RunRow) -> GroupKey {
    (r.dataset.clone(), r.method_index, r.method.clone(), r.n_p, r.scheme.clone(), r.execution.clone())
}

/// Groups runs by (dataset, method entry, n_p, scheme, execution).
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let rows: Vec<RunRow> = records.iter().map(|r| run_row(r, String::new())).collect();
    let mut groups: BTreeMap<GroupKey, Vec<(&RunRow, &RunRecord)>> = BTreeMap::new();
    for (row, rec) in rows.iter().zip(records) {
        groups.entry(group_key(row)).or_default().push((row, rec));
    }
    type PairKey = (String, Option<usize>, usize, String, u64);
    let pair_key = |r: &RunRow| -> PairKey { (r.dataset.clone(), r.method_index, r.n_p, r.execution.clone(), r.seed) };
    let projection_mse: BTreeMap<PairKey, f64> = rows
        .iter()
        .filter(|r| r.scheme == "projection")
        .filter_map(|r| Some((pair_key(r), r.mse?)))
        .collect();
    groups
        .into_iter()
        .map(|(key, members)| {
            let ok: Vec<&(&RunRow, &RunRecord)> = members.iter().filter(|(r, _)| r.error.is_none()).collect();
            let collect = |f: &dyn Fn(&RunRow, &RunRecord) -> Option<f64>| -> Vec<f64> {
                ok.iter().filter_map(|(r, rec)| f(r, rec)).collect()
            };
            let (accuracy_mean, accuracy_std) = mean_std(&collect(&|r, _| r.accuracy));
            let (total_ms_mean, total_ms_std) = mean_std(&collect(&|r, _| r.total_ms));
            let (mse_mean, mse_std) = mean_std(&collect(&|r, _| r.mse));
            let mse_ratio_mean = if key.4 == "sampling" {
                mean_std(&collect(&|r, _| {
                    let den = projection_mse.get(&pair_key(r))?;
                    let num = r.mse?;
                    Some(match (num == 0.0, *den == 0.0) {
                        (true, true) => 1.0,
                        (false, true) => f64::INFINITY,
                        _ => num / den,
                    })
                }))
                .0
            } else {
                None
            };
            let stage = |name: &str| mean_std(&collect(&|_, rec| rec.stage_times_ms.get(name).copied())).0;
            SummaryRow {
                runs: members.len(),
                failed: members.len() - ok.len(),
                accuracy_mean,
                accuracy_std,
                total_ms_mean,
                total_ms_std,
                mse_mean,
                mse_std,
                mse_ratio_mean,
                partition_ms_mean: stage(SUMMARY_STAGES[0]),
                compress_ms_mean: stage(SUMMARY_STAGES[1]),
                kernel_ms_mean: stage(SUMMARY_STAGES[2]),
                spectral_ms_mean: stage(SUMMARY_STAGES[3]),
                propagate_ms_mean: stage(SUMMARY_STAGES[4]),
                kmeans_ms_mean: stage(SUMMARY_STAGES[5]),
                dataset: key.0,
                method_index: key.1,
                method: key.2,
                n_p: key.3,
                scheme: key.4,
                execution: key.5,
            }
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn bench(args: &BenchArgs) -> CliResult<()> {
    let spec = BenchSpec::load(&args.spec)?;
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| spec.output_dir.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out-dir or set output_dir".into()))?;
    let runs_dir = out_dir.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| CliError::io(&runs_dir, e))?;

    // File datasets are read once, up front, so a bad file fails before any run.
    let mut fixed = Vec::new();
    for ds in &spec.datasets {
        fixed.push(match &ds.source {
            Source::File { .. } => Some(materialize(&ds.source, 0)?),
            _ => None,
        });
    }

    let planned = plan(&spec);
    log::info!("bench: {} runs into {}", planned.len(), out_dir.display());
    let work = |run: &PlannedRun| {
        let record = execute_run(&spec, run, fixed[run.dataset].as_ref());
        if let Some(e) = &record.error {
            log::warn!("{}: {e}", run.file_stem(&spec));
        }
        record
    };
    let records: Vec<RunRecord> = if args.parallel_runs {
        planned.par_iter().map(work).collect()
    } else {
        planned.iter().map(work).collect()
    };

    let mut rows = Vec::with_capacity(records.len());
    for (run, record) in planned.iter().zip(&records) {
        let name = format!("{}.json", run.file_stem(&spec));
        record.save(&runs_dir.join(&name))?;
        rows.push(run_row(record, format!("runs/{name}")));
    }
    write_rows(&out_dir.join("runs.csv"), &rows)?;
    let summary = summarize(&records);
    write_rows(&out_dir.join("summary.csv"), &summary)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{} runs ({} failed), {} groups; summary at {}",
        records.len(),
        failed,
        summary.len(),
        out_dir.join("summary.csv").display()
    );
    Ok(())
}
