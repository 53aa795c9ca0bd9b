use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde::de::DeserializeOwned;

use dcc::dataset::{load_csv, make_blobs, make_rings, write_csv, CsvOptions, Dataset, LabelColumn};
use dcc::dc2::{approximation_mse, choose_node_size, compress, partition as divide, Scheme, SignatureFile, SignatureMode};
use dcc::metrics::clustering_accuracy;
use dcc::pipelines::{self, Execution, Method, MethodConfig};
use dcc::rng::RandomStream;
use dcc::rptree::Splitter;

use crate::record::{signature_distortion, RunRecord};
use crate::{CliError, CliResult, InputArgs};

/// Parses a lowercase serde enum name such as `projection` or `sequential`.
pub fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|e| e.to_string())
}

pub fn parse_label_column(s: &str) -> LabelColumn {
    match s.parse::<usize>() {
        Ok(i) => LabelColumn::Index(i),
        Err(_) => LabelColumn::Name(s.to_string()),
    }
}

pub fn load_input(args: &InputArgs) -> CliResult<Dataset> {
    let options = CsvOptions {
        label_column: args.label_column.as_deref().map(parse_label_column),
        standardize: args.standardize,
    };
    let load = load_csv(&args.input, &options)?;
    if !load.dropped_lines.is_empty() {
        log::warn!(
            "{}: dropped {} rows with missing values (first at line {})",
            args.input.display(),
            load.dropped_lines.len(),
            load.dropped_lines[0]
        );
    }
    Ok(load.dataset)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Number of partitions.
    #[arg(long, default_value_t = 1)]
    pub parts: usize,
    /// Approximate number of signatures to produce.
    #[arg(long, default_value_t = 1000)]
    pub target_sigs: usize,
    #[arg(long, default_value = "projection", value_parser = parse_enum::<Scheme>)]
    pub scheme: Scheme,
    #[arg(long, default_value = "centroid", value_parser = parse_enum::<SignatureMode>)]
    pub signature_mode: SignatureMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Signature file to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn partition(args: &PartitionArgs) -> CliResult<()> {
    let data = load_input(&args.input)?;
    let points = data.points();
    let root = RandomStream::root(args.seed);
    let n_s = choose_node_size(data.len(), args.target_sigs.min(data.len()))?;
    let plan = divide(&points, args.parts, args.scheme, &root.derive(0))?;
    let sigs = compress(&points, &plan, n_s, Splitter::Median, args.signature_mode, &root.derive(1))?;
    let mse = approximation_mse(&points, &sigs)?;
    SignatureFile::new(&sigs, args.seed, args.scheme, args.parts, n_s, args.signature_mode).save(&args.out)?;
    let mut per_partition = vec![0; args.parts];
    for &p in &sigs.owner_partition {
        per_partition[p] += 1;
    }
    println!("m = {}", sigs.len());
    println!("partition sizes = {:?}", plan.sizes());
    println!("signatures per partition = {per_partition:?}");
    println!("mse = {mse}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// TOML file with method settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// rpfcluster+, kasp, rasp or kmeans.
    #[arg(long)]
    pub method: Option<Method>,
    /// Number of clusters; defaults to the number of classes in the labels.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub parts: Option<usize>,
    #[arg(long, value_parser = parse_enum::<Scheme>)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub target_sigs: Option<usize>,
    /// Forest size.
    #[arg(long)]
    pub trees: Option<usize>,
    /// Forest node size.
    #[arg(long)]
    pub node_size: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_parser = parse_enum::<Execution>)]
    pub execution: Option<Execution>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Signature file from `partition` to cluster instead of compressing.
    #[arg(long)]
    pub signatures: Option<PathBuf>,
    /// Also report the Laplacian distortion of the compression (small data only).
    #[arg(long)]
    pub distortion: bool,
    /// Result JSON; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV with the label of every point.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

impl ClusterArgs {
    pub fn method_config(&self, data: &Dataset) -> CliResult<MethodConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                toml::from_str(&text).map_err(|e| CliError::Spec {
                    path: path.clone(),
                    message: e.to_string(),
                })?
            }
            None => MethodConfig {
                k: 0,
                ..MethodConfig::default()
            },
        };
        macro_rules! apply {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { cfg.$field = v; })*
            };
        }
        apply!(method => method, k => k, parts => n_p, scheme => scheme, target_sigs => target_signatures,
            trees => trees, node_size => forest_n_s, beta => beta, sigma => sigma,
            execution => execution, seed => seed);
        if cfg.k == 0 {
            cfg.k = data
                .class_count()
                .ok_or_else(|| CliError::Usage("--k is required for unlabeled data".into()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn cluster(args: &ClusterArgs) -> CliResult<()> {
    let data = load_input(&args.input)?;
    let cfg = args.method_config(&data)?;
    let result = match &args.signatures {
        Some(path) => {
            let sigs = SignatureFile::load(path)?.to_signature_set()?;
            let compressed = pipelines::from_signatures(sigs, &cfg)?;
            let bandwidth = cfg
                .bandwidth_value()
                .ok_or_else(|| CliError::Usage(format!("{} does not use signatures", cfg.method)))?;
            pipelines::conquer(&data, &cfg, &compressed, bandwidth)?
        }
        None => pipelines::run(&data, &cfg)?,
    };
    let mut record = RunRecord::from_result(&data, &result)?;
    if args.distortion {
        record.laplacian_distortion = signature_distortion(&data, &result, cfg.sigma)?;
    }
    let json = serde_json::to_string_pretty(&record)?;
    match &args.out {
        Some(path) => write_text(path, &json)?,
        None => println!("{json}"),
    }
    if let Some(path) = &args.labels_out {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
        w.write_record(["label"]).map_err(|e| CliError::csv(path, e))?;
        for l in &result.labels {
            w.write_record([l.to_string()]).map_err(|e| CliError::csv(path, e))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    log::info!(
        "{}: m={:?} accuracy={:?} total={:.1} ms",
        cfg.method,
        record.m,
        record.accuracy,
        result.total_ms()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled data set (use --label-column).
    #[command(flatten)]
    pub input: InputArgs,
    /// CSV of predicted labels with a `label` column, as written by `cluster --labels-out`.
    #[arg(long)]
    pub predicted: PathBuf,
    /// Report JSON; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn read_labels(path: &Path) -> CliResult<Vec<usize>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let headers = r.headers().map_err(|e| CliError::csv(path, e))?.clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| CliError::Usage(format!("{}: no `label` column", path.display())))?;
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        let cell = rec.get(col).unwrap_or("").trim();
        let label = cell.parse::<usize>().map_err(|_| {
            CliError::Usage(format!("{}: line {}: bad label '{cell}'", path.display(), line + 2))
        })?;
        labels.push(label);
    }
    Ok(labels)
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let data = load_input(&args.input)?;
    let truth = data
        .labels()
        .ok_or_else(|| CliError::Usage("eval needs --label-column for the true labels".into()))?;
    let predicted = read_labels(&args.predicted)?;
    let report = clustering_accuracy(truth, &predicted)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => write_text(path, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(subcommand)]
    pub kind: Generator,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// CSV file to write; features then a `label` column.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Generator {
    /// Gaussian blobs with unit noise.
    Blobs {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 8.0)]
        separation: f64,
    },
    /// Concentric noisy rings in the plane.
    Rings {
        #[arg(long)]
        n: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,5")]
        radii: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
    },
}

pub fn generate(args: &GenerateArgs) -> CliResult<()> {
    let out = args
        .out
        .as_ref()
        .ok_or_else(|| CliError::Usage("--out is required".into()))?;
    let data = match &args.kind {
        Generator::Blobs { n, d, k, separation } => make_blobs(*n, *d, *k, *separation, args.seed)?,
        Generator::Rings { n, radii, noise } => make_rings(*n, radii, *noise, args.seed)?,
    };
    write_csv(&data, out)?;
    Ok(())
}
