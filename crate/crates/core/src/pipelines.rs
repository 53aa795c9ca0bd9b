//! End-to-end clustering methods behind one interface.
//!
//! Every spectral method runs in two halves. The compression half turns the
//! data into a signature set (and, for the forest kernel, the incidence
//! average). The conquer half builds the bandwidth-dependent kernel, clusters
//! the signatures and hands each point its signature's label. Splitting the
//! work this way lets a bandwidth sweep reuse one compression.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{kmeans, nearest_centroid, DEFAULT_MAX_ITER, DEFAULT_RESTARTS};
use crate::dataset::Dataset;
use crate::dc2::{approximation_mse, choose_node_size, compress, partition, PartitionPlan, Scheme, SignatureMode, SignatureSet};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::rpfkernel::{build_incidence, exponentiate, gaussian_kernel, KernelMatrix};
use crate::rptree::Splitter;
use crate::spectral::{embed, kway_cluster, laplacian};

const STREAM_PARTITION: u64 = 0;
const STREAM_COMPRESS: u64 = 1;
const STREAM_FOREST: u64 = 2;
const STREAM_SPECTRAL: u64 = 3;
const STREAM_BASELINE: u64 = 4;

pub const STAGE_PARTITION: &str = "partition";
pub const STAGE_COMPRESS: &str = "compress";
pub const STAGE_KERNEL: &str = "kernel";
pub const STAGE_SPECTRAL: &str = "spectral";
pub const STAGE_PROPAGATE: &str = "propagate";
pub const STAGE_KMEANS: &str = "kmeans";
pub const STAGE_TOTAL: &str = "total";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(alias = "rpfcluster+")]
    RpfclusterPlus,
    Kasp,
    Rasp,
    Kmeans,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::RpfclusterPlus, Method::Kasp, Method::Rasp, Method::Kmeans];

    pub fn name(self) -> &'static str {
        match self {
            Method::RpfclusterPlus => "rpfcluster_plus",
            Method::Kasp => "kasp",
            Method::Rasp => "rasp",
            Method::Kmeans => "kmeans",
        }
    }

    /// Kernel bandwidth kind used by the method, if any.
    pub fn bandwidth(self) -> Option<Bandwidth> {
        match self {
            Method::RpfclusterPlus => Some(Bandwidth::Beta),
            Method::Kasp | Method::Rasp => Some(Bandwidth::Sigma),
            Method::Kmeans => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rpfcluster+" | "rpfcluster_plus" | "rpfcluster-plus" | "rpfclusterplus" => Ok(Method::RpfclusterPlus),
            "kasp" => Ok(Method::Kasp),
            "rasp" => Ok(Method::Rasp),
            "kmeans" | "k-means" => Ok(Method::Kmeans),
            _ => Err(Error::invalid(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bandwidth {
    /// Forest kernel exponent scale.
    Beta,
    /// Gaussian kernel width.
    Sigma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    #[default]
    Parallel,
    /// Everything on a single worker thread.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub method: Method,
    pub k: usize,
    pub n_p: usize,
    pub scheme: Scheme,
    pub target_signatures: usize,
    pub trees: usize,
    pub forest_n_s: usize,
    pub beta: f64,
    pub sigma: f64,
    pub kmeans_max_iter: usize,
    pub kmeans_restarts: usize,
    /// Lloyd iterations for the KASP compression step.
    pub compression_max_iter: usize,
    /// Restarts for the KASP compression step.
    pub compression_restarts: usize,
    pub signature_mode: SignatureMode,
    pub splitter: Splitter,
    pub execution: Execution,
    pub seed: u64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            method: Method::RpfclusterPlus,
            k: 2,
            n_p: 1,
            scheme: Scheme::Projection,
            target_signatures: 1000,
            trees: 800,
            forest_n_s: 30,
            beta: 20.0,
            sigma: 1.0,
            kmeans_max_iter: DEFAULT_MAX_ITER,
            kmeans_restarts: DEFAULT_RESTARTS,
            compression_max_iter: 30,
            compression_restarts: 1,
            signature_mode: SignatureMode::Centroid,
            splitter: Splitter::Median,
            execution: Execution::Parallel,
            seed: 0,
        }
    }
}

impl MethodConfig {
    pub fn new(method: Method, k: usize) -> Self {
        Self {
            method,
            k,
            ..Self::default()
        }
    }

    /// The bandwidth the configured method uses.
    pub fn bandwidth_value(&self) -> Option<f64> {
        self.method.bandwidth().map(|b| match b {
            Bandwidth::Beta => self.beta,
            Bandwidth::Sigma => self.sigma,
        })
    }

    fn with_bandwidth(&self, value: f64) -> Self {
        let mut cfg = self.clone();
        match self.method.bandwidth() {
            Some(Bandwidth::Beta) => cfg.beta = value,
            Some(Bandwidth::Sigma) => cfg.sigma = value,
            None => {}
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid(msg));
        let min_k = if self.method == Method::RpfclusterPlus { 2 } else { 1 };
        if self.k < min_k {
            return fail(format!("{} needs k >= {min_k}, got {}", self.method, self.k));
        }
        if self.n_p == 0 {
            return fail("n_p must be at least 1".into());
        }
        if self.target_signatures == 0 {
            return fail("target_signatures must be at least 1".into());
        }
        if self.trees == 0 {
            return fail("forest needs at least one tree".into());
        }
        if self.forest_n_s < 2 {
            return fail(format!("forest node size must be at least 2, got {}", self.forest_n_s));
        }
        for (name, v) in [("beta", self.beta), ("sigma", self.sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if self.kmeans_restarts == 0 || self.compression_restarts == 0 {
            return fail("k-means needs at least one restart".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Label of every point, in `1..=k`.
    pub labels: Vec<usize>,
    /// Wall milliseconds per stage, plus `total`.
    pub stage_times: BTreeMap<String, f64>,
    pub signature_count: usize,
    pub config: MethodConfig,
    /// Compression used, absent for plain k-means.
    pub signatures: Option<SignatureSet>,
}

impl ClusterResult {
    pub fn total_ms(&self) -> f64 {
        self.stage_times.get(STAGE_TOTAL).copied().unwrap_or(0.0)
    }

    /// Mean squared distance from points to their signatures.
    pub fn mse(&self, data: &Dataset) -> Option<f64> {
        self.signatures
            .as_ref()
            .and_then(|s| approximation_mse(&data.points(), s).ok())
    }
}

struct Timer(BTreeMap<String, f64>);

impl Timer {
    fn new() -> Self {
        Timer(BTreeMap::new())
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        *self.0.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64() * 1e3;
        Ok(out)
    }
}

/// Output of the bandwidth-independent half of a spectral method.
pub struct Compressed {
    signatures: SignatureSet,
    incidence: Option<KernelMatrix>,
    times: BTreeMap<String, f64>,
}

impl Compressed {
    pub fn signatures(&self) -> &SignatureSet {
        &self.signatures
    }
}

fn in_mode<T: Send>(execution: Execution, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match execution {
        Execution::Parallel => f(),
        Execution::Sequential => rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker: {e}")))?
            .install(f),
    }
}

fn check_size(data: &Dataset, cfg: &MethodConfig) -> Result<()> {
    if cfg.k > data.len() {
        return Err(Error::invalid(format!("k={} exceeds n={}", cfg.k, data.len())));
    }
    Ok(())
}

/// Runs the bandwidth-independent stages of a spectral method.
pub fn compress_stage(data: &Dataset, cfg: &MethodConfig) -> Result<Compressed> {
    cfg.validate()?;
    check_size(data, cfg)?;
    in_mode(cfg.execution, || compress_inner(data, cfg))
}

fn compress_inner(data: &Dataset, cfg: &MethodConfig) -> Result<Compressed> {
    let points = data.points();
    let n = data.len();
    let root = RandomStream::root(cfg.seed);
    let mut timer = Timer::new();
    let target = cfg.target_signatures.min(n);
    let (signatures, incidence) = match cfg.method {
        Method::RpfclusterPlus => {
            let plan = timer.time(STAGE_PARTITION, || {
                partition(&points, cfg.n_p, cfg.scheme, &root.derive(STREAM_PARTITION))
            })?;
            let sigs = timer.time(STAGE_COMPRESS, || {
                let n_s = choose_node_size(n, target)?;
                compress(&points, &plan, n_s, cfg.splitter, cfg.signature_mode, &root.derive(STREAM_COMPRESS))
            })?;
            let incidence = timer.time(STAGE_KERNEL, || {
                build_incidence(
                    &sigs.signatures.view(),
                    cfg.trees,
                    cfg.forest_n_s,
                    cfg.splitter,
                    &root.derive(STREAM_FOREST),
                )
            })?;
            (sigs, Some(incidence))
        }
        Method::Kasp => {
            let sigs = timer.time(STAGE_COMPRESS, || {
                let km = kmeans(
                    &points,
                    target,
                    cfg.compression_max_iter,
                    cfg.compression_restarts,
                    &root.derive(STREAM_COMPRESS),
                )?;
                SignatureSet::from_assignment(km.centroids, km.labels.iter().map(|l| l - 1).collect())
            })?;
            (sigs, None)
        }
        Method::Rasp => {
            let plan = PartitionPlan {
                n_p: 1,
                scheme: cfg.scheme,
                assignments: vec![0; n],
            };
            let sigs = timer.time(STAGE_COMPRESS, || {
                let n_s = choose_node_size(n, target)?;
                compress(&points, &plan, n_s, cfg.splitter, SignatureMode::Centroid, &root.derive(STREAM_COMPRESS))
            })?;
            (sigs, None)
        }
        Method::Kmeans => return Err(Error::invalid("k-means has no compression stage")),
    };
    Ok(Compressed {
        signatures,
        incidence,
        times: timer.0,
    })
}

/// Wraps an externally produced signature set (for example one loaded from
/// disk) so it can be clustered. The forest kernel is built here when the
/// method needs it.
pub fn from_signatures(signatures: SignatureSet, cfg: &MethodConfig) -> Result<Compressed> {
    cfg.validate()?;
    let mut timer = Timer::new();
    let incidence = match cfg.method {
        Method::RpfclusterPlus => Some(in_mode(cfg.execution, || {
            timer.time(STAGE_KERNEL, || {
                build_incidence(
                    &signatures.signatures.view(),
                    cfg.trees,
                    cfg.forest_n_s,
                    cfg.splitter,
                    &RandomStream::root(cfg.seed).derive(STREAM_FOREST),
                )
            })
        })?),
        Method::Rasp => None,
        Method::Kasp => return Err(Error::invalid("KASP signatures come from its own k-means step")),
        Method::Kmeans => return Err(Error::invalid("k-means does not use signatures")),
    };
    Ok(Compressed {
        signatures,
        incidence,
        times: timer.0,
    })
}

/// Kernel, spectral and propagation stages for one bandwidth.
pub fn conquer(data: &Dataset, cfg: &MethodConfig, compressed: &Compressed, bandwidth: f64) -> Result<ClusterResult> {
    let cfg = cfg.with_bandwidth(bandwidth);
    cfg.validate()?;
    in_mode(cfg.execution, || conquer_inner(data, cfg.clone(), compressed))
}

fn conquer_inner(data: &Dataset, cfg: MethodConfig, compressed: &Compressed) -> Result<ClusterResult> {
    let start = Instant::now();
    let sigs = &compressed.signatures;
    let m = sigs.len();
    if sigs.point_to_signature.len() != data.len() {
        return Err(Error::invalid(format!(
            "signatures cover {} points, data has {}",
            sigs.point_to_signature.len(),
            data.len()
        )));
    }
    if cfg.k > m {
        return Err(Error::invalid(format!(
            "k={} exceeds the {m} available signatures",
            cfg.k
        )));
    }
    let mut timer = Timer::new();
    let kernel = timer.time(STAGE_KERNEL, || match (&compressed.incidence, cfg.method) {
        (Some(inc), Method::RpfclusterPlus) => exponentiate(inc, cfg.beta),
        (None, Method::Kasp | Method::Rasp) => gaussian_kernel(&sigs.signatures.view(), cfg.sigma),
        _ => Err(Error::invalid(format!("compression does not match method {}", cfg.method))),
    })?;
    let sig_labels = timer.time(STAGE_SPECTRAL, || {
        let lap = laplacian(&kernel.values.view())?;
        let emb = embed(&lap, cfg.k)?;
        kway_cluster(&emb, cfg.k, &RandomStream::root(cfg.seed).derive(STREAM_SPECTRAL))
    })?;
    let (labels, signatures) = timer.time(STAGE_PROPAGATE, || {
        Ok(match cfg.method {
            Method::Kasp => {
                let points = data.points();
                let points = points.as_standard_layout();
                let centroids = sigs.signatures.view();
                let map: Vec<usize> = points
                    .rows()
                    .into_iter()
                    .map(|r| nearest_centroid(r.as_slice().expect("standard layout"), &centroids).0)
                    .collect();
                let labels = map.iter().map(|&s| sig_labels[s]).collect();
                (labels, SignatureSet::from_assignment(sigs.signatures.clone(), map)?)
            }
            _ => (
                sigs.point_to_signature.iter().map(|&s| sig_labels[s]).collect(),
                sigs.clone(),
            ),
        })
    })?;
    let mut stage_times = compressed.times.clone();
    let own = start.elapsed().as_secs_f64() * 1e3;
    for (stage, ms) in timer.0 {
        *stage_times.entry(stage).or_default() += ms;
    }
    let shared: f64 = compressed.times.values().sum();
    stage_times.insert(STAGE_TOTAL.into(), shared + own);
    Ok(ClusterResult {
        labels,
        stage_times,
        signature_count: m,
        config: cfg,
        signatures: Some(signatures),
    })
}

/// Runs a spectral method once per bandwidth, sharing the compression.
/// Results come back in the order of `bandwidths`. For k-means the
/// bandwidths are ignored and a single result is returned.
pub fn sweep(data: &Dataset, cfg: &MethodConfig, bandwidths: &[f64]) -> Result<Vec<ClusterResult>> {
    if cfg.method == Method::Kmeans {
        return Ok(vec![run(data, cfg)?]);
    }
    if bandwidths.is_empty() {
        return Err(Error::invalid("bandwidth sweep is empty"));
    }
    let compressed = compress_stage(data, cfg)?;
    bandwidths.iter().map(|&b| conquer(data, cfg, &compressed, b)).collect()
}

fn run_kmeans(data: &Dataset, cfg: &MethodConfig) -> Result<ClusterResult> {
    let start = Instant::now();
    let mut timer = Timer::new();
    let result = timer.time(STAGE_KMEANS, || {
        kmeans(
            &data.points(),
            cfg.k,
            cfg.kmeans_max_iter,
            cfg.kmeans_restarts,
            &RandomStream::root(cfg.seed).derive(STREAM_BASELINE),
        )
    })?;
    let mut stage_times = timer.0;
    stage_times.insert(STAGE_TOTAL.into(), start.elapsed().as_secs_f64() * 1e3);
    Ok(ClusterResult {
        labels: result.labels,
        stage_times,
        signature_count: data.len(),
        config: cfg.clone(),
        signatures: None,
    })
}

pub fn rpfcluster_plus(data: &Dataset, cfg: &MethodConfig) -> Result<ClusterResult> {
    run_as(data, cfg, Method::RpfclusterPlus)
}

pub fn kasp(data: &Dataset, cfg: &MethodConfig) -> Result<ClusterResult> {
    run_as(data, cfg, Method::Kasp)
}

pub fn rasp(data: &Dataset, cfg: &MethodConfig) -> Result<ClusterResult> {
    run_as(data, cfg, Method::Rasp)
}

fn run_as(data: &Dataset, cfg: &MethodConfig, method: Method) -> Result<ClusterResult> {
    let cfg = MethodConfig {
        method,
        ..cfg.clone()
    };
    run(data, &cfg)
}

/// Dispatches to the configured method.
pub fn run(data: &Dataset, cfg: &MethodConfig) -> Result<ClusterResult> {
    cfg.validate()?;
    check_size(data, cfg)?;
    match cfg.method {
        Method::Kmeans => in_mode(cfg.execution, || run_kmeans(data, cfg)),
        _ => {
            let compressed = compress_stage(data, cfg)?;
            conquer(data, cfg, &compressed, cfg.bandwidth_value().expect("spectral method"))
        }
    }
}
