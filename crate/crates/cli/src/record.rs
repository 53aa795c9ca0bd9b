//! Per-run result files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use dcc::dataset::Dataset;
use dcc::metrics::{clustering_accuracy, laplacian_distortion};
use dcc::pipelines::{ClusterResult, Method, MethodConfig};
use dcc::rpfkernel::gaussian_kernel;

use crate::{CliError, CliResult};

/// Largest data set for which the dense Laplacian distortion is computed.
pub const DISTORTION_MAX_POINTS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    /// Position of the method in a bench spec's method list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method_index: Option<usize>,
    pub method: Method,
    pub config: MethodConfig,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub m: Option<usize>,
    pub accuracy: Option<f64>,
    pub mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub laplacian_distortion: Option<f64>,
    /// Bandwidth the run used (the best one when a sweep was run).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    pub stage_times_ms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn from_result(data: &Dataset, result: &ClusterResult) -> CliResult<Self> {
        let accuracy = match data.labels() {
            Some(truth) => Some(clustering_accuracy(truth, &result.labels)?.accuracy),
            None => None,
        };
        Ok(Self {
            dataset: None,
            method_index: None,
            method: result.config.method,
            config: result.config.clone(),
            seed: result.config.seed,
            n: data.len(),
            d: data.dim(),
            k: result.config.k,
            m: result.signatures.as_ref().map(|s| s.len()),
            accuracy,
            mse: result.mse(data),
            laplacian_distortion: None,
            bandwidth: result.config.bandwidth_value(),
            stage_times_ms: result.stage_times.clone(),
            error: None,
        })
    }

    /// A record for a run that did not complete.
    pub fn failed(data: Option<&Dataset>, config: &MethodConfig, error: String) -> Self {
        Self {
            dataset: None,
            method_index: None,
            method: config.method,
            config: config.clone(),
            seed: config.seed,
            n: data.map_or(0, Dataset::len),
            d: data.map_or(0, Dataset::dim),
            k: config.k,
            m: None,
            accuracy: None,
            mse: None,
            laplacian_distortion: None,
            bandwidth: None,
            stage_times_ms: BTreeMap::new(),
            error: Some(error),
        }
    }

    pub fn total_ms(&self) -> Option<f64> {
        self.stage_times_ms.get("total").copied()
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Distortion between the Gaussian kernel on the points and on the points
/// replaced by their signatures.
pub fn signature_distortion(data: &Dataset, result: &ClusterResult, sigma: f64) -> CliResult<Option<f64>> {
    let Some(sigs) = &result.signatures else {
        return Ok(None);
    };
    if data.len() > DISTORTION_MAX_POINTS {
        return Err(CliError::Usage(format!(
            "Laplacian distortion is limited to {DISTORTION_MAX_POINTS} points, data has {}",
            data.len()
        )));
    }
    let full = gaussian_kernel(&data.points(), sigma)?;
    let lifted = gaussian_kernel(&sigs.lift().view(), sigma)?;
    Ok(Some(laplacian_distortion(&full, &lifted)?))
}
