//! Divide-compress-and-conquer kernel learning and clustering.
//!
//! Large data sets are split into partitions by random projections, each
//! partition is compressed to the leaf signatures of an rpTree, and a random
//! projection forest kernel over the signatures drives spectral clustering.
//! Labels flow back to every point through its signature. KASP, RASP and
//! plain k-means are provided as baselines, together with the accuracy and
//! approximation metrics used to compare them.

pub mod baselines;
pub mod dataset;
pub mod dc2;
pub mod error;
pub mod metrics;
pub mod pipelines;
pub mod rng;
pub mod rpfkernel;
pub mod rptree;
pub mod spectral;

pub use error::{Error, Result};
