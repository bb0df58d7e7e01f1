//! Per-run manifest: what produced the artifacts in an output directory.
//! Timestamps live here and nowhere else.

use std::time::{SystemTime, UNIX_EPOCH};

use pwcf::attacks::SolverChoice;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub metric: String,
    pub factor: f64,
    pub median_radius: f64,
    pub eps: f64,
    /// Samples with a feasible radius.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub binary_version: &'static str,
    pub schema_version: u32,
    pub config_path: Option<String>,
    /// SHA-256 of the config file bytes.
    pub config_sha256: Option<String>,
    pub seed: u64,
    pub jobs: usize,
    pub solver: SolverChoice,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub elapsed_ms: f64,
    pub calibration: Vec<Calibration>,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}
