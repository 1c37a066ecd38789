//! Command implementations behind the `vfl` binary.

pub mod bench;
pub mod config;
pub mod selftest;
pub mod session;

use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use vfl_core::adversary::{detection_suite, DetectionReport};

use crate::config::RunConfig;

pub const DETECTION_CSV: &str = "detection.csv";

/// Runs every tamper mode `trials` times under `cfg` and writes
/// `detection.csv` into `out`.
pub fn cmd_adversary(cfg: &RunConfig, trials: usize, out: &Path) -> Result<DetectionReport> {
    let session = cfg.session_config()?;
    let pp = Arc::new(session.public_params()?);
    let seed = u64::from_le_bytes(cfg.derive(b"adversary")[..8].try_into().unwrap());
    let report = detection_suite(&session, &pp, trials, seed)?;
    std::fs::create_dir_all(out)?;
    let path = out.join(DETECTION_CSV);
    std::fs::write(&path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    Ok(report)
}
