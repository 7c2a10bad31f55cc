//! Run configuration file: a strict-schema JSON document whose values seed
//! the command line defaults and are echoed verbatim into the run manifest.

use anyhow::{Context, Result};
use docadv_core::attack_text::DiacriticConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub surrogate: Option<PathBuf>,
    pub predictor: Option<PathBuf>,
    pub scenario: Option<String>,
    pub granularity: Option<String>,
    pub method: Option<String>,
    pub tau: Option<f64>,
    pub rho: Option<f64>,
    pub text_mode: Option<String>,
    pub augment: Option<bool>,
    pub pgd: Option<PgdSection>,
    pub diacritic: Option<DiacriticConfig>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub keep_traces: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgdSection {
    pub steps: usize,
    pub alpha: f64,
    pub lambda_box: f64,
}

impl Default for PgdSection {
    fn default() -> Self {
        PgdSection {
            steps: 10,
            alpha: 0.05,
            lambda_box: 1.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let bytes =
            std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_slice(&bytes).with_context(|| {
            format!(
                "parsing config {} (unknown keys are rejected)",
                path.display()
            )
        })?;
        Ok(cfg)
    }
}
