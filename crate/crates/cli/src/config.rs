//! Optional TOML config file. Every key mirrors a flag; flags win.
//!
//! ```toml
//! seed = 7
//! parallelism = 4
//! log_level = "debug"
//!
//! [build_gt]
//! sigma_factor = 0.5
//!
//! [refine]
//! max_turns = 3
//! improvement_epsilon = 0.5
//! keep_best = true
//! endpoints = "http://127.0.0.1:8080"
//!
//! [mos]
//! outlier_scope = "per_image"
//! outlier_sigmas = 2.0
//! max_outlier_rate = 0.05
//! stats_scope = "per_dimension"
//! ```

use std::path::Path;

use editrefiner_core::mos::{OutlierScope, StatsScope};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub log_level: Option<String>,
    #[serde(default)]
    pub build_gt: BuildGtSection,
    #[serde(default)]
    pub refine: RefineSection,
    #[serde(default)]
    pub mos: MosSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildGtSection {
    pub sigma_factor: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineSection {
    pub max_turns: Option<u32>,
    pub improvement_epsilon: Option<f64>,
    pub keep_best: Option<bool>,
    pub endpoints: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MosSection {
    pub outlier_scope: Option<OutlierScope>,
    pub outlier_sigmas: Option<f64>,
    pub max_outlier_rate: Option<f64>,
    pub stats_scope: Option<StatsScope>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))
    }
}
