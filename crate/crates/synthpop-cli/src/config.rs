//! Run configuration: one JSON file per pipeline, with flat command-line
//! overrides applied on top.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use synthpop::privacy::DpConfig;
use synthpop::solver::SolveConfig;
use synthpop::validation::GroupSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    Quiet,
    #[default]
    Info,
    Debug,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_path: PathBuf,
    pub tables_path: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub dp: DpConfig,
    #[serde(default)]
    pub validation_groups: Option<Vec<GroupSpec>>,
    #[serde(default)]
    pub log_level: LogLevel,
}

pub struct LoadedConfig {
    pub run: RunConfig,
    /// FNV-1a of the raw config bytes, recorded in run manifests.
    pub hash: String,
}

impl LoadedConfig {
    /// Read and parse a config file. Relative paths inside the file are
    /// resolved against the file's own directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut run: RunConfig = serde_json::from_slice(&bytes)
            .with_context(|| format!("parsing config file {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut run.schema_path, &mut run.tables_path, &mut run.output_dir] {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        let hash = format!("{:016x}", synthpop::rng::fnv1a64(&bytes));
        Ok(Self { run, hash })
    }

    pub fn log(&self, level: LogLevel, msg: &str) {
        if level <= self.run.log_level {
            eprintln!("{msg}");
        }
    }
}
