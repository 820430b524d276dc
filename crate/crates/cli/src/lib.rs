//! Command-line front end: config handling, staged runs with cached
//! artifacts, synthetic subjects, evaluation and overlay export.

pub mod config;
pub mod evaluate;
pub mod overlay;
pub mod stages;
pub mod synth_cmd;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;

/// Reads a batch file: one config path per line, `#` starts a comment.
/// Relative paths are taken relative to the batch file.
pub fn read_batch(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| base.join(l))
        .collect())
}

/// Runs every config of a batch in parallel. Returns one result per config,
/// in batch order, so a failing subject does not hide the others.
pub fn run_batch(configs: &[PathBuf], overrides: &[String], force: bool) -> Vec<(PathBuf, Result<stages::ReportFile>)> {
    configs
        .par_iter()
        .map(|p| {
            let r = config::RunConfig::load(p).and_then(|mut cfg| {
                config::apply_overrides(&mut cfg, overrides)?;
                stages::run(&cfg, force)
            });
            (p.clone(), r)
        })
        .collect()
}
