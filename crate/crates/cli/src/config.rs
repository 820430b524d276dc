//! Run configuration (TOML) and the stage hashes stamped on artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lesionflow::mesh::io::Units;
use lesionflow::{AssignConfig, FlowConfig, PipelineConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub template: PathBuf,
    pub deformed_src: PathBuf,
    pub deformed_tgt: PathBuf,
    pub src_mesh: PathBuf,
    pub tgt_mesh: PathBuf,
    pub lesions_src: PathBuf,
    pub lesions_tgt: PathBuf,
    /// Only used by `evaluate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    #[serde(default)]
    pub units: Units,
    /// Recorded for provenance; every stage is deterministic.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesion_diffusion_time: Option<f64>,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub assign: AssignConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Reads a TOML file; relative paths are taken relative to its folder.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.template,
            &mut self.deformed_src,
            &mut self.deformed_tgt,
            &mut self.src_mesh,
            &mut self.tgt_mesh,
            &mut self.lesions_src,
            &mut self.lesions_tgt,
            &mut self.out_dir,
        ] {
            fix(p);
        }
        if let Some(g) = &mut self.ground_truth {
            fix(g);
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            flow: self.flow.clone(),
            assign: self.assign,
            lesion_diffusion_time: self.lesion_diffusion_time,
            skip_flow: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in self.input_files() {
            if !p.is_file() {
                bail!("config field '{name}' points to {}, which does not exist", p.display());
            }
        }
        if let Some(g) = &self.ground_truth {
            if !g.is_file() {
                bail!("ground_truth file {} does not exist", g.display());
            }
        }
        self.pipeline().validate().context("invalid weights in config")?;
        Ok(())
    }

    pub fn input_files(&self) -> [(&'static str, &Path); 7] {
        [
            ("template", &self.template),
            ("deformed_src", &self.deformed_src),
            ("deformed_tgt", &self.deformed_tgt),
            ("src_mesh", &self.src_mesh),
            ("tgt_mesh", &self.tgt_mesh),
            ("lesions_src", &self.lesions_src),
            ("lesions_tgt", &self.lesions_tgt),
        ]
    }

    /// Hashes of the three stages. Each covers the inputs and settings the
    /// stage depends on, including everything upstream of it.
    pub fn stage_hashes(&self) -> Result<StageHashes> {
        let mut geometry = Sha256::new();
        geometry.update(b"geometry\0");
        geometry.update(serde_json::to_vec(&self.units)?);
        for (_, p) in &self.input_files()[..5] {
            geometry.update(file_digest(p)?);
        }
        let coarse = hex::encode(geometry.finalize());

        let mut flow = Sha256::new();
        flow.update(b"flow\0");
        flow.update(coarse.as_bytes());
        for (_, p) in &self.input_files()[5..] {
            flow.update(file_digest(p)?);
        }
        flow.update(serde_json::to_vec(&self.flow)?);
        flow.update(serde_json::to_vec(&self.lesion_diffusion_time)?);
        let flow = hex::encode(flow.finalize());

        let mut matching = Sha256::new();
        matching.update(b"match\0");
        matching.update(flow.as_bytes());
        matching.update(serde_json::to_vec(&self.assign)?);
        let matching = hex::encode(matching.finalize());
        Ok(StageHashes { coarse, flow, matching })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageHashes {
    pub coarse: String,
    pub flow: String,
    pub matching: String,
}

fn file_digest(path: &Path) -> Result<[u8; 32]> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).into())
}

/// Applies `key=value` overrides such as `flow.w_lesion=5` or
/// `assign.beta=30` to a config before it is parsed.
pub fn apply_overrides(cfg: &mut RunConfig, overrides: &[String]) -> Result<()> {
    if overrides.is_empty() {
        return Ok(());
    }
    let mut value = toml::Value::try_from(&*cfg)?;
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .with_context(|| format!("override '{o}' is not of the form key=value"))?;
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .map(|mut t| t.remove("v").unwrap())
            .unwrap_or_else(|_| toml::Value::String(raw.to_string()));
        let mut slot = &mut value;
        let parts: Vec<&str> = key.split('.').collect();
        for (k, part) in parts.iter().enumerate() {
            let table = slot
                .as_table_mut()
                .with_context(|| format!("override '{o}': '{part}' is not inside a table"))?;
            if k + 1 == parts.len() {
                table.insert(part.to_string(), parsed.clone());
                break;
            }
            slot = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
    }
    *cfg = value.try_into().context("config after overrides is invalid")?;
    Ok(())
}
