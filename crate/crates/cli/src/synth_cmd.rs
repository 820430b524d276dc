//! `synth make`: writes a synthetic subject as ordinary input files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lesionflow::mesh::io::save_mesh_ply;
use lesionflow::synth::{make_subject, SubjectFixture, SubjectParams};
use lesionflow::{AssignConfig, FlowConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const RUN_CONFIG_FILE: &str = "run.toml";

#[derive(Serialize)]
struct SynthManifest<'a> {
    config_hash: String,
    version: &'static str,
    files: Files,
    params: &'a SubjectParams,
}

#[derive(Clone, Copy, Serialize)]
struct Files {
    template: &'static str,
    deformed_src: &'static str,
    deformed_tgt: &'static str,
    src_mesh: &'static str,
    tgt_mesh: &'static str,
    lesions_src: &'static str,
    lesions_tgt: &'static str,
    ground_truth: &'static str,
    run_config: &'static str,
}

const FILES: Files = Files {
    template: "template.ply",
    deformed_src: "deformed_src.ply",
    deformed_tgt: "deformed_tgt.ply",
    src_mesh: "src.ply",
    tgt_mesh: "tgt.ply",
    lesions_src: "lesions_src.json",
    lesions_tgt: "lesions_tgt.json",
    ground_truth: "gt.json",
    run_config: RUN_CONFIG_FILE,
};

pub fn params_hash(params: &SubjectParams) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(params)?)))
}

/// Writes the subject into `out` and returns the path of its run config.
pub fn write_subject(fixture: &SubjectFixture, out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let hash = params_hash(&fixture.params)?;
    let comments = vec![
        format!("config_hash {hash}"),
        format!("lesionflow synth seed {}", fixture.params.seed),
    ];
    let f = &FILES;
    save_mesh_ply(&out.join(f.template), &fixture.template, comments.clone())?;
    save_mesh_ply(&out.join(f.deformed_src), fixture.deformed_src.mesh(), comments.clone())?;
    save_mesh_ply(&out.join(f.deformed_tgt), fixture.deformed_tgt.mesh(), comments.clone())?;
    save_mesh_ply(&out.join(f.src_mesh), &fixture.src_mesh, comments.clone())?;
    save_mesh_ply(&out.join(f.tgt_mesh), &fixture.tgt_mesh, comments)?;
    fs::write(out.join(f.lesions_src), fixture.lesions_src.to_json()? + "\n")?;
    fs::write(out.join(f.lesions_tgt), fixture.lesions_tgt.to_json()? + "\n")?;
    fs::write(out.join(f.ground_truth), serde_json::to_string_pretty(&fixture.gt)? + "\n")?;

    let run = RunConfig {
        template: f.template.into(),
        deformed_src: f.deformed_src.into(),
        deformed_tgt: f.deformed_tgt.into(),
        src_mesh: f.src_mesh.into(),
        tgt_mesh: f.tgt_mesh.into(),
        lesions_src: f.lesions_src.into(),
        lesions_tgt: f.lesions_tgt.into(),
        ground_truth: Some(f.ground_truth.into()),
        units: Default::default(),
        seed: fixture.params.seed,
        out_dir: "out".into(),
        lesion_diffusion_time: None,
        flow: FlowConfig::default(),
        assign: AssignConfig::default(),
    };
    fs::write(out.join(f.run_config), toml::to_string_pretty(&run)?)?;
    let manifest = SynthManifest {
        config_hash: hash,
        version: env!("CARGO_PKG_VERSION"),
        files: FILES,
        params: &fixture.params,
    };
    fs::write(out.join("manifest.toml"), toml::to_string_pretty(&manifest)?)?;
    Ok(out.join(f.run_config))
}

pub fn make(params: &SubjectParams, out: &Path) -> Result<PathBuf> {
    let fixture = make_subject(params).context("generating the synthetic subject")?;
    write_subject(&fixture, out)
}
