//! Stage-wise execution with artifacts on disk.
//!
//! Every artifact carries the hash of the stage that produced it. A stage
//! whose artifacts all carry the current hash is loaded instead of
//! recomputed; artifacts with a different hash stop the run unless `force`
//! is set, in which case they are recomputed and overwritten.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use lesionflow::blob;
use lesionflow::flow::{FlowReport, TangentField};
use lesionflow::mesh::io::load_mesh;
use lesionflow::pipeline::{build_signals, match_lesions, CoarseMaps, PipelineInputs};
use lesionflow::signals::{Channel, VertexSignal};
use lesionflow::{
    advect_maps, coarse_map_from_template, coarse_map_to_template, map_lesions_to_template, solve_flow,
    CorrespondenceMap, DeformedTemplate, LesionSet, MatchReport, Mesh, SurfacePoint,
};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, StageHashes};

pub const REPORT_FILE: &str = "report.json";
pub const LOCATIONS_FILE: &str = "template_lesions.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FIELD_FILE: &str = "field.bin";

/// Inputs loaded from the files named in a config.
pub struct Loaded {
    pub template: Mesh,
    pub deformed_src: DeformedTemplate,
    pub deformed_tgt: DeformedTemplate,
    pub src_mesh: Mesh,
    pub tgt_mesh: Mesh,
    pub lesions_src: LesionSet,
    pub lesions_tgt: LesionSet,
}

impl Loaded {
    pub fn inputs(&self) -> PipelineInputs<'_> {
        PipelineInputs {
            template: &self.template,
            deformed_src: &self.deformed_src,
            deformed_tgt: &self.deformed_tgt,
            src_mesh: &self.src_mesh,
            tgt_mesh: &self.tgt_mesh,
            lesions_src: &self.lesions_src,
            lesions_tgt: &self.lesions_tgt,
        }
    }
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Loaded> {
    let mesh = |p: &Path| load_mesh(p, cfg.units).with_context(|| format!("stage load: reading mesh {}", p.display()));
    let template = mesh(&cfg.template)?.with_id("template");
    let deformed = |p: &Path| -> Result<DeformedTemplate> {
        DeformedTemplate::from_mesh(&template, &mesh(p)?).with_context(|| {
            format!(
                "stage load: {} must be the template with moved vertices (same triangles)",
                p.display()
            )
        })
    };
    let deformed_src = deformed(&cfg.deformed_src)?;
    let deformed_tgt = deformed(&cfg.deformed_tgt)?;
    let src_mesh = mesh(&cfg.src_mesh)?;
    let tgt_mesh = mesh(&cfg.tgt_mesh)?;
    let lesions = |p: &Path, m: &Mesh| -> Result<LesionSet> {
        let text = fs::read_to_string(p).with_context(|| format!("stage load: reading {}", p.display()))?;
        let set = LesionSet::from_json_scaled(&text, Some(m), cfg.units.to_mm())
            .with_context(|| format!("stage load: parsing lesions {}", p.display()))?;
        set.validate(m)
            .with_context(|| format!("stage load: lesions in {} do not fit their mesh", p.display()))?;
        Ok(set)
    };
    let lesions_src = lesions(&cfg.lesions_src, &src_mesh)?;
    let lesions_tgt = lesions(&cfg.lesions_tgt, &tgt_mesh)?;
    Ok(Loaded {
        template,
        deformed_src,
        deformed_tgt,
        src_mesh,
        tgt_mesh,
        lesions_src,
        lesions_tgt,
    })
}

/// Stage outcome bookkeeping for the manifest.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub timings_s: BTreeMap<String, f64>,
    pub reused: Vec<String>,
}

fn blob_hash(path: &Path) -> Result<Option<String>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 6];
    r.read_exact(&mut head)
        .with_context(|| format!("{} is truncated", path.display()))?;
    if &head[..5] != blob::MAGIC {
        bail!("{} is not a lesionflow artifact", path.display());
    }
    Ok(Some(blob::read_str(&mut r)?))
}

/// True when every artifact exists with the expected hash. Errors when one
/// carries another hash and `force` is off.
fn reusable(stage: &str, found: &[(PathBuf, Option<String>)], expected: &str, force: bool) -> Result<bool> {
    for (p, h) in found {
        if let Some(h) = h {
            if h != expected && !force {
                bail!(
                    "stage {stage}: {} was produced by a different configuration (hash {}, current {}); \
                     remove it or pass --force to overwrite",
                    p.display(),
                    &h[..h.len().min(12)],
                    &expected[..expected.len().min(12)]
                );
            }
        }
    }
    Ok(found.iter().all(|(_, h)| h.as_deref() == Some(expected)))
}

fn write_blob(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> lesionflow::Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

fn read_map(path: &Path) -> Result<(CorrespondenceMap, String)> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    CorrespondenceMap::read_binary(&mut r).with_context(|| format!("reading {}", path.display()))
}

fn read_field(path: &Path) -> Result<(TangentField, String)> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    TangentField::read_binary(&mut r).with_context(|| format!("reading {}", path.display()))
}

const COARSE_FILES: [&str; 4] = [
    "coarse_src_to_template.bin",
    "coarse_template_to_src.bin",
    "coarse_tgt_to_template.bin",
    "coarse_template_to_tgt.bin",
];
const REFINED_FILES: [&str; 2] = ["refined_src_to_template.bin", "refined_tgt_to_template.bin"];

fn timed<T>(prov: &mut Provenance, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f()?;
    prov.timings_s.insert(name.to_string(), t.elapsed().as_secs_f64());
    Ok(out)
}

pub fn coarse_stage(out: &Path, data: &Loaded, hash: &str, force: bool, prov: &mut Provenance) -> Result<CoarseMaps> {
    let paths: Vec<PathBuf> = COARSE_FILES.iter().map(|f| out.join(f)).collect();
    let found = paths.iter().map(|p| Ok((p.clone(), blob_hash(p)?))).collect::<Result<Vec<_>>>()?;
    if reusable("coarse", &found, hash, force)? {
        prov.reused.push("coarse".into());
        let mut maps = paths.iter().map(|p| read_map(p).map(|(m, _)| m));
        return Ok(CoarseMaps {
            src_to_template: maps.next().unwrap()?,
            template_to_src: maps.next().unwrap()?,
            tgt_to_template: maps.next().unwrap()?,
            template_to_tgt: maps.next().unwrap()?,
        });
    }
    let coarse = timed(prov, "coarse", || {
        let t = &data.template;
        let err = "stage coarse: nearest-point projection failed; check that the deformed templates overlap their scans";
        Ok(CoarseMaps {
            src_to_template: coarse_map_to_template(&data.src_mesh, &data.deformed_src, t).context(err)?,
            template_to_src: coarse_map_from_template(t, &data.deformed_src, &data.src_mesh).context(err)?,
            tgt_to_template: coarse_map_to_template(&data.tgt_mesh, &data.deformed_tgt, t).context(err)?,
            template_to_tgt: coarse_map_from_template(t, &data.deformed_tgt, &data.tgt_mesh).context(err)?,
        })
    })?;
    let maps = [
        &coarse.src_to_template,
        &coarse.template_to_src,
        &coarse.tgt_to_template,
        &coarse.template_to_tgt,
    ];
    for (p, m) in paths.iter().zip(maps) {
        write_blob(p, |w| m.write_binary(w, hash))?;
    }
    Ok(coarse)
}

pub struct FlowOutcome {
    pub field: TangentField,
    pub refined_src: CorrespondenceMap,
    pub refined_tgt: CorrespondenceMap,
    pub report: Option<FlowReport>,
}

pub fn flow_stage(
    out: &Path,
    cfg: &RunConfig,
    data: &Loaded,
    coarse: &CoarseMaps,
    hash: &str,
    force: bool,
    prov: &mut Provenance,
) -> Result<FlowOutcome> {
    let field_path = out.join(FIELD_FILE);
    let refined: Vec<PathBuf> = REFINED_FILES.iter().map(|f| out.join(f)).collect();
    let mut found = vec![(field_path.clone(), blob_hash(&field_path)?)];
    for p in &refined {
        found.push((p.clone(), blob_hash(p)?));
    }
    if reusable("flow", &found, hash, force)? {
        prov.reused.push("flow".into());
        return Ok(FlowOutcome {
            field: read_field(&field_path)?.0,
            refined_src: read_map(&refined[0])?.0,
            refined_tgt: read_map(&refined[1])?.0,
            report: None,
        });
    }
    let pcfg = cfg.pipeline();
    let inputs = data.inputs();
    let t = &data.template;
    let pairs = timed(prov, "signals", || {
        build_signals(&inputs, coarse, &pcfg).context(
            "stage signals: building template signals failed; scans without color need flow.w_texture = 0",
        )
    })?;
    let mut channels = Vec::new();
    if pcfg.flow.w_texture > 0.0 {
        channels.extend([("r", Channel::R), ("g", Channel::G), ("b", Channel::B)]);
    }
    if pcfg.flow.w_lesion > 0.0 {
        channels.push(("lesion", Channel::Lesion));
    }
    for ((name, ch), pair) in channels.iter().zip(&pairs) {
        for (side, values) in [("src", &pair.source), ("tgt", &pair.target)] {
            let s = VertexSignal {
                mesh_id: t.id().to_string(),
                channel: *ch,
                values: values.clone(),
            };
            write_blob(&out.join(format!("signal_{side}_{name}.bin")), |w| s.write_binary(w, hash))?;
        }
    }
    let (field, report) = timed(prov, "flow", || {
        let resolved = pcfg.flow.resolve(t)?;
        solve_flow(t, &pairs, &resolved)
            .context("stage flow: the solver failed; raise flow.solver_max_iters or flow.size")
    })?;
    let (refined_src, refined_tgt) = timed(prov, "advect", || {
        advect_maps(&coarse.src_to_template, &coarse.tgt_to_template, &field, t)
            .context("stage advect: tracing along the field failed")
    })?;
    write_blob(&field_path, |w| field.write_binary(w, hash))?;
    write_blob(&refined[0], |w| refined_src.write_binary(w, hash))?;
    write_blob(&refined[1], |w| refined_tgt.write_binary(w, hash))?;
    Ok(FlowOutcome {
        field,
        refined_src,
        refined_tgt,
        report: Some(report),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocatedLesion {
    pub id: String,
    pub coarse: SurfacePoint,
    pub refined: SurfacePoint,
}

/// Template locations of every lesion through the coarse and refined maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationsFile {
    pub config_hash: String,
    pub src: Vec<LocatedLesion>,
    pub tgt: Vec<LocatedLesion>,
}

impl LocationsFile {
    pub fn refined(&self, src: bool) -> Vec<SurfacePoint> {
        let side = if src { &self.src } else { &self.tgt };
        side.iter().map(|l| l.refined).collect()
    }

    pub fn coarse(&self, src: bool) -> Vec<SurfacePoint> {
        let side = if src { &self.src } else { &self.tgt };
        side.iter().map(|l| l.coarse).collect()
    }

    pub fn ids(&self, src: bool) -> Vec<String> {
        let side = if src { &self.src } else { &self.tgt };
        side.iter().map(|l| l.id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config_hash: String,
    #[serde(flatten)]
    pub report: MatchReport,
}

pub fn match_stage(
    out: &Path,
    cfg: &RunConfig,
    data: &Loaded,
    coarse: &CoarseMaps,
    refined: (&CorrespondenceMap, &CorrespondenceMap),
    hashes: &StageHashes,
    prov: &mut Provenance,
) -> Result<ReportFile> {
    let t = &data.template;
    let inputs = data.inputs();
    let locate = |set: &LesionSet, coarse_map: &CorrespondenceMap, fine: &CorrespondenceMap, mesh: &Mesh| -> Result<Vec<LocatedLesion>> {
        let c = map_lesions_to_template(set, coarse_map, mesh, t)?;
        let r = map_lesions_to_template(set, fine, mesh, t)?;
        Ok(set
            .lesions
            .iter()
            .zip(c.into_iter().zip(r))
            .map(|(l, (coarse, refined))| LocatedLesion {
                id: l.id.clone(),
                coarse,
                refined,
            })
            .collect())
    };
    let locations = LocationsFile {
        config_hash: hashes.flow.clone(),
        src: locate(&data.lesions_src, &coarse.src_to_template, refined.0, &data.src_mesh)
            .context("stage match: mapping source lesions to the template")?,
        tgt: locate(&data.lesions_tgt, &coarse.tgt_to_template, refined.1, &data.tgt_mesh)
            .context("stage match: mapping target lesions to the template")?,
    };
    let (_, _, report) = timed(prov, "match", || {
        match_lesions(&inputs, &locations.refined(true), &locations.refined(false), &cfg.assign)
            .context("stage match: assignment failed")
    })?;
    fs::write(out.join(LOCATIONS_FILE), serde_json::to_string_pretty(&locations)? + "\n")?;
    let file = ReportFile {
        config_hash: hashes.matching.clone(),
        report,
    };
    fs::write(out.join(REPORT_FILE), serde_json::to_string_pretty(&file)? + "\n")?;
    Ok(file)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub stages: StageHashes,
    pub version: String,
    pub config: RunConfig,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowSummary>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FlowSummary {
    pub energy_zero: f64,
    pub energy_final: f64,
    pub scale: f64,
    pub max_field_mm: f64,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let p = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    }
}

fn write_manifest(out: &Path, cfg: &RunConfig, hashes: &StageHashes, prov: Provenance, flow: &FlowOutcome) -> Result<()> {
    let manifest = Manifest {
        config_hash: hashes.matching.clone(),
        stages: hashes.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        provenance: prov,
        flow: flow.report.as_ref().map(|r| FlowSummary {
            energy_zero: r.energy_zero,
            energy_final: r.energy_final,
            scale: r.scale,
            max_field_mm: flow.field.max_norm(),
        }),
    };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn prepare(cfg: &RunConfig) -> Result<(StageHashes, Loaded)> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let hashes = cfg.stage_hashes()?;
    let data = load_inputs(cfg)?;
    Ok((hashes, data))
}

/// Full pipeline. Returns the report that was written.
pub fn run(cfg: &RunConfig, force: bool) -> Result<ReportFile> {
    let (hashes, data) = prepare(cfg)?;
    let out = &cfg.out_dir;
    let mut prov = Provenance::default();
    let coarse = coarse_stage(out, &data, &hashes.coarse, force, &mut prov)?;
    let flow = flow_stage(out, cfg, &data, &coarse, &hashes.flow, force, &mut prov)?;
    let report = match_stage(out, cfg, &data, &coarse, (&flow.refined_src, &flow.refined_tgt), &hashes, &mut prov)?;
    write_manifest(out, cfg, &hashes, prov, &flow)?;
    Ok(report)
}

/// Coarse maps, signals, flow and advection only.
pub fn flow_solve(cfg: &RunConfig, force: bool) -> Result<TangentField> {
    let (hashes, data) = prepare(cfg)?;
    let out = &cfg.out_dir;
    let mut prov = Provenance::default();
    let coarse = coarse_stage(out, &data, &hashes.coarse, force, &mut prov)?;
    let flow = flow_stage(out, cfg, &data, &coarse, &hashes.flow, force, &mut prov)?;
    Ok(flow.field)
}

/// Assignment from existing coarse and refined maps. Maps from another
/// configuration are refused unless `force` is set.
pub fn match_only(cfg: &RunConfig, force: bool) -> Result<ReportFile> {
    let (hashes, data) = prepare(cfg)?;
    let out = &cfg.out_dir;
    let check = |p: &Path, expected: &str| -> Result<()> {
        match blob_hash(p)? {
            None => bail!("stage match: {} is missing; run `flow solve` first", p.display()),
            Some(h) if h != expected && !force => bail!(
                "stage match: {} comes from a different configuration; rerun `flow solve` or pass --force",
                p.display()
            ),
            Some(h) if h != expected => {
                log::warn!("using {} from a different configuration (--force)", p.display());
                Ok(())
            }
            Some(_) => Ok(()),
        }
    };
    for f in COARSE_FILES {
        check(&out.join(f), &hashes.coarse)?;
    }
    for f in REFINED_FILES {
        check(&out.join(f), &hashes.flow)?;
    }
    let mut maps = COARSE_FILES.iter().map(|f| read_map(&out.join(f)).map(|(m, _)| m));
    let coarse = CoarseMaps {
        src_to_template: maps.next().unwrap()?,
        template_to_src: maps.next().unwrap()?,
        tgt_to_template: maps.next().unwrap()?,
        template_to_tgt: maps.next().unwrap()?,
    };
    let refined_src = read_map(&out.join(REFINED_FILES[0]))?.0;
    let refined_tgt = read_map(&out.join(REFINED_FILES[1]))?.0;
    let mut prov = Provenance::default();
    prov.reused.extend(["coarse".to_string(), "flow".to_string()]);
    let report = match_stage(out, cfg, &data, &coarse, (&refined_src, &refined_tgt), &hashes, &mut prov)?;
    let field = read_field(&out.join(FIELD_FILE))?.0;
    let flow = FlowOutcome {
        field,
        refined_src,
        refined_tgt,
        report: None,
    };
    write_manifest(out, cfg, &hashes, prov, &flow)?;
    Ok(report)
}
