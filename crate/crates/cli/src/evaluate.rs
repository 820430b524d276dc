//! `evaluate`: scores finished runs against ground truth.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lesionflow::mesh::io::load_mesh;
use lesionflow::metrics::{map_quality, MapQuality, MappedLesions};
use lesionflow::{EvalReport, GroundTruth, MatchMatrix};
use serde::{Deserialize, Serialize};

use crate::stages::{LocationsFile, Manifest, ReportFile, LOCATIONS_FILE, REPORT_FILE};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectEval {
    pub name: String,
    pub coarse: MapQuality,
    pub refined: MapQuality,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub subjects: Vec<SubjectEval>,
    pub coarse_d_lp_mean: f64,
    pub aggregate: EvalReport,
}

/// The match matrix encoded by a report, over the lesion order of the
/// locations file.
pub fn matrix_from_report(report: &ReportFile, locations: &LocationsFile) -> Result<MatchMatrix> {
    let src_ids = locations.ids(true);
    let tgt_ids = locations.ids(false);
    let si: HashMap<&str, usize> = src_ids.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let ti: HashMap<&str, usize> = tgt_ids.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let pairs = report
        .report
        .matches
        .iter()
        .map(|m| match (si.get(m.src.as_str()), ti.get(m.tgt.as_str())) {
            (Some(&i), Some(&j)) => Ok((i, j)),
            _ => bail!("report pairs '{}' with '{}', which the run does not know", m.src, m.tgt),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MatchMatrix::from_pairs(src_ids, tgt_ids, &pairs)?)
}

pub fn evaluate_run(run_dir: &Path, gt_override: Option<&Path>) -> Result<SubjectEval> {
    let manifest = Manifest::load(run_dir)?;
    let gt_path: PathBuf = match (gt_override, &manifest.config.ground_truth) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => p.clone(),
        (None, None) => bail!("{} has no ground truth; pass --gt", run_dir.display()),
    };
    let gt: GroundTruth = serde_json::from_str(
        &fs::read_to_string(&gt_path).with_context(|| format!("reading {}", gt_path.display()))?,
    )
    .with_context(|| format!("parsing {}", gt_path.display()))?;
    gt.validate()?;
    let read = |name: &str| -> Result<String> {
        let p = run_dir.join(name);
        fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
    };
    let locations: LocationsFile = serde_json::from_str(&read(LOCATIONS_FILE)?)?;
    let report: ReportFile = serde_json::from_str(&read(REPORT_FILE)?)?;
    if report.config_hash != manifest.config_hash {
        bail!("{} does not belong to the run described by its manifest", run_dir.join(REPORT_FILE).display());
    }
    let template = load_mesh(&manifest.config.template, manifest.config.units)?;

    let src_ids = locations.ids(true);
    let tgt_ids = locations.ids(false);
    let quality = |src: &[lesionflow::SurfacePoint], tgt: &[lesionflow::SurfacePoint]| {
        map_quality(
            &gt,
            MappedLesions { ids: &src_ids, points: src },
            MappedLesions { ids: &tgt_ids, points: tgt },
            &template,
        )
    };
    let coarse = quality(&locations.coarse(true), &locations.coarse(false))?;
    let refined = quality(&locations.refined(true), &locations.refined(false))?;
    let pred = matrix_from_report(&report, &locations)?;
    let eval = EvalReport::for_subject(&refined, &pred, &gt)?;
    let name = run_dir
        .canonicalize()
        .unwrap_or_else(|_| run_dir.to_path_buf())
        .components()
        .rev()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .find(|c| c != "out")
        .unwrap_or_else(|| run_dir.display().to_string());
    Ok(SubjectEval {
        name,
        coarse,
        refined,
        report: eval,
    })
}

pub fn evaluate(runs: &[PathBuf], gt_override: Option<&Path>) -> Result<Evaluation> {
    if runs.is_empty() {
        bail!("no runs to evaluate");
    }
    if gt_override.is_some() && runs.len() > 1 {
        bail!("--gt applies to a single run; list ground truth in each run's config instead");
    }
    let subjects = runs
        .iter()
        .map(|r| evaluate_run(r, gt_override).with_context(|| format!("evaluating {}", r.display())))
        .collect::<Result<Vec<_>>>()?;
    let pooled: Vec<(EvalReport, MapQuality)> = subjects.iter().map(|s| (s.report.clone(), s.refined.clone())).collect();
    let aggregate = EvalReport::aggregate(&pooled).expect("at least one subject");
    let coarse_all: Vec<f64> = subjects.iter().flat_map(|s| s.coarse.distances_mm.iter().copied()).collect();
    let coarse_d_lp_mean = lesionflow::metrics::mean_std(&coarse_all).0;
    Ok(Evaluation {
        subjects,
        coarse_d_lp_mean,
        aggregate,
    })
}

fn cell(mean: f64, std: f64) -> String {
    format!("{mean:.2} ({std:.2})")
}

/// Plain-text table: one row per subject, then the aggregate.
pub fn table(e: &Evaluation) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20} {:>15} {:>15} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "subject", "D_LP coarse", "D_LP refined", "succ@10", "accuracy", "precision", "recall", "F1"
    );
    for sub in &e.subjects {
        let r = &sub.report;
        let _ = writeln!(
            s,
            "{:<20} {:>15} {:>15} {:>8.1}% {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
            sub.name,
            cell(sub.coarse.d_lp_mean, sub.coarse.d_lp_std),
            cell(sub.refined.d_lp_mean, sub.refined.d_lp_std),
            100.0 * r.success_rate_at(10.0).unwrap_or(f64::NAN),
            r.matching_accuracy,
            r.precision,
            r.recall,
            r.f1
        );
    }
    let a = &e.aggregate;
    let _ = writeln!(
        s,
        "{:<20} {:>15} {:>15} {:>8.1}% {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
        "all pairs (D_LP)",
        format!("{:.2}", e.coarse_d_lp_mean),
        cell(a.d_lp_mean, a.d_lp_std),
        100.0 * a.success_rate_at(10.0).unwrap_or(f64::NAN),
        a.matching_accuracy,
        a.precision,
        a.recall,
        a.f1
    );
    let _ = writeln!(s, "{:<20} {:>15} {:>15}", "subject-wise (D_SW)", "", cell(a.d_sw_mean, a.d_sw_std));
    if a.empty_prediction {
        let _ = writeln!(s, "note: at least one subject has no predicted matches; its precision is reported as 0");
    }
    s
}
