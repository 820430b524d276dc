//! The `lesionflow` binary end to end on small synthetic subjects.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lesionflow::assignment::{MatchEntry, UnmatchedEntry};
use lesionflow::mesh::io::read_ply;
use lesionflow::MatchReport;
use lesionflow_cli::overlay::{pair_color, UNMATCHED_SRC, UNMATCHED_TGT};
use lesionflow_cli::stages::{LocatedLesion, LocationsFile, Manifest, ReportFile};

fn lesionflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lesionflow")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lesionflow(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small subject; returns the path of its run config.
fn small_subject(dir: &Path, seed: u64) -> PathBuf {
    let out = dir.join(format!("subject{seed}"));
    ok(&["synth", "make", "--seed", &seed.to_string(), "--out", s(&out), "--resolution", "12", "--n-lesions", "20"]);
    out.join("run.toml")
}

#[test]
fn synth_run_evaluate_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_subject(dir.path(), 3);
    let subject = config.parent().unwrap();
    for f in ["template.ply", "src.ply", "tgt.ply", "lesions_src.json", "lesions_tgt.json", "gt.json", "manifest.toml"] {
        assert!(subject.join(f).is_file(), "{f} missing");
    }
    let summary = ok(&["run", "--config", s(&config)]);
    assert!(summary.contains("matches"));
    let run = subject.join("out");
    let json = ok(&["evaluate", "--run", s(&run), "--json"]);
    let eval: serde_json::Value = serde_json::from_str(&json).unwrap();
    let acc = eval["aggregate"]["matching_accuracy"].as_f64().unwrap();
    assert!(acc >= 0.9, "accuracy {acc}");
    let table = ok(&["evaluate", "--run", s(&run)]);
    assert!(table.contains("D_LP") && table.contains("subject-wise"));
}

#[test]
fn stages_are_reused_and_conflicts_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_subject(dir.path(), 4);
    let run = config.parent().unwrap().join("out");
    ok(&["run", "--config", s(&config)]);

    ok(&["run", "--config", s(&config)]);
    let m = Manifest::load(&run).unwrap();
    assert_eq!(m.provenance.reused, vec!["coarse".to_string(), "flow".to_string()]);

    // assignment weights only touch the matching stage
    ok(&["run", "--config", s(&config), "--set", "assign.beta=25"]);
    assert_eq!(Manifest::load(&run).unwrap().config.assign.beta, 25.0);

    let refused = lesionflow(&["run", "--config", s(&config), "--set", "flow.w_lesion=5"]);
    assert!(!refused.status.success());
    let msg = String::from_utf8_lossy(&refused.stderr);
    assert!(msg.contains("stage flow") && msg.contains("--force"), "{msg}");

    ok(&["flow", "solve", "--config", s(&config), "--set", "flow.w_lesion=5", "--force"]);
    ok(&["match", "--config", s(&config), "--set", "flow.w_lesion=5"]);
    let stale = lesionflow(&["match", "--config", s(&config)]);
    assert!(!stale.status.success());
}

#[test]
fn repeated_runs_write_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_subject(dir.path(), 5);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["run", "--config", s(&config), "--out", s(&a)]);
    ok(&["run", "--config", s(&config), "--out", s(&b)]);
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
}

#[test]
fn batch_manifest_runs_every_subject() {
    let dir = tempfile::tempdir().unwrap();
    let c1 = small_subject(dir.path(), 6);
    let c2 = small_subject(dir.path(), 7);
    let list = dir.path().join("subjects.txt");
    fs::write(&list, format!("# two subjects\n{}\n{}\n", s(&c1), s(&c2))).unwrap();
    ok(&["run", "--manifest", s(&list)]);
    let runs: Vec<String> = [&c1, &c2].iter().map(|c| s(&c.parent().unwrap().join("out")).to_string()).collect();
    let json = ok(&["evaluate", "--run", &runs[0], "--run", &runs[1], "--json"]);
    let eval: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(eval["subjects"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_subject(dir.path(), 8);
    let out = lesionflow(&["run", "--config", s(&config), "--set", "assign.beta=-1"]);
    assert!(!out.status.success());
    let missing = lesionflow(&["run", "--config", s(&dir.path().join("nope.toml"))]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.toml"));
}

fn located(id: &str, p: lesionflow::SurfacePoint) -> LocatedLesion {
    LocatedLesion { id: id.into(), coarse: p, refined: p }
}

#[test]
fn overlay_of_an_empty_report_is_the_template() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_subject(dir.path(), 9);
    let template = config.parent().unwrap().join("template.ply");
    let report = ReportFile { config_hash: "h".into(), report: MatchReport::default() };
    let locations = LocationsFile { config_hash: "h".into(), src: vec![], tgt: vec![] };
    let (rp, lp, out) = (dir.path().join("r.json"), dir.path().join("l.json"), dir.path().join("o.ply"));
    fs::write(&rp, serde_json::to_string(&report).unwrap()).unwrap();
    fs::write(&lp, serde_json::to_string(&locations).unwrap()).unwrap();
    ok(&["export-overlay", "--template", s(&template), "--report", s(&rp), "--locations", s(&lp), "--out", s(&out)]);
    let (a, b) = (read_ply(&template).unwrap(), read_ply(&out).unwrap());
    assert_eq!(a.vertices, b.vertices);
    assert_eq!(a.triangles, b.triangles);
    assert_eq!(a.colors, b.colors);
    assert!(b.comments.iter().any(|c| c.contains("overlay")));
}

#[test]
fn overlay_draws_two_glyphs_per_pair_in_one_color() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_subject(dir.path(), 10);
    let run = config.parent().unwrap().join("out");
    ok(&["run", "--config", s(&config)]);
    let out = dir.path().join("overlay.ply");
    ok(&["export-overlay", "--run", s(&run), "--out", s(&out)]);
    let report: ReportFile = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    let template = read_ply(&config.parent().unwrap().join("template.ply")).unwrap();
    let overlay = read_ply(&out).unwrap();
    let r = &report.report;
    let glyphs = 2 * r.matches.len() + r.unmatched_src.len() + r.unmatched_tgt.len();
    let extra = overlay.vertices.len() - template.vertices.len();
    assert_eq!(extra % glyphs, 0);
    let per_glyph = extra / glyphs;

    let colors = overlay.colors.unwrap();
    let to_bytes = |c: [f64; 3]| c.map(|x| (x * 255.0).round() as u8);
    let glyph_colors: Vec<[u8; 3]> =
        (0..glyphs).map(|g| to_bytes(colors[template.vertices.len() + g * per_glyph])).collect();
    let pair_colors: HashSet<[u8; 3]> = glyph_colors[..2 * r.matches.len()].iter().copied().collect();
    assert_eq!(pair_colors.len(), r.matches.len());
    for (k, m) in r.matches.iter().enumerate() {
        assert_eq!(glyph_colors[2 * k], pair_color(&m.src, &m.tgt));
        assert_eq!(glyph_colors[2 * k + 1], pair_color(&m.src, &m.tgt));
    }
    assert!(!pair_colors.contains(&UNMATCHED_SRC) && !pair_colors.contains(&UNMATCHED_TGT));
}

#[test]
fn overlay_flags_unmatched_lesions() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_subject(dir.path(), 11);
    let template_path = config.parent().unwrap().join("template.ply");
    let template = lesionflow::mesh::io::load_mesh(&template_path, Default::default()).unwrap();
    let p = template.vertex_point(0).unwrap();
    let q = template.vertex_point(5).unwrap();
    let pos = |x: &lesionflow::SurfacePoint| {
        let v = template.embed(x).unwrap();
        [v.x, v.y, v.z]
    };
    let report = ReportFile {
        config_hash: "h".into(),
        report: MatchReport {
            matches: vec![MatchEntry { src: "a".into(), tgt: "b".into(), geodesic_mm: 0.0 }],
            unmatched_src: vec![UnmatchedEntry { id: "c".into(), template_tri: q.triangle, bary: q.bary, pos_mm: pos(&q) }],
            unmatched_tgt: vec![],
        },
    };
    let locations = LocationsFile {
        config_hash: "h".into(),
        src: vec![located("a", p), located("c", q)],
        tgt: vec![located("b", p)],
    };
    let data = lesionflow_cli::overlay::build_overlay(&template, &report, &locations, 4.0).unwrap();
    let colors = data.colors.unwrap();
    let last = colors.last().unwrap().map(|x| (x * 255.0).round() as u8);
    assert_eq!(last, UNMATCHED_SRC);
}
