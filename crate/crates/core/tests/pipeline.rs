//! End-to-end pipeline behaviour on synthetic subjects.

use std::collections::HashSet;

use lesionflow::metrics::{dropout_run, map_quality, MappedLesions};
use lesionflow::pipeline::{coarse_maps, PipelineConfig};
use lesionflow::synth::{make_subject, DeformParams, SubjectFixture, SubjectParams};
use lesionflow::{map_lesions_to_template, run_pipeline, EvalReport, GroundTruth, SurfacePoint};

fn quality(fx: &SubjectFixture, gt: &GroundTruth, src: &[SurfacePoint], tgt: &[SurfacePoint]) -> f64 {
    let (si, ti) = (fx.lesions_src.ids(), fx.lesions_tgt.ids());
    map_quality(gt, MappedLesions { ids: &si, points: src }, MappedLesions { ids: &ti, points: tgt }, &fx.template)
        .unwrap()
        .d_lp_mean
}

fn bend_only(noise: f64, seed: u64) -> SubjectParams {
    SubjectParams {
        seed,
        resolution: 16,
        deform: DeformParams { bend: 0.6, twist: 0.0, bulge: 0.0, n_bulges: 0 },
        n_lesions: 30,
        registration_noise_mm: noise,
        ..SubjectParams::default()
    }
}

#[test]
fn identity_subject_pairs_every_lesion_in_place() {
    let fx = make_subject(&SubjectParams {
        resolution: 12,
        deform: DeformParams::none(),
        n_lesions: 20,
        registration_noise_mm: 0.0,
        ..SubjectParams::default()
    })
    .unwrap();
    let out = run_pipeline(&fx.inputs(), &PipelineConfig::default()).unwrap();
    assert!(out.field.max_norm() < 1e-8 * fx.template.bbox_diagonal());
    assert_eq!(out.report.matches.len(), 20);
    assert!(out.report.unmatched_src.is_empty() && out.report.unmatched_tgt.is_empty());
    assert!(out.report.matches.iter().all(|m| m.geodesic_mm < 1e-6), "{:?}", out.report.matches);
    let expected: HashSet<(String, String)> = fx.gt.pairs.iter().cloned().collect();
    let got: HashSet<(String, String)> =
        out.matches.id_pairs().into_iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    assert_eq!(got, expected);
}

#[test]
fn refinement_reduces_lesion_pair_distance() {
    for seed in [31, 32] {
        let fx = make_subject(&SubjectParams { seed, ..SubjectParams::default() }).unwrap();
        let out = run_pipeline(&fx.inputs(), &PipelineConfig::default()).unwrap();
        let before = quality(&fx, &fx.gt, &out.coarse_src, &out.coarse_tgt);
        let after = quality(&fx, &fx.gt, &out.refined_src, &out.refined_tgt);
        assert!(after < before, "seed {seed}: {before} -> {after}");
        let fr = out.flow_report.unwrap();
        assert!(fr.energy_final <= fr.energy_zero);
    }
}

#[test]
fn bend_only_truth_coincides_and_coarse_error_grows_with_noise() {
    let mut errors = vec![];
    for noise in [0.0, 2.0, 5.0] {
        let fx = make_subject(&bend_only(noise, 8)).unwrap();
        for (s, t) in &fx.gt.pairs {
            let i = fx.lesions_src.lesions.iter().position(|l| &l.id == s).unwrap();
            let j = fx.lesions_tgt.lesions.iter().position(|l| &l.id == t).unwrap();
            let d = (fx.template.embed(&fx.true_src[i]).unwrap() - fx.template.embed(&fx.true_tgt[j]).unwrap()).norm();
            assert!(d < 1e-9, "true locations differ by {d}");
        }
        let coarse = coarse_maps(&fx.inputs()).unwrap();
        let src = map_lesions_to_template(&fx.lesions_src, &coarse.src_to_template, &fx.src_mesh, &fx.template).unwrap();
        let tgt = map_lesions_to_template(&fx.lesions_tgt, &coarse.tgt_to_template, &fx.tgt_mesh, &fx.template).unwrap();
        errors.push(quality(&fx, &fx.gt, &src, &tgt));
    }
    assert!(errors[0] < errors[1] && errors[1] < errors[2], "{errors:?}");
    assert!(errors[1] > 0.0);
}

#[test]
fn zero_dropout_equals_the_plain_run() {
    let fx = make_subject(&bend_only(3.0, 9)).unwrap();
    let cfg = PipelineConfig::default();
    let out = run_pipeline(&fx.inputs(), &cfg).unwrap();
    let (si, ti) = (fx.lesions_src.ids(), fx.lesions_tgt.ids());
    let q = map_quality(
        &fx.gt,
        MappedLesions { ids: &si, points: &out.refined_src },
        MappedLesions { ids: &ti, points: &out.refined_tgt },
        &fx.template,
    )
    .unwrap();
    let plain = EvalReport::for_subject(&q, &out.matches, &fx.gt).unwrap();
    let dropped = dropout_run(&fx, None, 0.0, 5, &cfg).unwrap();
    assert!(dropped.removed_src.is_empty() && dropped.removed_tgt.is_empty());
    assert_eq!(serde_json::to_string(&dropped.report).unwrap(), serde_json::to_string(&plain).unwrap());
}

#[test]
fn dropout_is_deterministic_and_handles_one_survivor() {
    let fx = make_subject(&SubjectParams { n_lesions: 10, ..bend_only(3.0, 10) }).unwrap();
    let cfg = PipelineConfig::default();
    let a = dropout_run(&fx, None, 20.0, 3, &cfg).unwrap();
    let b = dropout_run(&fx, None, 20.0, 3, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());

    let last = dropout_run(&fx, None, 90.0, 3, &cfg).unwrap();
    assert_eq!(last.output.matches.n0(), 1);
    assert_eq!(last.output.matches.n1(), 1);
    assert!(last.report.f1.is_finite() && last.report.precision.is_finite());
    assert!(last.gt.pairs.len() <= 1);
}

#[test]
fn dropped_lesions_leave_exactly_their_partners_unmatched() {
    // sparse lesions, so two orphans are never within matching range
    let fx = make_subject(&SubjectParams { n_lesions: 40, spacing_mm: 45.0, ..bend_only(3.0, 12) }).unwrap();
    let run = dropout_run(&fx, None, 10.0, 4, &PipelineConfig::default()).unwrap();
    let partner_of_src = |s: &str| fx.gt.pairs.iter().find(|p| p.0 == s).map(|p| p.1.clone());
    let partner_of_tgt = |t: &str| fx.gt.pairs.iter().find(|p| p.1 == t).map(|p| p.0.clone());
    let removed_src: HashSet<&String> = run.removed_src.iter().collect();
    let removed_tgt: HashSet<&String> = run.removed_tgt.iter().collect();
    let expected_tgt: HashSet<String> = run
        .removed_src
        .iter()
        .filter_map(|s| partner_of_src(s))
        .filter(|t| !removed_tgt.contains(t))
        .collect();
    let expected_src: HashSet<String> = run
        .removed_tgt
        .iter()
        .filter_map(|t| partner_of_tgt(t))
        .filter(|s| !removed_src.contains(s))
        .collect();
    let got_tgt: HashSet<String> = run.output.report.unmatched_tgt.iter().map(|u| u.id.clone()).collect();
    let got_src: HashSet<String> = run.output.report.unmatched_src.iter().map(|u| u.id.clone()).collect();
    assert_eq!(got_tgt, expected_tgt);
    assert_eq!(got_src, expected_src);
    assert_eq!(run.report.matching_accuracy, 1.0);
}
