//! Evaluation: correspondence quality on lesion pairs, matching accuracy and
//! precision/recall/F1 against ground truth.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assignment::MatchMatrix;
use crate::error::{Error, Result};
use crate::mesh::{Geodesic, Mesh, SurfacePoint, DEFAULT_STEINER_POINTS};
use crate::pipeline::{run_with_coarse, coarse_maps, CoarseMaps, PipelineConfig, PipelineInputs, PipelineOutput};
use crate::signals::LesionSet;
use crate::synth::SubjectFixture;

/// Thresholds reported by [`EvalReport`].
pub const SUCCESS_THRESHOLDS_MM: [f64; 4] = [5.0, 10.0, 15.0, 20.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pairs: Vec<(String, String)>,
    #[serde(default)]
    pub unpaired_src: Vec<String>,
    #[serde(default)]
    pub unpaired_tgt: Vec<String>,
}

impl GroundTruth {
    pub fn new(pairs: Vec<(String, String)>, unpaired_src: Vec<String>, unpaired_tgt: Vec<String>) -> Result<Self> {
        let gt = Self {
            pairs,
            unpaired_src,
            unpaired_tgt,
        };
        gt.validate()?;
        Ok(gt)
    }

    pub fn validate(&self) -> Result<()> {
        let mut src = HashSet::new();
        let mut tgt = HashSet::new();
        for (s, t) in &self.pairs {
            if !src.insert(s.as_str()) {
                return Err(Error::Config(format!("source lesion '{s}' appears in two ground-truth pairs")));
            }
            if !tgt.insert(t.as_str()) {
                return Err(Error::Config(format!("target lesion '{t}' appears in two ground-truth pairs")));
            }
        }
        for s in &self.unpaired_src {
            if !src.insert(s.as_str()) {
                return Err(Error::Config(format!("source lesion '{s}' listed twice in the ground truth")));
            }
        }
        for t in &self.unpaired_tgt {
            if !tgt.insert(t.as_str()) {
                return Err(Error::Config(format!("target lesion '{t}' listed twice in the ground truth")));
            }
        }
        Ok(())
    }

    /// Ground truth restricted to surviving lesions; pairs that lost a member
    /// leave their partner unpaired.
    pub fn restrict(&self, src_keep: &HashSet<&str>, tgt_keep: &HashSet<&str>) -> Self {
        let mut out = Self {
            pairs: Vec::new(),
            unpaired_src: self.unpaired_src.iter().filter(|s| src_keep.contains(s.as_str())).cloned().collect(),
            unpaired_tgt: self.unpaired_tgt.iter().filter(|t| tgt_keep.contains(t.as_str())).cloned().collect(),
        };
        for (s, t) in &self.pairs {
            match (src_keep.contains(s.as_str()), tgt_keep.contains(t.as_str())) {
                (true, true) => out.pairs.push((s.clone(), t.clone())),
                (true, false) => out.unpaired_src.push(s.clone()),
                (false, true) => out.unpaired_tgt.push(t.clone()),
                (false, false) => {}
            }
        }
        out
    }

    /// The ground truth as a match matrix over the given id lists.
    pub fn to_match_matrix(&self, src_ids: &[String], tgt_ids: &[String]) -> Result<MatchMatrix> {
        let si = index_of(src_ids);
        let ti = index_of(tgt_ids);
        let pairs = self
            .pairs
            .iter()
            .map(|(s, t)| {
                let i = *si.get(s.as_str()).ok_or_else(|| Error::UnknownId(s.clone()))?;
                let j = *ti.get(t.as_str()).ok_or_else(|| Error::UnknownId(t.clone()))?;
                Ok((i, j))
            })
            .collect::<Result<Vec<_>>>()?;
        MatchMatrix::from_pairs(src_ids.to_vec(), tgt_ids.to_vec(), &pairs)
    }
}

fn index_of(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect()
}

/// Template locations of one side's lesions, keyed by id.
#[derive(Debug, Clone, Copy)]
pub struct MappedLesions<'a> {
    pub ids: &'a [String],
    pub points: &'a [SurfacePoint],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapQuality {
    /// Template geodesic distance per ground-truth pair, in pair order.
    pub distances_mm: Vec<f64>,
    pub d_lp_mean: f64,
    /// Population standard deviation over pairs.
    pub d_lp_std: f64,
}

impl MapQuality {
    /// Fraction of pairs mapped closer than `threshold_mm`.
    pub fn success_rate(&self, threshold_mm: f64) -> f64 {
        if self.distances_mm.is_empty() {
            return 1.0;
        }
        self.distances_mm.iter().filter(|&&d| d < threshold_mm).count() as f64 / self.distances_mm.len() as f64
    }
}

/// Distances on the template between the mapped members of every
/// ground-truth pair.
pub fn map_quality(gt: &GroundTruth, src: MappedLesions, tgt: MappedLesions, template: &Mesh) -> Result<MapQuality> {
    if src.ids.len() != src.points.len() || tgt.ids.len() != tgt.points.len() {
        return Err(Error::DimensionMismatch("lesion ids and locations differ in length".into()));
    }
    let si = index_of(src.ids);
    let ti = index_of(tgt.ids);
    let geo = Geodesic::new(template, DEFAULT_STEINER_POINTS);
    let distances_mm = gt
        .pairs
        .iter()
        .map(|(s, t)| {
            let i = *si.get(s.as_str()).ok_or_else(|| Error::UnknownId(s.clone()))?;
            let j = *ti.get(t.as_str()).ok_or_else(|| Error::UnknownId(t.clone()))?;
            geo.distance(&src.points[i], &tgt.points[j])
        })
        .collect::<Result<Vec<_>>>()?;
    let (d_lp_mean, d_lp_std) = mean_std(&distances_mm);
    Ok(MapQuality {
        distances_mm,
        d_lp_mean,
        d_lp_std,
    })
}

/// Mean and population standard deviation; zeros for an empty slice.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Subject-wise aggregation: mean of per-subject means and their population
/// standard deviation.
pub fn subject_wise(per_subject_means: &[f64]) -> (f64, f64) {
    mean_std(per_subject_means)
}

/// Fraction of ground-truth pairs reproduced by `pi`. An empty ground truth
/// scores 1.
pub fn matching_accuracy(pi: &MatchMatrix, gt: &GroundTruth) -> f64 {
    if gt.pairs.is_empty() {
        return 1.0;
    }
    correct_pairs(pi, gt) as f64 / gt.pairs.len() as f64
}

fn correct_pairs(pi: &MatchMatrix, gt: &GroundTruth) -> usize {
    let predicted: HashSet<(&str, &str)> = pi.id_pairs().into_iter().collect();
    gt.pairs
        .iter()
        .filter(|(s, t)| predicted.contains(&(s.as_str(), t.as_str())))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub k_pred: usize,
    pub k_gt: usize,
    /// No real matches were predicted; precision is reported as 0.
    pub empty_prediction: bool,
    /// The ground truth has no real matches; recall is reported as 0.
    pub empty_truth: bool,
}

/// Precision, recall and F1 over real-real matches. Entries are compared by
/// lesion id, so the two matrices may list lesions in different orders.
pub fn prf1(pred: &MatchMatrix, truth: &MatchMatrix) -> Prf1 {
    let truth_pairs: HashSet<(&str, &str)> = truth.id_pairs().into_iter().collect();
    let pred_pairs = pred.id_pairs();
    let correct = pred_pairs.iter().filter(|p| truth_pairs.contains(p)).count();
    let (k_pred, k_gt) = (pred_pairs.len(), truth_pairs.len());
    let precision = if k_pred == 0 { 0.0 } else { correct as f64 / k_pred as f64 };
    let recall = if k_gt == 0 { 0.0 } else { correct as f64 / k_gt as f64 };
    // harmonic mean of precision and recall, written without the quotients
    let f1 = if correct == 0 { 0.0 } else { (2 * correct) as f64 / (k_pred + k_gt) as f64 };
    Prf1 {
        precision,
        recall,
        f1,
        correct,
        k_pred,
        k_gt,
        empty_prediction: k_pred == 0,
        empty_truth: k_gt == 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub d_lp_mean: f64,
    pub d_lp_std: f64,
    pub d_sw_mean: f64,
    pub d_sw_std: f64,
    /// `(threshold_mm, rate)` for each of [`SUCCESS_THRESHOLDS_MM`].
    pub success_rate: Vec<(f64, f64)>,
    pub matching_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub k_pred: usize,
    pub k_gt: usize,
    pub empty_prediction: bool,
}

impl EvalReport {
    /// Scores one subject.
    pub fn for_subject(quality: &MapQuality, pred: &MatchMatrix, gt: &GroundTruth) -> Result<Self> {
        let truth = gt.to_match_matrix(&pred.src_ids, &pred.tgt_ids)?;
        let p = prf1(pred, &truth);
        Ok(Self {
            d_lp_mean: quality.d_lp_mean,
            d_lp_std: quality.d_lp_std,
            d_sw_mean: quality.d_lp_mean,
            d_sw_std: 0.0,
            success_rate: SUCCESS_THRESHOLDS_MM.iter().map(|&t| (t, quality.success_rate(t))).collect(),
            matching_accuracy: matching_accuracy(pred, gt),
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
            k_pred: p.k_pred,
            k_gt: p.k_gt,
            empty_prediction: p.empty_prediction,
        })
    }

    pub fn success_rate_at(&self, threshold_mm: f64) -> Option<f64> {
        self.success_rate.iter().find(|(t, _)| *t == threshold_mm).map(|(_, r)| *r)
    }

    /// Combines subjects: pair-level statistics pool all pairs, D_SW is the
    /// mean of subject means, rates are averaged over subjects.
    pub fn aggregate(subjects: &[(EvalReport, MapQuality)]) -> Option<Self> {
        let first = subjects.first()?;
        let n = subjects.len() as f64;
        let all: Vec<f64> = subjects.iter().flat_map(|(_, q)| q.distances_mm.iter().copied()).collect();
        let (d_lp_mean, d_lp_std) = mean_std(&all);
        let means: Vec<f64> = subjects.iter().map(|(_, q)| q.d_lp_mean).collect();
        let (d_sw_mean, d_sw_std) = subject_wise(&means);
        let avg = |f: &dyn Fn(&EvalReport) -> f64| subjects.iter().map(|(r, _)| f(r)).sum::<f64>() / n;
        Some(Self {
            d_lp_mean,
            d_lp_std,
            d_sw_mean,
            d_sw_std,
            success_rate: first
                .0
                .success_rate
                .iter()
                .enumerate()
                .map(|(k, (t, _))| (*t, avg(&|r| r.success_rate[k].1)))
                .collect(),
            matching_accuracy: avg(&|r| r.matching_accuracy),
            precision: avg(&|r| r.precision),
            recall: avg(&|r| r.recall),
            f1: avg(&|r| r.f1),
            k_pred: subjects.iter().map(|(r, _)| r.k_pred).sum(),
            k_gt: subjects.iter().map(|(r, _)| r.k_gt).sum(),
            empty_prediction: subjects.iter().any(|(r, _)| r.empty_prediction),
        })
    }
}

/// Number of lesions removed from a side of `n` at `p_percent`.
pub fn dropout_count(n: usize, p_percent: f64) -> usize {
    ((p_percent * n as f64 / 100.0) + 1e-9).floor().min(n as f64) as usize
}

/// Removal order of each side for a seed. The first `k` entries are the
/// removed lesions, so higher rates remove supersets of lower ones.
pub fn dropout_order(n_src: usize, n_tgt: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut src: Vec<usize> = (0..n_src).collect();
    src.shuffle(&mut rng);
    let mut tgt: Vec<usize> = (0..n_tgt).collect();
    tgt.shuffle(&mut rng);
    (src, tgt)
}

fn without(set: &LesionSet, removed: &[usize]) -> Result<LesionSet> {
    let drop: HashSet<usize> = removed.iter().copied().collect();
    LesionSet::new(
        set.mesh_id.clone(),
        set.lesions
            .iter()
            .enumerate()
            .filter(|(k, _)| !drop.contains(k))
            .map(|(_, l)| l.clone())
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct DropoutRun {
    pub report: EvalReport,
    pub quality: MapQuality,
    pub gt: GroundTruth,
    pub removed_src: Vec<String>,
    pub removed_tgt: Vec<String>,
    pub output: PipelineOutput,
}

/// Removes `floor(p% * n)` lesions per side, independently and without
/// replacement, runs the pipeline and scores it against the surviving
/// ground truth.
pub fn dropout_harness(fixture: &SubjectFixture, p_percent: f64, seed: u64, cfg: &PipelineConfig) -> Result<EvalReport> {
    Ok(dropout_run(fixture, None, p_percent, seed, cfg)?.report)
}

/// [`dropout_harness`] with optional precomputed coarse maps and the full
/// run returned.
pub fn dropout_run(
    fixture: &SubjectFixture,
    coarse: Option<&CoarseMaps>,
    p_percent: f64,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<DropoutRun> {
    if !(0.0..100.0).contains(&p_percent) {
        return Err(Error::Config(format!("dropout percentage must be in [0, 100) (got {p_percent})")));
    }
    let (ns, nt) = (fixture.lesions_src.lesions.len(), fixture.lesions_tgt.lesions.len());
    let (src_order, tgt_order) = dropout_order(ns, nt, seed);
    let src_removed = &src_order[..dropout_count(ns, p_percent)];
    let tgt_removed = &tgt_order[..dropout_count(nt, p_percent)];
    let lesions_src = without(&fixture.lesions_src, src_removed)?;
    let lesions_tgt = without(&fixture.lesions_tgt, tgt_removed)?;

    let inputs = PipelineInputs {
        lesions_src: &lesions_src,
        lesions_tgt: &lesions_tgt,
        ..fixture.inputs()
    };
    let coarse = match coarse {
        Some(c) => c.clone(),
        None => coarse_maps(&inputs)?,
    };
    let output = run_with_coarse(&inputs, coarse, cfg)?;

    let src_ids = lesions_src.ids();
    let tgt_ids = lesions_tgt.ids();
    let gt = fixture.gt.restrict(
        &src_ids.iter().map(String::as_str).collect(),
        &tgt_ids.iter().map(String::as_str).collect(),
    );
    let quality = map_quality(
        &gt,
        MappedLesions { ids: &src_ids, points: &output.refined_src },
        MappedLesions { ids: &tgt_ids, points: &output.refined_tgt },
        &fixture.template,
    )?;
    let report = EvalReport::for_subject(&quality, &output.matches, &gt)?;
    let name = |set: &LesionSet, removed: &[usize]| removed.iter().map(|&k| set.lesions[k].id.clone()).collect();
    Ok(DropoutRun {
        report,
        quality,
        removed_src: name(&fixture.lesions_src, src_removed),
        removed_tgt: name(&fixture.lesions_tgt, tgt_removed),
        gt,
        output,
    })
}
