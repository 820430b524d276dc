//! Coarse maps, signals, flow, advection and matching in one call.

use serde::{Deserialize, Serialize};

use crate::assignment::{build_cost, match_report, solve_assignment, AssignConfig, CostMatrix, MatchMatrix, MatchReport};
use crate::correspondence::{coarse_map_from_template, coarse_map_to_template, CorrespondenceMap, DeformedTemplate};
use crate::error::{Error, Result};
use crate::flow::{advect_maps, solve_flow, FlowConfig, FlowReport, SignalPair, TangentField};
use crate::mesh::{Mesh, SurfacePoint};
use crate::synth::SubjectFixture;
use crate::signals::{build_lesion_signal, default_lesion_diffusion_time, map_lesions_to_template, pull_back_colors, LesionSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub flow: FlowConfig,
    pub assign: AssignConfig,
    /// Heat diffusion time of the lesion signal (mm^2); defaults to
    /// `(2 h)^2` with `h` the template's mean edge length.
    pub lesion_diffusion_time: Option<f64>,
    /// Skip the flow and match with the coarse maps.
    pub skip_flow: bool,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        self.assign.validate()?;
        if let Some(t) = self.lesion_diffusion_time {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("lesion diffusion time must be positive (got {t})")));
            }
        }
        Ok(())
    }

    pub fn lesion_time(&self, template: &Mesh) -> f64 {
        self.lesion_diffusion_time.unwrap_or_else(|| default_lesion_diffusion_time(template))
    }
}

/// Borrowed inputs of one subject.
#[derive(Debug, Clone, Copy)]
pub struct PipelineInputs<'a> {
    pub template: &'a Mesh,
    pub deformed_src: &'a DeformedTemplate,
    pub deformed_tgt: &'a DeformedTemplate,
    pub src_mesh: &'a Mesh,
    pub tgt_mesh: &'a Mesh,
    pub lesions_src: &'a LesionSet,
    pub lesions_tgt: &'a LesionSet,
}

/// The four vertex maps between the scans and the template.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseMaps {
    pub src_to_template: CorrespondenceMap,
    pub template_to_src: CorrespondenceMap,
    pub tgt_to_template: CorrespondenceMap,
    pub template_to_tgt: CorrespondenceMap,
}

impl SubjectFixture {
    /// The fixture's meshes and lesions as pipeline inputs.
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

pub fn coarse_maps(inputs: &PipelineInputs) -> Result<CoarseMaps> {
    let t = inputs.template;
    Ok(CoarseMaps {
        src_to_template: coarse_map_to_template(inputs.src_mesh, inputs.deformed_src, t)?,
        template_to_src: coarse_map_from_template(t, inputs.deformed_src, inputs.src_mesh)?,
        tgt_to_template: coarse_map_to_template(inputs.tgt_mesh, inputs.deformed_tgt, t)?,
        template_to_tgt: coarse_map_from_template(t, inputs.deformed_tgt, inputs.tgt_mesh)?,
    })
}

/// Texture channels (when `w_texture > 0`) and the lesion signal, pulled
/// back to the template.
pub fn build_signals(inputs: &PipelineInputs, coarse: &CoarseMaps, cfg: &PipelineConfig) -> Result<Vec<SignalPair>> {
    let t = inputs.template;
    let mut pairs = Vec::with_capacity(4);
    if cfg.flow.w_texture > 0.0 {
        let src = pull_back_colors(t, &coarse.template_to_src, inputs.src_mesh)?;
        let tgt = pull_back_colors(t, &coarse.template_to_tgt, inputs.tgt_mesh)?;
        for (s, g) in src.into_iter().zip(tgt) {
            pairs.push(SignalPair {
                source: s.values,
                target: g.values,
                weight: cfg.flow.w_texture,
            });
        }
    }
    if cfg.flow.w_lesion > 0.0 {
        let time = cfg.lesion_time(t);
        let src = map_lesions_to_template(inputs.lesions_src, &coarse.src_to_template, inputs.src_mesh, t)?;
        let tgt = map_lesions_to_template(inputs.lesions_tgt, &coarse.tgt_to_template, inputs.tgt_mesh, t)?;
        pairs.push(SignalPair {
            source: build_lesion_signal(t, &src, time)?.values,
            target: build_lesion_signal(t, &tgt, time)?.values,
            weight: cfg.flow.w_lesion,
        });
    }
    Ok(pairs)
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub coarse: CoarseMaps,
    pub field: TangentField,
    pub flow_report: Option<FlowReport>,
    pub refined_src_to_template: CorrespondenceMap,
    pub refined_tgt_to_template: CorrespondenceMap,
    /// Lesion locations on the template through the coarse maps.
    pub coarse_src: Vec<SurfacePoint>,
    pub coarse_tgt: Vec<SurfacePoint>,
    /// Lesion locations on the template through the refined maps.
    pub refined_src: Vec<SurfacePoint>,
    pub refined_tgt: Vec<SurfacePoint>,
    pub cost: CostMatrix,
    pub matches: MatchMatrix,
    pub report: MatchReport,
}

pub fn run_pipeline(inputs: &PipelineInputs, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let coarse = coarse_maps(inputs)?;
    run_with_coarse(inputs, coarse, cfg)
}

/// Runs everything after the coarse maps, which are expensive and do not
/// depend on the lesions.
pub fn run_with_coarse(inputs: &PipelineInputs, coarse: CoarseMaps, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let t = inputs.template;
    inputs.lesions_src.validate(inputs.src_mesh)?;
    inputs.lesions_tgt.validate(inputs.tgt_mesh)?;
    coarse.src_to_template.validate(inputs.src_mesh, t)?;
    coarse.tgt_to_template.validate(inputs.tgt_mesh, t)?;

    let (field, flow_report) = if cfg.skip_flow {
        (TangentField::zeros(t), None)
    } else {
        let pairs = build_signals(inputs, &coarse, cfg)?;
        let resolved = cfg.flow.resolve(t)?;
        let (field, report) = solve_flow(t, &pairs, &resolved)?;
        (field, Some(report))
    };
    let (refined_src_to_template, refined_tgt_to_template) = if cfg.skip_flow {
        (coarse.src_to_template.clone(), coarse.tgt_to_template.clone())
    } else {
        advect_maps(&coarse.src_to_template, &coarse.tgt_to_template, &field, t)?
    };

    let coarse_src = map_lesions_to_template(inputs.lesions_src, &coarse.src_to_template, inputs.src_mesh, t)?;
    let coarse_tgt = map_lesions_to_template(inputs.lesions_tgt, &coarse.tgt_to_template, inputs.tgt_mesh, t)?;
    let refined_src = map_lesions_to_template(inputs.lesions_src, &refined_src_to_template, inputs.src_mesh, t)?;
    let refined_tgt = map_lesions_to_template(inputs.lesions_tgt, &refined_tgt_to_template, inputs.tgt_mesh, t)?;

    let (matches, cost, report) = match_lesions(inputs, &refined_src, &refined_tgt, &cfg.assign)?;
    Ok(PipelineOutput {
        coarse,
        field,
        flow_report,
        refined_src_to_template,
        refined_tgt_to_template,
        coarse_src,
        coarse_tgt,
        refined_src,
        refined_tgt,
        cost,
        matches,
        report,
    })
}

/// Assignment stage alone, from template locations.
pub fn match_lesions(
    inputs: &PipelineInputs,
    src_on_template: &[SurfacePoint],
    tgt_on_template: &[SurfacePoint],
    cfg: &AssignConfig,
) -> Result<(MatchMatrix, CostMatrix, MatchReport)> {
    let t = inputs.template;
    let cost = build_cost(src_on_template, tgt_on_template, t, cfg)?;
    let matches = solve_assignment(&cost, inputs.lesions_src.ids(), inputs.lesions_tgt.ids())?;
    let report = match_report(&matches, &cost, src_on_template, tgt_on_template, t)?;
    Ok((matches, cost, report))
}
