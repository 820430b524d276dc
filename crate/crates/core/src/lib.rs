//! Longitudinal lesion tracking on deforming surfaces.

// `!(x >= 0.0)` is used on purpose so that NaN is rejected too; index loops
// over triangle corners read better than zipped iterators.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assignment;
pub mod blob;
pub mod correspondence;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod signals;
pub mod synth;

pub use assignment::{build_cost, match_report, solve_assignment, AssignConfig, CostMatrix, MatchMatrix, MatchReport};
pub use correspondence::{coarse_map_from_template, coarse_map_to_template, map_point, CorrespondenceMap, DeformedTemplate};
pub use error::{Error, Result};
pub use flow::{advect_maps, assemble_energy, solve_flow, FlowConfig, SignalPair, TangentField};
pub use mesh::{Mesh, SurfacePoint, Vec2, Vec3};
pub use metrics::{dropout_harness, map_quality, matching_accuracy, prf1, EvalReport, GroundTruth};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineInputs, PipelineOutput};
pub use signals::{build_lesion_signal, map_lesions_to_template, pull_back, LesionSet};
pub use synth::{make_subject, make_template, SubjectFixture, SubjectParams, TemplateKind};
