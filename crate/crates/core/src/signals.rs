//! Scalar signals on the template: pulled-back color channels and diffused
//! lesion indicators.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::blob::{self, BlobKind};
use crate::correspondence::{map_point, CorrespondenceMap};
use crate::error::{Error, Result};
use crate::linalg::SolverOptions;
use crate::mesh::{io::vertex_colors, Mesh, SurfacePoint, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    R,
    G,
    B,
    Lesion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexSignal {
    pub mesh_id: String,
    pub channel: Channel,
    pub values: Vec<f64>,
}

impl Channel {
    fn code(self) -> u32 {
        match self {
            Channel::R => 0,
            Channel::G => 1,
            Channel::B => 2,
            Channel::Lesion => 3,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        [Channel::R, Channel::G, Channel::B, Channel::Lesion]
            .get(c as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown signal channel {c}")))
    }
}

impl VertexSignal {
    pub fn write_binary<W: Write>(&self, w: &mut W, config_hash: &str) -> Result<()> {
        blob::write_header(w, BlobKind::Signal, config_hash)?;
        blob::write_str(w, &self.mesh_id)?;
        blob::write_u32(w, self.channel.code())?;
        blob::write_u64(w, self.values.len() as u64)?;
        for &v in &self.values {
            blob::write_f64(w, v)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<(Self, String)> {
        let hash = blob::read_header(r, BlobKind::Signal)?;
        let mesh_id = blob::read_str(r)?;
        let channel = Channel::from_code(blob::read_u32(r)?)?;
        let n = blob::read_len(r)?;
        let values = (0..n).map(|_| blob::read_f64(r)).collect::<Result<_>>()?;
        Ok((Self { mesh_id, channel, values }, hash))
    }
}

/// Evaluates a per-vertex signal of `source` at the image of every template
/// vertex under `map` (template to source).
pub fn pull_back(template: &Mesh, map: &CorrespondenceMap, values: &[f64], source: &Mesh) -> Result<Vec<f64>> {
    map.validate(template, source)?;
    if values.len() != source.num_vertices() {
        return Err(Error::DimensionMismatch(format!(
            "signal has {} values, source mesh has {} vertices",
            values.len(),
            source.num_vertices()
        )));
    }
    Ok(map.rows.iter().map(|p| source.interpolate(values, p)).collect())
}

/// The three color channels of `source` pulled back to the template. Texture
/// images are baked to vertex colors first.
pub fn pull_back_colors(template: &Mesh, map: &CorrespondenceMap, source: &Mesh) -> Result<[VertexSignal; 3]> {
    let colors = vertex_colors(source).ok_or_else(|| Error::MissingColor(source.id().to_string()))?;
    let channel = |k: usize, ch: Channel| -> Result<VertexSignal> {
        let vals: Vec<f64> = colors.iter().map(|c| c[k]).collect();
        Ok(VertexSignal {
            mesh_id: template.id().to_string(),
            channel: ch,
            values: pull_back(template, map, &vals, source)?,
        })
    };
    Ok([channel(0, Channel::R)?, channel(1, Channel::G)?, channel(2, Channel::B)?])
}

/// Sum of unit-mass deltas at the lesions, diffused for `time` and divided by
/// its maximum. No lesions gives the zero signal.
pub fn build_lesion_signal(template: &Mesh, lesions: &[SurfacePoint], time: f64) -> Result<VertexSignal> {
    build_lesion_signal_with(template, lesions, time, &SolverOptions::default())
}

pub fn build_lesion_signal_with(
    template: &Mesh,
    lesions: &[SurfacePoint],
    time: f64,
    opts: &SolverOptions,
) -> Result<VertexSignal> {
    let n = template.num_vertices();
    let mut values = vec![0.0; n];
    if !lesions.is_empty() {
        if !(time > 0.0) {
            return Err(Error::Config(format!("lesion diffusion time must be > 0, got {time}")));
        }
        let fem = template.fem();
        // collect and sort contributions so the sum does not depend on lesion order
        let mut splats: Vec<(usize, f64)> = Vec::with_capacity(3 * lesions.len());
        for p in lesions {
            template.check_triangle(p.triangle)?;
            let tri = template.triangles()[p.triangle];
            for c in 0..3 {
                if p.bary[c] > 0.0 {
                    splats.push((tri[c], p.bary[c] / fem.mass[tri[c]]));
                }
            }
        }
        splats.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for (v, w) in splats {
            values[v] += w;
        }
        values = fem.heat_diffuse(&values, time, opts)?;
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in &mut values {
            *v = (*v / max).clamp(0.0, 1.0);
        }
    }
    Ok(VertexSignal {
        mesh_id: template.id().to_string(),
        channel: Channel::Lesion,
        values,
    })
}

/// Default lesion diffusion time, `(2 h)^2` for mean edge length `h`.
pub fn default_lesion_diffusion_time(template: &Mesh) -> f64 {
    let h = template.mean_edge_length();
    4.0 * h * h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub id: String,
    pub point: SurfacePoint,
    /// Given as a 3D position and snapped to the surface at load.
    pub snapped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LesionSet {
    pub mesh_id: String,
    pub lesions: Vec<Lesion>,
}

#[derive(Serialize, Deserialize)]
struct LesionFile {
    mesh: String,
    lesions: Vec<LesionRecord>,
}

#[derive(Serialize, Deserialize)]
struct LesionRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tri: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bary: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    snapped: bool,
}

impl LesionSet {
    pub fn new(mesh_id: impl Into<String>, lesions: Vec<Lesion>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for l in &lesions {
            if !seen.insert(l.id.as_str()) {
                return Err(Error::Format(format!("duplicate lesion id '{}'", l.id)));
            }
        }
        Ok(Self {
            mesh_id: mesh_id.into(),
            lesions,
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.lesions.iter().map(|l| l.id.clone()).collect()
    }

    pub fn points(&self) -> Vec<SurfacePoint> {
        self.lesions.iter().map(|l| l.point).collect()
    }

    /// Checks every lesion's triangle against `mesh`.
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        for l in &self.lesions {
            mesh.check_triangle(l.point.triangle)?;
        }
        Ok(())
    }

    /// Parses the JSON lesion file. Entries given by `pos` are snapped to
    /// `mesh`, which is then required.
    pub fn from_json(text: &str, mesh: Option<&Mesh>) -> Result<Self> {
        Self::from_json_scaled(text, mesh, 1.0)
    }

    /// [`LesionSet::from_json`] with `pos` entries multiplied by `to_mm`
    /// before snapping.
    pub fn from_json_scaled(text: &str, mesh: Option<&Mesh>, to_mm: f64) -> Result<Self> {
        let file: LesionFile = serde_json::from_str(text)?;
        let mut lesions = Vec::with_capacity(file.lesions.len());
        for r in file.lesions {
            let (point, snapped) = match (r.tri, r.bary, r.pos) {
                (Some(t), Some(b), _) => {
                    let p = SurfacePoint::new(t, b)?;
                    if let Some(m) = mesh {
                        m.check_triangle(t)?;
                    }
                    (p, r.snapped)
                }
                (_, _, Some(pos)) => {
                    let m = mesh.ok_or_else(|| {
                        Error::Format(format!("lesion '{}' is given by position; a mesh is needed to snap it", r.id))
                    })?;
                    (m.closest_surface_point(&(Vec3::from(pos) * to_mm)), true)
                }
                _ => {
                    return Err(Error::Format(format!(
                        "lesion '{}' needs either tri+bary or pos",
                        r.id
                    )))
                }
            };
            lesions.push(Lesion { id: r.id, point, snapped });
        }
        Self::new(file.mesh, lesions)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = LesionFile {
            mesh: self.mesh_id.clone(),
            lesions: self
                .lesions
                .iter()
                .map(|l| LesionRecord {
                    id: l.id.clone(),
                    tri: Some(l.point.triangle),
                    bary: Some(l.point.bary),
                    pos: None,
                    snapped: l.snapped,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }
}

/// Lesion locations on the template through an input-to-template map, in
/// input order.
pub fn map_lesions_to_template(
    lesions: &LesionSet,
    map: &CorrespondenceMap,
    source: &Mesh,
    template: &Mesh,
) -> Result<Vec<SurfacePoint>> {
    lesions
        .lesions
        .iter()
        .map(|l| map_point(map, source, template, &l.point))
        .collect()
}
