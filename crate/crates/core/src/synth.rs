//! Synthetic subjects with known ground truth.
//!
//! A template (sphere, capsule or plane) is deformed twice by smooth space
//! deformations (bend, twist, Gaussian bulges) to give the source and target
//! scans. The registered templates handed to the pipeline are the same
//! deformations applied after the template vertices have slid along the
//! surface by a smooth random field and been pushed off it along the normal,
//! which is what an imperfect registration looks like. Lesions are placed on
//! the template and carried to both scans, so every ground-truth pair has one
//! exact template location.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correspondence::DeformedTemplate;
use crate::error::{Error, Result};
use crate::mesh::{Mesh, SurfacePoint, Vec3};
use crate::metrics::GroundTruth;
use crate::signals::{Lesion, LesionSet};

pub const CAPSULE_RADIUS: f64 = 100.0;
pub const CAPSULE_HALF_LENGTH: f64 = 150.0;
pub const SPHERE_RADIUS: f64 = 100.0;
pub const PLANE_SIZE: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    Sphere,
    Capsule,
    Plane,
}

impl std::str::FromStr for TemplateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(TemplateKind::Sphere),
            "capsule" => Ok(TemplateKind::Capsule),
            "plane" => Ok(TemplateKind::Plane),
            other => Err(Error::Config(format!("unsupported template kind '{other}'"))),
        }
    }
}

/// Template meshes in millimeters. `resolution` is the subdivision level for
/// spheres (0..=7), vertices per quarter turn for capsules (2..=128) and
/// cells per side for planes (1..=1000).
pub fn make_template(kind: TemplateKind, resolution: usize) -> Result<Mesh> {
    let mesh = match kind {
        TemplateKind::Sphere => {
            if resolution > 7 {
                return Err(Error::Config(format!("sphere subdivision {resolution} out of range 0..=7")));
            }
            icosphere(resolution, SPHERE_RADIUS)?
        }
        TemplateKind::Capsule => {
            if !(2..=128).contains(&resolution) {
                return Err(Error::Config(format!("capsule resolution {resolution} out of range 2..=128")));
            }
            capsule(resolution, CAPSULE_RADIUS, CAPSULE_HALF_LENGTH)?
        }
        TemplateKind::Plane => {
            if !(1..=1000).contains(&resolution) {
                return Err(Error::Config(format!("plane resolution {resolution} out of range 1..=1000")));
            }
            plane(resolution, PLANE_SIZE)?
        }
    };
    Ok(mesh.with_id("template"))
}

/// Subdivided icosahedron projected to a sphere: `10 * 4^n + 2` vertices.
pub fn icosphere(subdivisions: usize, radius: f64) -> Result<Mesh> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache = std::collections::HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Mesh::new(verts.into_iter().map(|v| v * radius).collect(), faces)
}

/// Square grid in the `z = 0` plane centered at the origin, normals `+z`.
pub fn plane(cells: usize, size: f64) -> Result<Mesh> {
    let h = size / cells as f64;
    let mut verts = Vec::with_capacity((cells + 1) * (cells + 1));
    for j in 0..=cells {
        for i in 0..=cells {
            verts.push(Vec3::new(i as f64 * h - size / 2.0, j as f64 * h - size / 2.0, 0.0));
        }
    }
    let idx = |i: usize, j: usize| j * (cells + 1) + i;
    let mut faces = Vec::with_capacity(2 * cells * cells);
    for j in 0..cells {
        for i in 0..cells {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    Mesh::new(verts, faces)
}

/// Cylinder of the given radius along `z` on `[-half_length, half_length]`
/// closed by hemispheres. Each cap is an octant-subdivided hemisphere whose
/// ring `k` holds `4k` vertices; the cylinder rings hold `4n`.
pub fn capsule(n: usize, radius: f64, half_length: f64) -> Result<Mesh> {
    let around = 4 * n;
    let spacing = 2.0 * PI * radius / around as f64;
    let cyl_rings = ((2.0 * half_length / spacing).round() as usize).max(1) + 1;

    // (z, ring radius, vertex count) from the top pole down
    let mut rings: Vec<(f64, f64, usize)> = Vec::new();
    for k in 0..n {
        let theta = k as f64 / n as f64 * PI / 2.0;
        rings.push((half_length + radius * theta.cos(), radius * theta.sin(), (4 * k).max(1)));
    }
    for r in 0..cyl_rings {
        let z = half_length - 2.0 * half_length * r as f64 / (cyl_rings - 1) as f64;
        rings.push((z, radius, around));
    }
    for k in (0..n).rev() {
        let theta = k as f64 / n as f64 * PI / 2.0;
        rings.push((-half_length - radius * theta.cos(), radius * theta.sin(), (4 * k).max(1)));
    }

    let mut verts = Vec::new();
    let mut start = Vec::with_capacity(rings.len());
    for &(z, r, count) in &rings {
        start.push(verts.len());
        for i in 0..count {
            let phi = 2.0 * PI * i as f64 / count as f64;
            verts.push(Vec3::new(r * phi.cos(), r * phi.sin(), z));
        }
    }

    let mut faces = Vec::new();
    for w in 0..rings.len() - 1 {
        let (a, b) = (rings[w].2, rings[w + 1].2);
        let (ua, lb) = (start[w], start[w + 1]);
        let upper = |s: usize| ua + s % a;
        let lower = |t: usize| lb + t % b;
        if a == 1 {
            for t in 0..b {
                faces.push([upper(0), lower(t), lower(t + 1)]);
            }
            continue;
        }
        if b == 1 {
            for s in 0..a {
                faces.push([upper(s), lower(0), upper(s + 1)]);
            }
            continue;
        }
        // zip the two rings together in order of azimuth
        let (mut s, mut t) = (0usize, 0usize);
        while s < a || t < b {
            let next_upper = (s + 1) as f64 / a as f64;
            let next_lower = (t + 1) as f64 / b as f64;
            if t < b && (s >= a || next_lower < next_upper || (next_lower == next_upper && b >= a)) {
                faces.push([upper(s), lower(t), lower(t + 1)]);
                t += 1;
            } else {
                faces.push([upper(s), lower(t), upper(s + 1)]);
                s += 1;
            }
        }
    }
    Mesh::new(verts, faces)
}

/// Amplitudes of the smooth deformations. Documented stable ranges:
/// `bend` in [0, 1.2] rad, `twist` in [0, 0.8] rad, `bulge` in [0, 20] mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformParams {
    /// Total bend angle over the template's length.
    pub bend: f64,
    /// Total twist angle over the template's length.
    pub twist: f64,
    /// Peak normal displacement of each Gaussian bulge.
    pub bulge: f64,
    pub n_bulges: usize,
}

impl Default for DeformParams {
    fn default() -> Self {
        Self {
            bend: 0.6,
            twist: 0.0,
            bulge: 10.0,
            n_bulges: 4,
        }
    }
}

impl DeformParams {
    pub fn none() -> Self {
        Self {
            bend: 0.0,
            twist: 0.0,
            bulge: 0.0,
            n_bulges: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.2).contains(&self.bend.abs())
            && (0.0..=0.8).contains(&self.twist.abs())
            && (0.0..=20.0).contains(&self.bulge.abs());
        if !ok {
            return Err(Error::Config(format!(
                "deformation amplitudes outside the stable range (|bend| <= 1.2, |twist| <= 0.8, |bulge| <= 20): {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureMode {
    Consistent,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubjectParams {
    pub seed: u64,
    pub kind: TemplateKind,
    pub resolution: usize,
    pub deform: DeformParams,
    pub n_lesions: usize,
    /// Minimum distance between lesions on the template.
    pub spacing_mm: f64,
    pub texture_mode: TextureMode,
    /// RMS of the tangential slide and of the normal offset of the
    /// registered templates.
    pub registration_noise_mm: f64,
    /// Length scale of the registration error field.
    pub noise_length_mm: f64,
}

impl Default for SubjectParams {
    fn default() -> Self {
        Self {
            seed: 0,
            kind: TemplateKind::Capsule,
            resolution: 32,
            deform: DeformParams::default(),
            n_lesions: 100,
            spacing_mm: 30.0,
            texture_mode: TextureMode::Consistent,
            registration_noise_mm: 3.0,
            noise_length_mm: 60.0,
        }
    }
}

/// Everything a pipeline run needs plus the ground truth to score it.
#[derive(Debug, Clone)]
pub struct SubjectFixture {
    pub params: SubjectParams,
    pub template: Mesh,
    pub deformed_src: DeformedTemplate,
    pub deformed_tgt: DeformedTemplate,
    pub src_mesh: Mesh,
    pub tgt_mesh: Mesh,
    pub lesions_src: LesionSet,
    pub lesions_tgt: LesionSet,
    pub gt: GroundTruth,
    /// True template location of each source lesion, in `lesions_src` order.
    pub true_src: Vec<SurfacePoint>,
    /// True template location of each target lesion, in `lesions_tgt` order.
    pub true_tgt: Vec<SurfacePoint>,
}

/// One concrete space deformation.
#[derive(Debug, Clone)]
struct Deformation {
    /// Curvature of the bend about the y axis (1/mm).
    kappa: f64,
    /// Twist rate about the long axis (rad/mm).
    tau: f64,
    bulges: Vec<(Vec3, f64, f64)>,
}

impl Deformation {
    fn sample(rng: &mut ChaCha8Rng, p: &DeformParams, template: &Mesh, length: f64, sign: f64) -> Self {
        let kappa = sign * p.bend * rng.gen_range(0.5..1.0) / length;
        let tau = sign * p.twist * rng.gen_range(0.5..1.0) / length;
        let bulges = (0..p.n_bulges)
            .map(|_| {
                let v = rng.gen_range(0..template.num_vertices());
                let amp = p.bulge * rng.gen_range(0.5..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let width = rng.gen_range(30.0..60.0);
                (template.vertices()[v], amp, width)
            })
            .collect();
        Self { kappa, tau, bulges }
    }

    /// Bulges displace along the template normal, then twist and bend act on
    /// space.
    fn apply(&self, p: &Vec3, normal: &Vec3) -> Vec3 {
        let mut q = *p;
        for (c, amp, w) in &self.bulges {
            q += normal * (amp * (-(p - c).norm_squared() / (2.0 * w * w)).exp());
        }
        if self.tau != 0.0 {
            let a = self.tau * q.z;
            let (s, co) = a.sin_cos();
            q = Vec3::new(co * q.x - s * q.y, s * q.x + co * q.y, q.z);
        }
        if self.kappa != 0.0 {
            let r = 1.0 / self.kappa;
            let theta = self.kappa * q.z;
            q = Vec3::new(r - (r - q.x) * theta.cos(), q.y, (r - q.x) * theta.sin());
        }
        q
    }

    fn apply_mesh(&self, template: &Mesh, positions: &[Vec3], normals: &[Vec3]) -> Vec<Vec3> {
        let _ = template;
        positions.iter().zip(normals).map(|(p, n)| self.apply(p, n)).collect()
    }
}

/// Smooth random vector field: a sum of Gaussian kernels with random 3D
/// weights, evaluated at `points`.
fn smooth_field(rng: &mut ChaCha8Rng, points: &[Vec3], centers: &[Vec3], length: f64) -> Vec<Vec3> {
    let weights: Vec<Vec3> = centers
        .iter()
        .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    points
        .iter()
        .map(|p| {
            centers
                .iter()
                .zip(&weights)
                .map(|(c, w)| w * (-(p - c).norm_squared() / (2.0 * length * length)).exp())
                .sum()
        })
        .collect()
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// Template vertex positions of a registration with smooth tangential slide
/// and normal offset, both with RMS `noise`.
fn registration_error(rng: &mut ChaCha8Rng, template: &Mesh, noise: f64, length: f64) -> Result<(Vec<Vec3>, Vec<f64>)> {
    let n = template.num_vertices();
    if noise == 0.0 {
        return Ok((template.vertices().to_vec(), vec![0.0; n]));
    }
    let n_centers = ((template.surface_area() / (length * length)).ceil() as usize).clamp(4, 400);
    let centers: Vec<Vec3> = (0..n_centers)
        .map(|_| template.vertices()[rng.gen_range(0..n)])
        .collect();
    let raw = smooth_field(rng, template.vertices(), &centers, length);
    let fr = template.frames();
    let tangential: Vec<Vec3> = raw
        .iter()
        .zip(&fr.vertex_normal)
        .map(|(v, nrm)| v - nrm * v.dot(nrm))
        .collect();
    let t_rms = rms(&tangential.iter().map(|v| v.norm()).collect::<Vec<_>>());
    let normal_raw: Vec<f64> = smooth_field(rng, template.vertices(), &centers, length)
        .iter()
        .map(|v| v.x)
        .collect();
    let n_rms = rms(&normal_raw);

    let mut positions = Vec::with_capacity(n);
    for (v, t) in tangential.iter().enumerate() {
        let p = template.vertex_point(v)?;
        let c = template.triangles()[p.triangle].iter().position(|&w| w == v).unwrap();
        let comps = fr.vertex_components(v, &(t * (noise / t_rms)));
        let face_vec = fr.corner_transport[p.triangle][c] * comps;
        positions.push(template.embed(&template.exp_map(&p, face_vec)?)?);
    }
    let offsets = normal_raw.iter().map(|x| x * noise / n_rms).collect();
    Ok((positions, offsets))
}

/// Texture channels as a function of template position: a few plane waves
/// with wavelengths between 40 and 120 mm per channel.
struct Pattern {
    waves: Vec<[(Vec3, f64, f64); 4]>,
}

impl Pattern {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..3)
            .map(|_| {
                [0; 4].map(|_| {
                    let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                        .normalize();
                    let wavelength = rng.gen_range(40.0..120.0);
                    (dir * (2.0 * PI / wavelength), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.05..0.12))
                })
            })
            .collect();
        Self { waves }
    }

    fn color(&self, p: &Vec3) -> [f64; 3] {
        let mut c = [0.5; 3];
        for (ch, waves) in self.waves.iter().enumerate() {
            for (k, phase, amp) in waves {
                c[ch] += amp * (k.dot(p) + phase).sin();
            }
            c[ch] = c[ch].clamp(0.0, 1.0);
        }
        c
    }
}

/// Area-uniform dart throwing with a Euclidean minimum distance, which also
/// bounds the geodesic distance from below.
fn place_lesions(rng: &mut ChaCha8Rng, template: &Mesh, count: usize, spacing: f64) -> Result<Vec<SurfacePoint>> {
    let areas: Vec<f64> = (0..template.num_triangles()).map(|t| template.triangle_area(t)).collect();
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cumulative.push(acc);
    }
    let mut points: Vec<SurfacePoint> = Vec::with_capacity(count);
    let mut positions: Vec<Vec3> = Vec::with_capacity(count);
    let max_attempts = 200 * count + 1000;
    let mut attempts = 0;
    while points.len() < count {
        if attempts >= max_attempts {
            return Err(Error::SpacingInfeasible {
                requested: count,
                placed: points.len(),
                spacing,
            });
        }
        attempts += 1;
        let r = rng.gen_range(0.0..acc);
        let t = cumulative.partition_point(|&c| c <= r).min(areas.len() - 1);
        let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let p = SurfacePoint::new(t, [1.0 - u - v, u, v])?;
        let q = template.embed(&p)?;
        if positions.iter().all(|o| (o - q).norm() >= spacing) {
            points.push(p);
            positions.push(q);
        }
    }
    Ok(points)
}

fn bounding_length(template: &Mesh) -> f64 {
    let (lo, hi) = template.vertices().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v.z), hi.max(v.z))
    });
    if hi - lo > 1e-9 {
        hi - lo
    } else {
        template.bbox_diagonal()
    }
}

/// Builds a subject. Deterministic in `params`.
pub fn make_subject(params: &SubjectParams) -> Result<SubjectFixture> {
    params.deform.validate()?;
    if !(params.registration_noise_mm >= 0.0) || !(params.noise_length_mm > 0.0) {
        return Err(Error::Config("registration noise must be >= 0 and its length scale > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let template = make_template(params.kind, params.resolution)?;
    let length = bounding_length(&template);
    let normals = template.frames().vertex_normal.clone();

    let def_src = Deformation::sample(&mut rng, &params.deform, &template, length, 1.0);
    let def_tgt = Deformation::sample(&mut rng, &params.deform, &template, length, -1.0);

    let src_pos = def_src.apply_mesh(&template, template.vertices(), &normals);
    let tgt_pos = def_tgt.apply_mesh(&template, template.vertices(), &normals);

    let pattern = Pattern::sample(&mut rng);
    let base_colors: Vec<[f64; 3]> = template.vertices().iter().map(|p| pattern.color(p)).collect();
    let mut recolor = |colors: &[[f64; 3]]| -> Vec<[f64; 3]> {
        match params.texture_mode {
            TextureMode::Consistent => colors.to_vec(),
            TextureMode::Inconsistent => {
                let gain: [f64; 3] = [0; 3].map(|_| rng.gen_range(0.7..1.3));
                let shift: [f64; 3] = [0; 3].map(|_| rng.gen_range(-0.15..0.15));
                colors
                    .iter()
                    .map(|c| [0, 1, 2].map(|k| ((c[k] - 0.5) * gain[k] + 0.5 + shift[k]).clamp(0.0, 1.0)))
                    .collect()
            }
        }
    };
    let src_colors = recolor(&base_colors);
    let tgt_colors = recolor(&base_colors);
    let src_mesh = template.with_positions(src_pos)?.with_colors(src_colors)?.with_id("source");
    let tgt_mesh = template.with_positions(tgt_pos)?.with_colors(tgt_colors)?.with_id("target");

    let mut registered = |def: &Deformation| -> Result<DeformedTemplate> {
        let (slid, offsets) = registration_error(&mut rng, &template, params.registration_noise_mm, params.noise_length_mm)?;
        let pos: Vec<Vec3> = slid
            .iter()
            .zip(&normals)
            .zip(&offsets)
            .map(|((p, n), o)| def.apply(&(p + n * *o), n))
            .collect();
        DeformedTemplate::new(&template, pos)
    };
    let deformed_src = registered(&def_src)?;
    let deformed_tgt = registered(&def_tgt)?;

    for (name, m) in [("source", &src_mesh), ("target", &tgt_mesh)] {
        let flipped = flipped_faces(m);
        if flipped > 0 {
            return Err(Error::Config(format!(
                "{name} deformation folds {flipped} faces; reduce the amplitudes"
            )));
        }
    }

    let truth = place_lesions(&mut rng, &template, params.n_lesions, params.spacing_mm)?;
    let lesions_src = LesionSet::new(
        "source",
        truth
            .iter()
            .enumerate()
            .map(|(k, p)| Lesion {
                id: format!("s{k:03}"),
                point: *p,
                snapped: false,
            })
            .collect(),
    )?;
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.shuffle(&mut rng);
    let lesions_tgt = LesionSet::new(
        "target",
        order
            .iter()
            .map(|&k| Lesion {
                id: format!("t{k:03}"),
                point: truth[k],
                snapped: false,
            })
            .collect(),
    )?;
    let gt = GroundTruth::new(
        (0..truth.len()).map(|k| (format!("s{k:03}"), format!("t{k:03}"))).collect(),
        Vec::new(),
        Vec::new(),
    )?;
    let true_tgt = order.iter().map(|&k| truth[k]).collect();

    Ok(SubjectFixture {
        params: params.clone(),
        template,
        deformed_src,
        deformed_tgt,
        src_mesh,
        tgt_mesh,
        lesions_src,
        lesions_tgt,
        gt,
        true_src: truth,
        true_tgt,
    })
}

/// Number of faces whose normal points against a neighbour's (a fold).
pub fn flipped_faces(mesh: &Mesh) -> usize {
    let topo = mesh.topology();
    (0..mesh.num_triangles())
        .filter(|&f| {
            let n = mesh.face_normal(f);
            (0..3).any(|k| topo.twin(f, k).is_some_and(|(g, _)| n.dot(&mesh.face_normal(g)) < 0.0))
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_combinatorics() {
        let s = make_template(TemplateKind::Sphere, 3).unwrap();
        assert_eq!((s.num_vertices(), s.num_triangles()), (642, 1280));
        let p = make_template(TemplateKind::Plane, 10).unwrap();
        assert_eq!((p.num_vertices(), p.num_triangles()), (121, 200));
        let c = make_template(TemplateKind::Capsule, 8).unwrap();
        // closed surface: V - E + F = 2
        let e = c.topology().num_edges();
        assert_eq!(c.num_vertices() as i64 - e as i64 + c.num_triangles() as i64, 2);
        assert!((0..c.num_vertices()).all(|v| !c.topology().is_boundary_vertex(v)));
        // outward orientation: positive enclosed volume
        let vol: f64 = (0..c.num_triangles())
            .map(|f| {
                let [a, b, cc] = c.corners(f);
                a.dot(&b.cross(&cc)) / 6.0
            })
            .sum();
        assert!(vol > 0.0);
    }

    #[test]
    fn default_capsule_size() {
        let c = make_template(TemplateKind::Capsule, 32).unwrap();
        assert!((10_000..14_000).contains(&c.num_vertices()), "{}", c.num_vertices());
    }

    #[test]
    fn templates_are_deterministic() {
        let a = make_template(TemplateKind::Capsule, 6).unwrap();
        let b = make_template(TemplateKind::Capsule, 6).unwrap();
        assert_eq!(a.vertices(), b.vertices());
        assert_eq!(a.triangles(), b.triangles());
        assert!(make_template(TemplateKind::Sphere, 9).is_err());
    }

    #[test]
    fn identity_subject() {
        let params = SubjectParams {
            resolution: 8,
            deform: DeformParams::none(),
            n_lesions: 10,
            registration_noise_mm: 0.0,
            ..Default::default()
        };
        let f = make_subject(&params).unwrap();
        assert_eq!(f.src_mesh.vertices(), f.template.vertices());
        assert_eq!(f.tgt_mesh.vertices(), f.template.vertices());
        assert_eq!(f.deformed_src.positions(), f.template.vertices());
        for (s, t) in &f.gt.pairs {
            let i = f.lesions_src.lesions.iter().position(|l| &l.id == s).unwrap();
            let j = f.lesions_tgt.lesions.iter().position(|l| &l.id == t).unwrap();
            assert_eq!(f.true_src[i], f.true_tgt[j]);
        }
    }

    #[test]
    fn subjects_are_deterministic_and_unfolded() {
        let params = SubjectParams {
            resolution: 10,
            n_lesions: 20,
            deform: DeformParams {
                bend: 1.2,
                twist: 0.8,
                bulge: 20.0,
                n_bulges: 6,
            },
            ..Default::default()
        };
        let a = make_subject(&params).unwrap();
        let b = make_subject(&params).unwrap();
        assert_eq!(a.src_mesh.vertices(), b.src_mesh.vertices());
        assert_eq!(a.deformed_tgt.positions(), b.deformed_tgt.positions());
        assert_eq!(a.lesions_tgt, b.lesions_tgt);
        assert_eq!(flipped_faces(&a.src_mesh), 0);
    }

    #[test]
    fn infeasible_spacing_is_reported() {
        let params = SubjectParams {
            resolution: 6,
            n_lesions: 500,
            spacing_mm: 80.0,
            ..Default::default()
        };
        assert!(matches!(make_subject(&params), Err(Error::SpacingInfeasible { .. })));
    }
}
