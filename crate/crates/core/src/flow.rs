//! Surface optical flow on the template.
//!
//! The unknown is one 2-vector per template vertex, expressed in that
//! vertex's tangent frame. On a face the field is the average of the three
//! corner vectors rotated into the face plane. The energy
//!
//! ```text
//! E(v) = sum_pairs w * sum_{i in 0,1} ∫ (<grad F_i, v> - (F_0 - F_1))^2
//!      + smoothness * ∫ |grad v|^2 + size * ∫ |v|^2
//! ```
//!
//! is a quadratic `v'Av - 2b'v + c`. The data integrals use the face-constant
//! field against the linear difference `F_0 - F_1`; the smoothness term is the
//! Dirichlet energy of the corner vectors transported into each face; the
//! size term uses the lumped mass.
//!
//! [`solve_flow`] runs coarse to fine over signals smoothed by heat diffusion.
//! At each step the source signal is moved forward and the target signal
//! backward by half the current field, the residual flow is solved with the
//! regularizers acting on the accumulated field, and the increment is added.

use std::io::{Read, Write};

use nalgebra::Matrix2;
use nalgebra_sparse::CsrMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blob::{self, BlobKind};
use crate::correspondence::CorrespondenceMap;
use crate::error::{Error, Result};
use crate::linalg::{dot, pcg, quad_form, spmv, SolveStats, SolverOptions, Triplets};
use crate::mesh::{Mesh, SurfacePoint, Vec2};

/// One 2-vector per template vertex in the vertex's tangent frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentField {
    pub mesh_id: String,
    pub components: Vec<[f64; 2]>,
}

impl TangentField {
    pub fn zeros(mesh: &Mesh) -> Self {
        Self {
            mesh_id: mesh.id().to_string(),
            components: vec![[0.0; 2]; mesh.num_vertices()],
        }
    }

    pub fn from_flat(mesh: &Mesh, x: &[f64]) -> Self {
        Self {
            mesh_id: mesh.id().to_string(),
            components: x.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.components.iter().flat_map(|c| *c).collect()
    }

    pub fn check(&self, mesh: &Mesh) -> Result<()> {
        if self.components.len() != mesh.num_vertices() {
            return Err(Error::DimensionMismatch(format!(
                "field has {} vectors, mesh has {} vertices",
                self.components.len(),
                mesh.num_vertices()
            )));
        }
        if self.components.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Config("tangent field has non-finite components".into()));
        }
        Ok(())
    }

    /// Field at `p` in the frame of `p.triangle`: barycentric blend of the
    /// corner vectors after rotating them into the face plane.
    pub fn at(&self, mesh: &Mesh, p: &SurfacePoint) -> Vec2 {
        let fr = mesh.frames();
        let tri = mesh.triangles()[p.triangle];
        let mut v = Vec2::zeros();
        for c in 0..3 {
            let x = self.components[tri[c]];
            v += fr.corner_transport[p.triangle][c] * Vec2::new(x[0], x[1]) * p.bary[c];
        }
        v
    }

    pub fn max_norm(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c[0].hypot(c[1]))
            .fold(0.0, f64::max)
    }

    pub fn write_binary<W: Write>(&self, w: &mut W, config_hash: &str) -> Result<()> {
        blob::write_header(w, BlobKind::TangentField, config_hash)?;
        blob::write_str(w, &self.mesh_id)?;
        blob::write_u64(w, self.components.len() as u64)?;
        for c in &self.components {
            blob::write_f64(w, c[0])?;
            blob::write_f64(w, c[1])?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<(Self, String)> {
        let hash = blob::read_header(r, BlobKind::TangentField)?;
        let mesh_id = blob::read_str(r)?;
        let n = blob::read_len(r)?;
        let mut components = Vec::with_capacity(n);
        for _ in 0..n {
            components.push([blob::read_f64(r)?, blob::read_f64(r)?]);
        }
        Ok((Self { mesh_id, components }, hash))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub w_texture: f64,
    pub w_lesion: f64,
    /// Weight of the Dirichlet energy of the field. Signals are unitless, so
    /// this weight is too.
    pub smoothness: f64,
    /// Weight of the squared field magnitude (1/mm^2).
    pub size: f64,
    pub levels: usize,
    pub inner_iters: usize,
    /// Diffusion time of the finest level; `None`: squared mean edge length.
    pub base_time: Option<f64>,
    pub solver_tol: f64,
    pub solver_max_iters: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            w_texture: 1.0,
            w_lesion: 10.0,
            smoothness: 0.1,
            size: 1e-5,
            levels: 3,
            inner_iters: 2,
            base_time: None,
            solver_tol: 1e-8,
            solver_max_iters: 20_000,
        }
    }
}

/// Weights with every mesh-dependent default filled in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedFlowConfig {
    pub w_texture: f64,
    pub w_lesion: f64,
    pub smoothness: f64,
    pub size: f64,
    pub levels: usize,
    pub inner_iters: usize,
    pub base_time: f64,
    pub solver: SolverOptions,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("w_texture", Some(self.w_texture)),
            ("w_lesion", Some(self.w_lesion)),
            ("smoothness", Some(self.smoothness)),
            ("size", Some(self.size)),
            ("base_time", self.base_time),
        ];
        for (name, w) in weights {
            if let Some(w) = w {
                if !(w >= 0.0) || !w.is_finite() {
                    return Err(Error::Config(format!("{name} must be a finite nonnegative number, got {w}")));
                }
            }
        }
        if self.w_texture == 0.0 && self.w_lesion == 0.0 {
            return Err(Error::Config("at least one of w_texture, w_lesion must be positive".into()));
        }
        if self.levels == 0 || self.inner_iters == 0 {
            return Err(Error::Config("levels and inner_iters must be at least 1".into()));
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::Config("solver_tol must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, template: &Mesh) -> Result<ResolvedFlowConfig> {
        self.validate()?;
        let h = template.mean_edge_length();
        Ok(ResolvedFlowConfig {
            w_texture: self.w_texture,
            w_lesion: self.w_lesion,
            smoothness: self.smoothness,
            size: self.size,
            levels: self.levels,
            inner_iters: self.inner_iters,
            base_time: self.base_time.unwrap_or(h * h),
            solver: SolverOptions {
                tol: self.solver_tol,
                max_iters: self.solver_max_iters,
            },
        })
    }
}

/// A source/target signal pair on the template with its data weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPair {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    pub weight: f64,
}

/// `E(x) = x'Ax - 2b'x + c`.
#[derive(Debug, Clone)]
pub struct QuadraticEnergy {
    pub a: CsrMatrix<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl QuadraticEnergy {
    pub fn eval(&self, x: &[f64]) -> f64 {
        quad_form(&self.a, x) - 2.0 * dot(&self.b, x) + self.c
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        spmv(&self.a, x, &mut g);
        g.iter_mut().zip(&self.b).for_each(|(g, b)| *g = 2.0 * (*g - b));
        g
    }

    pub fn minimize(&self, opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
        let mut x = vec![0.0; self.b.len()];
        let stats = pcg(&self.a, &self.b, &mut x, opts)?;
        Ok((x, stats))
    }
}

fn check_pairs(template: &Mesh, pairs: &[SignalPair]) -> Result<()> {
    let n = template.num_vertices();
    for p in pairs {
        if p.source.len() != n || p.target.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "signal pair has {}/{} values for {} template vertices",
                p.source.len(),
                p.target.len(),
                n
            )));
        }
        if !(p.weight >= 0.0) {
            return Err(Error::Config(format!("signal weight must be nonnegative, got {}", p.weight)));
        }
    }
    if !pairs.iter().any(|p| p.weight > 0.0) {
        return Err(Error::Config("all signal weights are zero".into()));
    }
    Ok(())
}

/// Face-local data and regularizer blocks, summed into triplets face by face
/// in mesh order so the result is reproducible.
fn assemble_parts(
    template: &Mesh,
    pairs: &[SignalPair],
    smoothness: f64,
    size: f64,
    with_data: bool,
    with_reg: bool,
) -> QuadraticEnergy {
    let n = template.num_vertices();
    let fem = template.fem();
    let fr = template.frames();
    let mut trip = Triplets::new(2 * n);
    let mut b = vec![0.0; 2 * n];
    let mut c = 0.0;

    for (f, tri) in template.triangles().iter().enumerate() {
        let area = fem.face_area[f];
        let hats = &fem.hat_gradients[f];
        let t: [Matrix2<f64>; 3] = fr.corner_transport[f];
        let mut local = [[0.0f64; 6]; 6];

        if with_data {
            for pair in pairs.iter().filter(|p| p.weight > 0.0) {
                let w = pair.weight;
                let delta = [0, 1, 2].map(|k| pair.source[tri[k]] - pair.target[tri[k]]);
                let mean = (delta[0] + delta[1] + delta[2]) / 3.0;
                let sum_sq: f64 = delta.iter().map(|d| d * d).sum();
                let sum = 3.0 * mean;
                // exact integral of the linear difference squared, once per direction
                c += 2.0 * w * area / 12.0 * (sum_sq + sum * sum);
                for signal in [&pair.source, &pair.target] {
                    let g3 = hats[0] * signal[tri[0]] + hats[1] * signal[tri[1]] + hats[2] * signal[tri[2]];
                    let g = fr.face_components(f, &g3);
                    let mut a = [0.0; 6];
                    for k in 0..3 {
                        let col = t[k].transpose() * g / 3.0;
                        a[2 * k] = col.x;
                        a[2 * k + 1] = col.y;
                    }
                    for i in 0..6 {
                        b[2 * tri[i / 2] + i % 2] += w * area * mean * a[i];
                        for j in 0..6 {
                            local[i][j] += w * area * a[i] * a[j];
                        }
                    }
                }
            }
        }

        if with_reg && smoothness > 0.0 {
            // upper blocks only, mirrored so the matrix is exactly symmetric
            for k in 0..3 {
                for l in k..3 {
                    let kk = smoothness * area * hats[k].dot(&hats[l]);
                    let block = t[k].transpose() * t[l] * kk;
                    for i in 0..2 {
                        for j in 0..2 {
                            if k == l && j < i {
                                continue;
                            }
                            local[2 * k + i][2 * l + j] += block[(i, j)];
                            if (k, i) != (l, j) {
                                local[2 * l + j][2 * k + i] += block[(i, j)];
                            }
                        }
                    }
                }
            }
        }

        for i in 0..6 {
            for j in 0..6 {
                if local[i][j] != 0.0 {
                    trip.push(2 * tri[i / 2] + i % 2, 2 * tri[j / 2] + j % 2, local[i][j]);
                }
            }
        }
    }

    if with_reg && size > 0.0 {
        for (v, m) in fem.mass.iter().enumerate() {
            trip.push(2 * v, 2 * v, size * m);
            trip.push(2 * v + 1, 2 * v + 1, size * m);
        }
    }

    QuadraticEnergy {
        a: trip.into_csr(),
        b,
        c,
    }
}

/// Builds the full quadratic for the given pairs and regularizer weights.
pub fn assemble_energy(template: &Mesh, pairs: &[SignalPair], smoothness: f64, size: f64) -> Result<QuadraticEnergy> {
    check_pairs(template, pairs)?;
    if !(smoothness >= 0.0) || !(size >= 0.0) {
        return Err(Error::Config("smoothness and size weights must be nonnegative".into()));
    }
    Ok(assemble_parts(template, pairs, smoothness, size, true, true))
}

/// Diagnostics of one hierarchical solve.
#[derive(Debug, Clone, Default, Serialize)]
pub struct FlowReport {
    /// `(level, inner iteration, CG iterations, relative residual)`.
    pub solves: Vec<(usize, usize, usize, f64)>,
    pub energy_zero: f64,
    pub energy_unscaled: f64,
    pub energy_final: f64,
    /// Scale applied by the final line search (1 when not needed).
    pub scale: f64,
    /// Smallest and largest Ritz values of the last system, when available.
    pub ritz: Option<(f64, f64)>,
}

/// Hierarchical solve. Returns the field and solver diagnostics. The returned
/// field never has a higher raw-signal energy than the zero field.
pub fn solve_flow(template: &Mesh, pairs: &[SignalPair], cfg: &ResolvedFlowConfig) -> Result<(TangentField, FlowReport)> {
    check_pairs(template, pairs)?;
    let n = template.num_vertices();
    let fem = template.fem();
    let reg = assemble_parts(template, &[], cfg.smoothness, cfg.size, false, true).a;
    let mut x = vec![0.0; 2 * n];
    let mut report = FlowReport::default();

    for level in (0..cfg.levels).rev() {
        let time = cfg.base_time * 4f64.powi(level as i32);
        let smoothed: Vec<SignalPair> = pairs
            .iter()
            .filter(|p| p.weight > 0.0)
            .map(|p| -> Result<SignalPair> {
                Ok(SignalPair {
                    source: fem.heat_diffuse(&p.source, time, &SolverOptions::default())?,
                    target: fem.heat_diffuse(&p.target, time, &SolverOptions::default())?,
                    weight: p.weight,
                })
            })
            .collect::<Result<_>>()?;

        for it in 0..cfg.inner_iters {
            let warped = warp_pairs(template, &smoothed, &x)?;
            let data = assemble_parts(template, &warped, 0.0, 0.0, true, false);
            let a = add_csr(&data.a, &reg);
            let mut rhs = vec![0.0; 2 * n];
            spmv(&reg, &x, &mut rhs);
            rhs.iter_mut().zip(&data.b).for_each(|(r, b)| *r = b - *r);
            let mut dx = vec![0.0; 2 * n];
            let stats = pcg(&a, &rhs, &mut dx, &cfg.solver)?;
            report.solves.push((level, it, stats.iterations, stats.relative_residual));
            report.ritz = stats.ritz_extremes();
            x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
        }
    }

    let energy = assemble_parts(template, pairs, cfg.smoothness, cfg.size, true, true);
    report.energy_zero = energy.c;
    report.energy_unscaled = energy.eval(&x);
    report.scale = 1.0;
    if report.energy_unscaled > report.energy_zero {
        let xax = quad_form(&energy.a, &x);
        let s = if xax > 0.0 { (dot(&energy.b, &x) / xax).clamp(0.0, 1.0) } else { 0.0 };
        x.iter_mut().for_each(|v| *v *= s);
        report.scale = s;
        log::info!("flow line search scaled the field by {s:.4}");
    }
    report.energy_final = energy.eval(&x);
    Ok((TangentField::from_flat(template, &x), report))
}

fn add_csr(a: &CsrMatrix<f64>, b: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    let mut t = Triplets::new(a.nrows());
    for (i, j, v) in a.triplet_iter().chain(b.triplet_iter()) {
        t.push(i, j, *v);
    }
    t.into_csr()
}

/// Source values sampled half a step back along the field and target values
/// half a step forward, so that a correct field makes them agree.
fn warp_pairs(template: &Mesh, pairs: &[SignalPair], x: &[f64]) -> Result<Vec<SignalPair>> {
    if x.iter().all(|&v| v == 0.0) {
        return Ok(pairs.to_vec());
    }
    let fr = template.frames();
    let n = template.num_vertices();
    let samples: Vec<(SurfacePoint, SurfacePoint)> = (0..n)
        .into_par_iter()
        .map(|u| -> Result<(SurfacePoint, SurfacePoint)> {
            let p = template.vertex_point(u)?;
            let c = template.triangles()[p.triangle].iter().position(|&w| w == u).unwrap();
            let v = fr.corner_transport[p.triangle][c] * Vec2::new(x[2 * u], x[2 * u + 1]);
            Ok((template.exp_map(&p, -0.5 * v)?, template.exp_map(&p, 0.5 * v)?))
        })
        .collect::<Result<_>>()?;
    Ok(pairs
        .iter()
        .map(|p| SignalPair {
            source: samples.iter().map(|(b, _)| template.interpolate(&p.source, b)).collect(),
            target: samples.iter().map(|(_, f)| template.interpolate(&p.target, f)).collect(),
            weight: p.weight,
        })
        .collect())
}

/// Moves every row of the source map forward by half the field and every row
/// of the target map backward by half the field.
pub fn advect_maps(
    phi0: &CorrespondenceMap,
    phi1: &CorrespondenceMap,
    field: &TangentField,
    template: &Mesh,
) -> Result<(CorrespondenceMap, CorrespondenceMap)> {
    field.check(template)?;
    let advect = |map: &CorrespondenceMap, sign: f64| -> Result<CorrespondenceMap> {
        let rows = map
            .rows
            .par_iter()
            .map(|p| {
                template.check_triangle(p.triangle)?;
                template.exp_map(p, field.at(template, p) * (0.5 * sign))
            })
            .collect::<Result<_>>()?;
        Ok(CorrespondenceMap {
            from_id: map.from_id.clone(),
            to_id: map.to_id.clone(),
            rows,
        })
    };
    Ok((advect(phi0, 1.0)?, advect(phi1, -1.0)?))
}
