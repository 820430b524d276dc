//! Geodesic tracing (discrete exponential map).
//!
//! A straight line is followed inside the current triangle; at an edge the
//! neighbouring triangle is unfolded into the plane of the current one and the
//! line continues. When the line runs exactly into a vertex it leaves along the
//! direction that splits the total angle around the vertex into two equal
//! halves. The trace stops early on the mesh boundary.

use super::{Mesh, SurfacePoint, Vec2};
use crate::error::{Error, Result};

pub const MAX_CROSSINGS: usize = 100_000;

/// Relative edge parameter below which a crossing counts as a vertex hit.
const VERTEX_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEnd {
    /// Travelled the full length.
    Completed,
    /// Stopped on a boundary edge or vertex.
    Boundary,
}

#[derive(Debug, Clone, Copy)]
pub struct ExpMapTrace {
    pub end: SurfacePoint,
    /// Arc length actually travelled.
    pub length: f64,
    pub crossings: usize,
    pub reason: TraceEnd,
}

fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn bary_from_2d(c: &[Vec2; 3], q: &Vec2) -> [f64; 3] {
    let denom = cross(&(c[1] - c[0]), &(c[2] - c[0]));
    let l1 = cross(&(q - c[0]), &(c[2] - c[0])) / denom;
    let l2 = cross(&(c[1] - c[0]), &(q - c[0])) / denom;
    [1.0 - l1 - l2, l1, l2]
}

fn rotate(v: &Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Face, corner and outgoing unit direction (face frame) for a ray leaving
/// vertex `w` at polar angle `phi` measured around its fan.
fn emit_from_vertex(mesh: &Mesh, w: usize, phi: f64) -> Option<(usize, usize, Vec2)> {
    let frames = mesh.frames();
    let fan = mesh.topology().fan(w);
    let mut acc = 0.0;
    for fc in fan {
        let theta = frames.corner_angle[fc.face][fc.corner];
        if phi >= acc && phi <= acc + theta {
            let c = &frames.face_coords[fc.face];
            let spoke = (c[(fc.corner + 1) % 3] - c[fc.corner]).normalize();
            return Some((fc.face, fc.corner, rotate(&spoke, phi - acc)));
        }
        acc += theta;
    }
    None
}

/// Polar angle around vertex `w` of a direction `d` given in the frame of
/// face `f`, where `w` is corner `corner` of `f`. May fall outside the wedge
/// of `f`; the result is reduced modulo the total angle for interior vertices.
fn polar_angle(mesh: &Mesh, w: usize, f: usize, corner: usize, d: &Vec2) -> Option<f64> {
    let frames = mesh.frames();
    let fan = mesh.topology().fan(w);
    let mut acc = 0.0;
    let mut start = None;
    for fc in fan {
        if fc.face == f {
            start = Some(acc);
        }
        acc += frames.corner_angle[fc.face][fc.corner];
    }
    let c = &frames.face_coords[f];
    let spoke = c[(corner + 1) % 3] - c[corner];
    let rel = cross(&spoke, d).atan2(spoke.dot(d));
    let phi = start? + rel;
    if mesh.topology().is_boundary_vertex(w) {
        (0.0..=acc).contains(&phi).then_some(phi)
    } else {
        Some(phi.rem_euclid(acc))
    }
}

pub(crate) fn trace(mesh: &Mesh, p: &SurfacePoint, v: Vec2) -> Result<ExpMapTrace> {
    let total = v.norm();
    if !total.is_finite() {
        return Err(Error::Config(format!("non-finite tangent vector {v:?}")));
    }
    if total == 0.0 {
        return Ok(ExpMapTrace {
            end: *p,
            length: 0.0,
            crossings: 0,
            reason: TraceEnd::Completed,
        });
    }
    let frames = mesh.frames();
    let topo = mesh.topology();
    let mut face = p.triangle;
    let mut dir = v / total;
    let mut remaining = total;
    let mut travelled = 0.0;
    let mut crossings = 0usize;

    let c = &frames.face_coords[face];
    let mut pos = c[0] * p.bary[0] + c[1] * p.bary[1] + c[2] * p.bary[2];

    // starting on a vertex: pick the wedge the direction points into
    if let Some(corner) = (0..3).find(|&k| p.bary[k] > 1.0 - 1e-12) {
        let w = mesh.triangles()[face][corner];
        let Some(phi) = polar_angle(mesh, w, face, corner, &dir) else {
            return Ok(ExpMapTrace {
                end: *p,
                length: 0.0,
                crossings: 0,
                reason: TraceEnd::Boundary,
            });
        };
        if let Some((g, gc, d)) = emit_from_vertex(mesh, w, phi) {
            face = g;
            dir = d;
            pos = frames.face_coords[g][gc];
        }
    }

    loop {
        let c = &frames.face_coords[face];
        let mut exit: Option<(usize, f64, f64)> = None;
        for k in 0..3 {
            let a = c[k];
            let e = c[(k + 1) % 3] - a;
            let outward = Vec2::new(e.y, -e.x);
            if dir.dot(&outward) <= 0.0 {
                continue;
            }
            let denom = cross(&dir, &e);
            let t = cross(&(a - pos), &e) / denom;
            let s = cross(&(a - pos), &dir) / denom;
            let t = t.max(0.0);
            if exit.is_none_or(|(_, bt, _)| t < bt) {
                exit = Some((k, t, s));
            }
        }
        let Some((k, t, s)) = exit else {
            // direction degenerate relative to the face; should not happen
            return Err(Error::InvalidMesh(format!(
                "exp map: no exit edge found in triangle {face}"
            )));
        };

        if t >= remaining {
            pos += dir * remaining;
            travelled += remaining;
            let bary = bary_from_2d(c, &pos);
            return Ok(ExpMapTrace {
                end: SurfacePoint::normalized(face, bary),
                length: travelled,
                crossings,
                reason: TraceEnd::Completed,
            });
        }

        pos += dir * t;
        travelled += t;
        remaining -= t;
        crossings += 1;
        if crossings > MAX_CROSSINGS {
            return Err(Error::TraceLimit(MAX_CROSSINGS));
        }
        let s = s.clamp(0.0, 1.0);

        let hit_corner = if s < VERTEX_EPS {
            Some(k)
        } else if s > 1.0 - VERTEX_EPS {
            Some((k + 1) % 3)
        } else {
            None
        };

        if let Some(corner) = hit_corner {
            let w = mesh.triangles()[face][corner];
            let stop = ExpMapTrace {
                end: SurfacePoint::corner(face, corner),
                length: travelled,
                crossings,
                reason: TraceEnd::Boundary,
            };
            if topo.is_boundary_vertex(w) {
                return Ok(stop);
            }
            let total_angle = frames.angle_sum(mesh, w);
            // the reversed direction points back into this face's wedge
            let back = polar_angle(mesh, w, face, corner, &(-dir)).unwrap_or(0.0);
            let phi = (back + 0.5 * total_angle).rem_euclid(total_angle);
            match emit_from_vertex(mesh, w, phi) {
                Some((g, gc, d)) => {
                    face = g;
                    dir = d;
                    pos = frames.face_coords[g][gc];
                }
                None => return Ok(stop),
            }
            continue;
        }

        match topo.twin(face, k) {
            None => {
                let bary = bary_from_2d(c, &pos);
                return Ok(ExpMapTrace {
                    end: SurfacePoint::normalized(face, bary),
                    length: travelled,
                    crossings,
                    reason: TraceEnd::Boundary,
                });
            }
            Some((g, m)) => {
                let e = c[(k + 1) % 3] - c[k];
                let e_hat = e.normalize();
                let out_hat = Vec2::new(e_hat.y, -e_hat.x);
                let along = dir.dot(&e_hat);
                let perp = dir.dot(&out_hat);

                let cg = &frames.face_coords[g];
                let eg = cg[(m + 1) % 3] - cg[m];
                let eg_hat = eg.normalize();
                // our edge runs A -> B, the twin runs B -> A
                let inward_g = Vec2::new(-eg_hat.y, eg_hat.x);
                pos = cg[m] + eg * (1.0 - s);
                dir = (-eg_hat * along + inward_g * perp).normalize();
                face = g;
            }
        }
    }
}
