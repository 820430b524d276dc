//! Coarse correspondence maps through a deformed template.
//!
//! A deformed template shares the template's triangles, so a
//! (triangle, barycentric) location found on the deformed geometry is also a
//! location on the template itself. Both map directions are built by nearest
//! surface point queries against the deformed geometry or the input mesh.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blob::{self, BlobKind};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, SurfacePoint, Vec3};

/// Template geometry registered to one scan; connectivity is the template's.
#[derive(Debug, Clone)]
pub struct DeformedTemplate {
    mesh: Mesh,
}

impl DeformedTemplate {
    pub fn new(template: &Mesh, positions: Vec<Vec3>) -> Result<Self> {
        if positions.len() != template.num_vertices() {
            return Err(Error::ConnectivityMismatch(format!(
                "deformed template has {} vertices, template has {}",
                positions.len(),
                template.num_vertices()
            )));
        }
        Ok(Self {
            mesh: template.with_positions(positions)?,
        })
    }

    /// Accepts a loaded mesh after checking that its triangles are the
    /// template's.
    pub fn from_mesh(template: &Mesh, deformed: &Mesh) -> Result<Self> {
        if deformed.triangles() != template.triangles() {
            return Err(Error::ConnectivityMismatch(
                "deformed template triangles differ from the template's".into(),
            ));
        }
        Self::new(template, deformed.vertices().to_vec())
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn positions(&self) -> &[Vec3] {
        self.mesh.vertices()
    }
}

/// One surface point on the `to` mesh per vertex of the `from` mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceMap {
    pub from_id: String,
    pub to_id: String,
    pub rows: Vec<SurfacePoint>,
}

impl CorrespondenceMap {
    /// Checks row count and triangle indices against the two meshes.
    pub fn validate(&self, from: &Mesh, to: &Mesh) -> Result<()> {
        if self.rows.len() != from.num_vertices() {
            return Err(Error::DimensionMismatch(format!(
                "map has {} rows, source mesh has {} vertices",
                self.rows.len(),
                from.num_vertices()
            )));
        }
        for r in &self.rows {
            to.check_triangle(r.triangle)?;
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, w: &mut W, config_hash: &str) -> Result<()> {
        blob::write_header(w, BlobKind::CorrespondenceMap, config_hash)?;
        blob::write_str(w, &self.from_id)?;
        blob::write_str(w, &self.to_id)?;
        blob::write_u64(w, self.rows.len() as u64)?;
        for r in &self.rows {
            blob::write_u32(w, r.triangle as u32)?;
            for b in r.bary {
                blob::write_f64(w, b)?;
            }
        }
        Ok(())
    }

    /// Returns the map and the config hash stored with it.
    pub fn read_binary<R: Read>(r: &mut R) -> Result<(Self, String)> {
        let hash = blob::read_header(r, BlobKind::CorrespondenceMap)?;
        let from_id = blob::read_str(r)?;
        let to_id = blob::read_str(r)?;
        let n = blob::read_len(r)?;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let t = blob::read_u32(r)? as usize;
            let bary = [blob::read_f64(r)?, blob::read_f64(r)?, blob::read_f64(r)?];
            rows.push(SurfacePoint::new(t, bary)?);
        }
        Ok((Self { from_id, to_id, rows }, hash))
    }
}

/// Input vertices to template surface points (`φ_i^T` at vertices).
pub fn coarse_map_to_template(
    input: &Mesh,
    deformed: &DeformedTemplate,
    template: &Mesh,
) -> Result<CorrespondenceMap> {
    check_deformed(deformed, template)?;
    let target = deformed.mesh();
    let rows = input
        .vertices()
        .par_iter()
        .map(|q| target.closest_surface_point(q))
        .collect();
    Ok(CorrespondenceMap {
        from_id: input.id().to_string(),
        to_id: template.id().to_string(),
        rows,
    })
}

/// Template vertices to input surface points (`φ_T^i` at vertices).
pub fn coarse_map_from_template(
    template: &Mesh,
    deformed: &DeformedTemplate,
    input: &Mesh,
) -> Result<CorrespondenceMap> {
    check_deformed(deformed, template)?;
    let rows = deformed
        .positions()
        .par_iter()
        .map(|q| input.closest_surface_point(q))
        .collect();
    Ok(CorrespondenceMap {
        from_id: template.id().to_string(),
        to_id: input.id().to_string(),
        rows,
    })
}

fn check_deformed(deformed: &DeformedTemplate, template: &Mesh) -> Result<()> {
    if deformed.mesh().triangles() != template.triangles() {
        return Err(Error::ConnectivityMismatch(
            "deformed template was built for a different template".into(),
        ));
    }
    Ok(())
}

/// Extends a vertex map to an arbitrary surface point: interpolate the images
/// of the triangle's corners, then snap to the nearest point of `to`.
pub fn map_point(map: &CorrespondenceMap, from: &Mesh, to: &Mesh, p: &SurfacePoint) -> Result<SurfacePoint> {
    from.check_triangle(p.triangle)?;
    let tri = from.triangles()[p.triangle];
    let mut q = Vec3::zeros();
    for c in 0..3 {
        let row = map.rows.get(tri[c]).ok_or_else(|| {
            Error::DimensionMismatch(format!("map has no row for vertex {}", tri[c]))
        })?;
        q += to.embed(row)? * p.bary[c];
    }
    Ok(to.closest_surface_point(&q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::test_meshes::grid;

    fn bumpy(nx: usize) -> Mesh {
        let g = grid(nx, nx, 1.0);
        let verts = g
            .vertices()
            .iter()
            .map(|v| Vec3::new(v.x, v.y, (0.4 * v.x).sin() * (0.3 * v.y).cos()))
            .collect();
        g.with_positions(verts).unwrap()
    }

    #[test]
    fn identity_fixture_maps_vertices_to_themselves() {
        let t = bumpy(8);
        let d = DeformedTemplate::new(&t, t.vertices().to_vec()).unwrap();
        let to = coarse_map_to_template(d.mesh(), &d, &t).unwrap();
        let from = coarse_map_from_template(&t, &d, d.mesh()).unwrap();
        let tol = 1e-9 * t.bbox_diagonal();
        for (v, (a, b)) in to.rows.iter().zip(&from.rows).enumerate() {
            assert!((t.embed(a).unwrap() - t.vertices()[v]).norm() < tol);
            assert!((t.embed(b).unwrap() - t.vertices()[v]).norm() < tol);
        }
        // round trip vertex -> template -> vertex
        for v in 0..t.num_vertices() {
            let p = t.vertex_point(v).unwrap();
            let q = map_point(&to, d.mesh(), &t, &p).unwrap();
            let back = map_point(&from, &t, d.mesh(), &q).unwrap();
            assert!((d.mesh().embed(&back).unwrap() - t.vertices()[v]).norm() < tol);
        }
    }

    #[test]
    fn normal_offset_stays_close() {
        let t = bumpy(10);
        let d = DeformedTemplate::new(&t, t.vertices().to_vec()).unwrap();
        let fr = t.frames();
        let offset: Vec<Vec3> = t
            .vertices()
            .iter()
            .zip(&fr.vertex_normal)
            .map(|(v, n)| v + n * 1.0)
            .collect();
        let input = t.with_positions(offset).unwrap();
        let to = coarse_map_to_template(&input, &d, &t).unwrap();
        for (v, r) in to.rows.iter().enumerate() {
            assert!((t.embed(r).unwrap() - t.vertices()[v]).norm() < 1.1);
        }
        let from = coarse_map_from_template(&t, &d, &input).unwrap();
        for v in 0..t.num_vertices() {
            let q = map_point(&from, &t, &input, &t.vertex_point(v).unwrap()).unwrap();
            let back = map_point(&to, &input, &t, &q).unwrap();
            assert!((t.embed(&back).unwrap() - t.vertices()[v]).norm() < 2.2);
        }
    }

    #[test]
    fn rows_match_exhaustive_projection() {
        let t = bumpy(6);
        let shifted: Vec<Vec3> = t.vertices().iter().map(|v| v + Vec3::new(0.3, -0.2, 0.5)).collect();
        let d = DeformedTemplate::new(&t, shifted).unwrap();
        let input = grid(7, 5, 0.9);
        let map = coarse_map_to_template(&input, &d, &t).unwrap();
        for (q, row) in input.vertices().iter().zip(&map.rows) {
            let mut best = f64::INFINITY;
            for f in 0..t.num_triangles() {
                let [a, b, c] = d.mesh().corners(f);
                let (_, p) = crate::mesh::closest_point_on_triangle(q, &a, &b, &c);
                best = best.min((p - q).norm_squared());
            }
            let got = (d.mesh().embed(row).unwrap() - q).norm_squared();
            assert!((got - best).abs() <= 1e-12 * (1.0 + best));
        }
    }

    #[test]
    fn vertex_lookup_reproduces_rows_and_edges_are_continuous() {
        let t = bumpy(6);
        let d = DeformedTemplate::new(&t, t.vertices().iter().map(|v| v * 1.05).collect()).unwrap();
        let input = bumpy(5);
        let map = coarse_map_to_template(&input, &d, &t).unwrap();
        for v in 0..input.num_vertices() {
            let q = map_point(&map, &input, &t, &input.vertex_point(v).unwrap()).unwrap();
            let diff = t.embed(&q).unwrap() - t.embed(&map.rows[v]).unwrap();
            assert!(diff.norm() < 1e-9 * t.bbox_diagonal());
        }
        // a point on an edge of triangle 0, reached from both sides
        let topo = input.topology();
        let (k, (g, m)) = (0..3).find_map(|k| topo.twin(0, k).map(|x| (k, x))).unwrap();
        let mut a = [0.0; 3];
        a[k] = 0.3;
        a[(k + 1) % 3] = 0.7;
        // the twin edge runs the other way
        let mut b = [0.0; 3];
        b[(m + 1) % 3] = 0.3;
        b[m] = 0.7;
        let pa = map_point(&map, &input, &t, &SurfacePoint::new(0, a).unwrap()).unwrap();
        let pb = map_point(&map, &input, &t, &SurfacePoint::new(g, b).unwrap()).unwrap();
        assert!((t.embed(&pa).unwrap() - t.embed(&pb).unwrap()).norm() < 1e-6 * t.bbox_diagonal());
    }

    #[test]
    fn binary_roundtrip() {
        let t = bumpy(4);
        let d = DeformedTemplate::new(&t, t.vertices().to_vec()).unwrap();
        let map = coarse_map_to_template(&t.clone().with_id("scan"), &d, &t.clone().with_id("tmpl")).unwrap();
        let mut buf = Vec::new();
        map.write_binary(&mut buf, "h1").unwrap();
        let (back, hash) = CorrespondenceMap::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back, map);
        assert_eq!(hash, "h1");
    }

    #[test]
    fn connectivity_mismatch_rejected() {
        let t = bumpy(4);
        assert!(DeformedTemplate::new(&t, vec![Vec3::zeros(); 3]).is_err());
        let other = grid(3, 3, 1.0);
        assert!(DeformedTemplate::from_mesh(&t, &other).is_err());
    }
}
