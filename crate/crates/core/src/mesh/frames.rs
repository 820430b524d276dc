//! Tangent frames.
//!
//! Every vertex carries an orthonormal basis `(e1, e2)` of its tangent plane,
//! with the normal taken as the angle-weighted average of incident face
//! normals and `e1` the projection of the first fan spoke. Every face carries
//! its own basis `(u1, u2)` with `u1` along edge 0.
//!
//! `corner_transport[f][c]` rotates 2D components expressed in the frame of
//! vertex `tri[f][c]` into the frame of face `f` (minimal rotation taking the
//! vertex normal onto the face normal).

use nalgebra::{Matrix2, Rotation3, Unit};

use super::{Mesh, Vec2, Vec3};

#[derive(Debug, Clone)]
pub struct Frames {
    pub vertex_normal: Vec<Vec3>,
    pub vertex_e1: Vec<Vec3>,
    pub vertex_e2: Vec<Vec3>,
    pub face_normal: Vec<Vec3>,
    pub face_u1: Vec<Vec3>,
    pub face_u2: Vec<Vec3>,
    /// Corner positions in the face frame (corner 0 at the origin).
    pub face_coords: Vec<[Vec2; 3]>,
    pub corner_transport: Vec<[Matrix2<f64>; 3]>,
    /// Interior angle at each corner.
    pub corner_angle: Vec<[f64; 3]>,
}

impl Frames {
    pub(crate) fn build(mesh: &Mesh) -> Self {
        let nf = mesh.num_triangles();
        let nv = mesh.num_vertices();
        let mut face_normal = Vec::with_capacity(nf);
        let mut face_u1 = Vec::with_capacity(nf);
        let mut face_u2 = Vec::with_capacity(nf);
        let mut face_coords = Vec::with_capacity(nf);
        let mut corner_angle = Vec::with_capacity(nf);

        for f in 0..nf {
            let [a, b, c] = mesh.corners(f);
            let n = (b - a).cross(&(c - a)).normalize();
            let u1 = (b - a).normalize();
            let u2 = n.cross(&u1);
            face_normal.push(n);
            face_u1.push(u1);
            face_u2.push(u2);
            let to2 = |p: Vec3| Vec2::new((p - a).dot(&u1), (p - a).dot(&u2));
            face_coords.push([Vec2::zeros(), to2(b), to2(c)]);
            corner_angle.push([
                angle_between(&(b - a), &(c - a)),
                angle_between(&(c - b), &(a - b)),
                angle_between(&(a - c), &(b - c)),
            ]);
        }

        let mut vertex_normal = vec![Vec3::zeros(); nv];
        for (f, tri) in mesh.triangles().iter().enumerate() {
            for c in 0..3 {
                vertex_normal[tri[c]] += face_normal[f] * corner_angle[f][c];
            }
        }
        for n in &mut vertex_normal {
            *n = n.normalize();
        }

        let topo = mesh.topology();
        let mut vertex_e1 = Vec::with_capacity(nv);
        let mut vertex_e2 = Vec::with_capacity(nv);
        for v in 0..nv {
            let n = vertex_normal[v];
            let first = topo.fan(v)[0];
            let other = mesh.triangles()[first.face][(first.corner + 1) % 3];
            let spoke = mesh.vertices()[other] - mesh.vertices()[v];
            let mut e1 = spoke - n * n.dot(&spoke);
            if e1.norm() < 1e-12 * spoke.norm() {
                e1 = any_perpendicular(&n);
            }
            let e1 = e1.normalize();
            vertex_e1.push(e1);
            vertex_e2.push(n.cross(&e1));
        }

        let mut corner_transport = Vec::with_capacity(nf);
        for (f, tri) in mesh.triangles().iter().enumerate() {
            let mut mats = [Matrix2::identity(); 3];
            for c in 0..3 {
                let v = tri[c];
                let rot = rotation_between(&vertex_normal[v], &face_normal[f]);
                let r1 = rot * vertex_e1[v];
                let r2 = rot * vertex_e2[v];
                mats[c] = Matrix2::new(
                    r1.dot(&face_u1[f]),
                    r2.dot(&face_u1[f]),
                    r1.dot(&face_u2[f]),
                    r2.dot(&face_u2[f]),
                );
            }
            corner_transport.push(mats);
        }

        Self {
            vertex_normal,
            vertex_e1,
            vertex_e2,
            face_normal,
            face_u1,
            face_u2,
            face_coords,
            corner_transport,
            corner_angle,
        }
    }

    /// 3D vector from 2D components in the frame of face `f`.
    pub fn face_vector(&self, f: usize, v: &Vec2) -> Vec3 {
        self.face_u1[f] * v.x + self.face_u2[f] * v.y
    }

    /// Components of a 3D vector in the frame of face `f` (normal part dropped).
    pub fn face_components(&self, f: usize, v: &Vec3) -> Vec2 {
        Vec2::new(v.dot(&self.face_u1[f]), v.dot(&self.face_u2[f]))
    }

    pub fn vertex_vector(&self, i: usize, v: &Vec2) -> Vec3 {
        self.vertex_e1[i] * v.x + self.vertex_e2[i] * v.y
    }

    pub fn vertex_components(&self, i: usize, v: &Vec3) -> Vec2 {
        Vec2::new(v.dot(&self.vertex_e1[i]), v.dot(&self.vertex_e2[i]))
    }

    /// Total angle around vertex `v`.
    pub fn angle_sum(&self, mesh: &Mesh, v: usize) -> f64 {
        mesh.topology()
            .fan(v)
            .iter()
            .map(|fc| self.corner_angle[fc.face][fc.corner])
            .sum()
    }
}

pub(crate) fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Minimal rotation taking unit vector `from` onto unit vector `to`.
pub(crate) fn rotation_between(from: &Vec3, to: &Vec3) -> Rotation3<f64> {
    let axis = from.cross(to);
    let s = axis.norm();
    let c = from.dot(to);
    if s < 1e-15 {
        if c > 0.0 {
            return Rotation3::identity();
        }
        let perp = Unit::new_normalize(any_perpendicular(from));
        return Rotation3::from_axis_angle(&perp, std::f64::consts::PI);
    }
    Rotation3::from_axis_angle(&Unit::new_unchecked(axis / s), s.atan2(c))
}

fn any_perpendicular(n: &Vec3) -> Vec3 {
    let trial = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    (trial - n * n.dot(&trial)).normalize()
}

#[cfg(test)]
mod tests {
    use super::super::test_meshes::*;

    #[test]
    fn vertex_bases_are_orthonormal() {
        for m in [tetrahedron(), grid(4, 4, 1.0)] {
            let fr = m.frames();
            for v in 0..m.num_vertices() {
                let (n, e1, e2) = (fr.vertex_normal[v], fr.vertex_e1[v], fr.vertex_e2[v]);
                assert!((e1.norm() - 1.0).abs() < 1e-8);
                assert!((e2.norm() - 1.0).abs() < 1e-8);
                assert!(e1.dot(&e2).abs() < 1e-8);
                assert!(e1.dot(&n).abs() < 1e-8);
                assert!(e2.dot(&n).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn transports_are_rotations() {
        let m = tetrahedron();
        let fr = m.frames();
        for mats in &fr.corner_transport {
            for t in mats {
                assert!((t.determinant() - 1.0).abs() < 1e-10);
                assert!((t.transpose() * t - nalgebra::Matrix2::identity()).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn planar_angle_sum_is_two_pi() {
        let m = grid(3, 3, 1.0);
        let s = m.frames().angle_sum(&m, 5);
        assert!((s - 2.0 * std::f64::consts::PI).abs() < 1e-12);
    }
}
