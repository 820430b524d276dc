//! Indexed triangle meshes.
//!
//! A [`Mesh`] is validated on construction (valid, distinct corner indices,
//! consistent winding, manifold vertex fans, no degenerate or unreferenced
//! geometry) and is immutable afterwards. Derived data that is needed by more
//! than one stage (tangent frames, FEM operators, the closest-point BVH) is
//! computed lazily and cached, so a mesh can be shared freely across threads.
//!
//! Locations on the surface are [`SurfacePoint`]s: a triangle index plus a
//! barycentric triple.

mod bvh;
mod exp_map;
mod fem;
mod frames;
mod geodesic;
pub mod io;
mod topology;

use std::sync::OnceLock;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bvh::{closest_point_on_triangle, Bvh};
pub use exp_map::{ExpMapTrace, TraceEnd};
pub use fem::FemOperators;
pub use frames::Frames;
pub use geodesic::{Geodesic, DEFAULT_STEINER_POINTS};
pub use topology::{FanCorner, Topology};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Tolerance on barycentric components and their sum.
pub const BARY_TOL: f64 = 1e-9;

/// A location on a mesh: triangle index plus barycentric coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub triangle: usize,
    pub bary: [f64; 3],
}

impl SurfacePoint {
    /// Validates and renormalizes the barycentric triple.
    pub fn new(triangle: usize, bary: [f64; 3]) -> Result<Self> {
        if bary.iter().any(|b| !b.is_finite() || *b < -BARY_TOL || *b > 1.0 + BARY_TOL) {
            return Err(Error::InvalidBarycentric(bary));
        }
        let sum: f64 = bary.iter().sum();
        if (sum - 1.0).abs() > BARY_TOL {
            return Err(Error::InvalidBarycentric(bary));
        }
        Ok(Self::normalized(triangle, bary))
    }

    /// Clamps negative components to zero and rescales to unit sum. Used for
    /// coordinates produced by geometric computations that may carry roundoff.
    pub(crate) fn normalized(triangle: usize, bary: [f64; 3]) -> Self {
        let mut b = bary.map(|x| if x.is_finite() { x.max(0.0) } else { 0.0 });
        let s: f64 = b.iter().sum();
        if s > 0.0 {
            for x in &mut b {
                *x /= s;
            }
        } else {
            b = [1.0 / 3.0; 3];
        }
        Self { triangle, bary: b }
    }

    /// The point sitting exactly on corner `corner` of `triangle`.
    pub fn corner(triangle: usize, corner: usize) -> Self {
        let mut bary = [0.0; 3];
        bary[corner] = 1.0;
        Self { triangle, bary }
    }

    pub fn centroid(triangle: usize) -> Self {
        Self {
            triangle,
            bary: [1.0 / 3.0; 3],
        }
    }
}

/// A texture image with per-corner texture coordinates.
#[derive(Debug, Clone)]
pub struct Texture {
    /// One `(u, v)` per triangle corner.
    pub uvs: Vec<[[f64; 2]; 3]>,
    pub image: image::RgbImage,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    id: String,
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    colors: Option<Vec<[f64; 3]>>,
    texture: Option<Texture>,
    topology: Topology,
    bbox_diagonal: f64,
    frames: OnceLock<Frames>,
    fem: OnceLock<FemOperators>,
    bvh: OnceLock<Bvh>,
}

impl Mesh {
    /// Builds and validates a mesh.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh has no triangles".into()));
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {i} has a non-finite coordinate")));
        }
        let n = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} repeats a vertex: {tri:?}"
                )));
            }
        }

        let bbox_diagonal = bbox_diagonal(&vertices);
        let min_area = 1e-12 * bbox_diagonal * bbox_diagonal;
        for (t, tri) in triangles.iter().enumerate() {
            let a = triangle_area(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]);
            if !(a > min_area) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} is degenerate (area {a:.3e} <= {min_area:.3e})"
                )));
            }
        }

        let topology = Topology::build(n, &triangles)?;

        Ok(Self {
            id: String::new(),
            vertices,
            triangles,
            colors: None,
            texture: None,
            topology,
            bbox_diagonal,
            frames: OnceLock::new(),
            fem: OnceLock::new(),
            bvh: OnceLock::new(),
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Attaches per-vertex RGB colors in `[0, 1]`.
    pub fn with_colors(mut self, colors: Vec<[f64; 3]>) -> Result<Self> {
        if colors.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} colors for {} vertices",
                colors.len(),
                self.vertices.len()
            )));
        }
        if colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidMesh("vertex colors must lie in [0, 1]".into()));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn with_texture(mut self, texture: Texture) -> Result<Self> {
        if texture.uvs.len() != self.triangles.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} uv triples for {} triangles",
                texture.uvs.len(),
                self.triangles.len()
            )));
        }
        self.texture = Some(texture);
        Ok(self)
    }

    /// Same connectivity, new vertex positions. Colors and texture are kept.
    pub fn with_positions(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::ConnectivityMismatch(format!(
                "{} positions for a mesh with {} vertices",
                vertices.len(),
                self.vertices.len()
            )));
        }
        let mut m = Mesh::new(vertices, self.triangles.clone())?;
        m.id = self.id.clone();
        m.colors = self.colors.clone();
        m.texture = self.texture.clone();
        Ok(m)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn colors(&self) -> Option<&[[f64; 3]]> {
        self.colors.as_deref()
    }

    pub fn texture(&self) -> Option<&Texture> {
        self.texture.as_ref()
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bbox_diagonal
    }

    /// Per-vertex and per-face tangent frames.
    pub fn frames(&self) -> &Frames {
        self.frames.get_or_init(|| Frames::build(self))
    }

    /// Lumped mass, cotangent stiffness and per-face gradient operators.
    pub fn fem(&self) -> &FemOperators {
        self.fem.get_or_init(|| FemOperators::build(self))
    }

    pub fn bvh(&self) -> &Bvh {
        self.bvh.get_or_init(|| Bvh::build(self))
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        triangle_area(&a, &b, &c)
    }

    /// Unit normal of triangle `t` following its winding.
    pub fn face_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = &self.topology.edges;
        edges
            .iter()
            .map(|&[a, b]| (self.vertices[a] - self.vertices[b]).norm())
            .sum::<f64>()
            / edges.len() as f64
    }

    pub fn check_triangle(&self, t: usize) -> Result<()> {
        if t >= self.triangles.len() {
            return Err(Error::TriangleOutOfRange {
                index: t,
                count: self.triangles.len(),
            });
        }
        Ok(())
    }

    /// 3D position of a surface point.
    pub fn embed(&self, p: &SurfacePoint) -> Result<Vec3> {
        self.check_triangle(p.triangle)?;
        Ok(self.embed_unchecked(p))
    }

    pub(crate) fn embed_unchecked(&self, p: &SurfacePoint) -> Vec3 {
        let [a, b, c] = self.corners(p.triangle);
        a * p.bary[0] + b * p.bary[1] + c * p.bary[2]
    }

    /// The surface point on the corner of some triangle incident to vertex `v`.
    pub fn vertex_point(&self, v: usize) -> Result<SurfacePoint> {
        if v >= self.vertices.len() {
            return Err(Error::VertexOutOfRange {
                index: v,
                count: self.vertices.len(),
            });
        }
        let c = self.topology.fan(v)[0];
        Ok(SurfacePoint::corner(c.face, c.corner))
    }

    /// Barycentric interpolation of a per-vertex scalar.
    pub fn interpolate(&self, values: &[f64], p: &SurfacePoint) -> f64 {
        let [a, b, c] = self.triangles[p.triangle];
        values[a] * p.bary[0] + values[b] * p.bary[1] + values[c] * p.bary[2]
    }

    /// Nearest surface point to `q` (ties go to the lowest triangle index).
    pub fn closest_surface_point(&self, q: &Vec3) -> SurfacePoint {
        self.bvh().closest(self, q).0
    }

    /// Like [`Mesh::closest_surface_point`] but also returns the squared distance.
    pub fn closest_surface_point_with_distance(&self, q: &Vec3) -> (SurfacePoint, f64) {
        self.bvh().closest(self, q)
    }

    /// Approximate geodesic distance with the default Steiner refinement.
    /// Build a [`Geodesic`] once when issuing many queries.
    pub fn geodesic_distance(&self, a: &SurfacePoint, b: &SurfacePoint) -> Result<f64> {
        Geodesic::new(self, DEFAULT_STEINER_POINTS).distance(a, b)
    }

    /// Traces the geodesic starting at `p` with initial velocity `v`
    /// (components in the face frame of `p.triangle`).
    pub fn exp_map(&self, p: &SurfacePoint, v: Vec2) -> Result<SurfacePoint> {
        Ok(self.exp_map_traced(p, v)?.end)
    }

    pub fn exp_map_traced(&self, p: &SurfacePoint, v: Vec2) -> Result<ExpMapTrace> {
        self.check_triangle(p.triangle)?;
        exp_map::trace(self, p, v)
    }

    /// One implicit Euler step of heat flow: solves `(M + t S) u = M f`.
    pub fn heat_diffuse(&self, signal: &[f64], time: f64) -> Result<Vec<f64>> {
        self.fem().heat_diffuse(signal, time, &crate::linalg::SolverOptions::default())
    }
}

pub(crate) fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

fn bbox_diagonal(vertices: &[Vec3]) -> f64 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for v in vertices {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    if vertices.is_empty() {
        0.0
    } else {
        (hi - lo).norm()
    }
}
