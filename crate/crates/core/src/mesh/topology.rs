//! Edge twins, undirected edges and ordered vertex fans.
//!
//! Edge `k` of a triangle runs from corner `k` to corner `(k + 1) % 3`.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// One triangle of a vertex fan: the triangle and the corner at which the
/// fan's vertex sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FanCorner {
    pub face: usize,
    pub corner: usize,
}

#[derive(Debug, Clone)]
pub struct Topology {
    /// `twins[f][k]` is the (face, edge) on the other side of edge `k` of `f`.
    twins: Vec<[Option<(usize, usize)>; 3]>,
    /// Undirected edges, lower vertex index first.
    pub edges: Vec<[usize; 2]>,
    /// Undirected edge id of each triangle edge.
    pub face_edges: Vec<[usize; 3]>,
    fan_offsets: Vec<usize>,
    fan_corners: Vec<FanCorner>,
    boundary_vertex: Vec<bool>,
}

impl Topology {
    pub(crate) fn build(num_vertices: usize, triangles: &[[usize; 3]]) -> Result<Self> {
        let mut directed: HashMap<(usize, usize), (usize, usize)> =
            HashMap::with_capacity(triangles.len() * 3);
        for (f, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if directed.insert((a, b), (f, k)).is_some() {
                    return Err(Error::InvalidMesh(format!(
                        "directed edge ({a}, {b}) appears twice: inconsistent winding or non-manifold edge"
                    )));
                }
            }
        }

        let mut twins = vec![[None; 3]; triangles.len()];
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut face_edges = vec![[0usize; 3]; triangles.len()];
        for (f, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                twins[f][k] = directed.get(&(b, a)).copied();
                let key = (a.min(b), a.max(b));
                let id = *edge_ids.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edges.len() - 1
                });
                face_edges[f][k] = id;
            }
        }

        let mut incident: Vec<Vec<FanCorner>> = vec![Vec::new(); num_vertices];
        for (f, tri) in triangles.iter().enumerate() {
            for (c, &v) in tri.iter().enumerate() {
                incident[v].push(FanCorner { face: f, corner: c });
            }
        }

        let mut fan_offsets = Vec::with_capacity(num_vertices + 1);
        let mut fan_corners = Vec::with_capacity(triangles.len() * 3);
        let mut boundary_vertex = vec![false; num_vertices];
        fan_offsets.push(0);
        for (v, inc) in incident.iter().enumerate() {
            if inc.is_empty() {
                return Err(Error::InvalidMesh(format!(
                    "vertex {v} is not referenced by any triangle"
                )));
            }
            // A fan starts at a face whose clockwise side (edge `corner`) is open,
            // or at the lowest-index face when the vertex is interior.
            let start = inc
                .iter()
                .copied()
                .find(|fc| twins[fc.face][fc.corner].is_none());
            boundary_vertex[v] = start.is_some();
            let mut cur = start.unwrap_or(inc[0]);
            let begin = fan_corners.len();
            loop {
                fan_corners.push(cur);
                if fan_corners.len() - begin > inc.len() {
                    break;
                }
                // Counter-clockwise neighbour lies across edge (corner + 2) % 3.
                match twins[cur.face][(cur.corner + 2) % 3] {
                    Some((g, k)) => {
                        let next = FanCorner { face: g, corner: k };
                        if next == fan_corners[begin] {
                            break;
                        }
                        cur = next;
                    }
                    None => break,
                }
            }
            if fan_corners.len() - begin != inc.len() {
                return Err(Error::InvalidMesh(format!(
                    "vertex {v} is non-manifold (fan covers {} of {} incident triangles)",
                    fan_corners.len() - begin,
                    inc.len()
                )));
            }
            fan_offsets.push(fan_corners.len());
        }

        Ok(Self {
            twins,
            edges,
            face_edges,
            fan_offsets,
            fan_corners,
            boundary_vertex,
        })
    }

    /// Face and edge index across edge `k` of face `f`, if not a boundary edge.
    pub fn twin(&self, f: usize, k: usize) -> Option<(usize, usize)> {
        self.twins[f][k]
    }

    /// Triangles around vertex `v` in counter-clockwise order. For boundary
    /// vertices the fan starts at the triangle whose clockwise side is open.
    pub fn fan(&self, v: usize) -> &[FanCorner] {
        &self.fan_corners[self.fan_offsets[v]..self.fan_offsets[v + 1]]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_boundary_edge(&self, f: usize, k: usize) -> bool {
        self.twins[f][k].is_none()
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_meshes::*;

    #[test]
    fn tetra_fans_are_closed() {
        let m = tetrahedron();
        let topo = m.topology();
        assert_eq!(topo.num_edges(), 6);
        for v in 0..4 {
            assert_eq!(topo.fan(v).len(), 3);
            assert!(!topo.is_boundary_vertex(v));
        }
    }

    #[test]
    fn grid_fans_are_ordered() {
        let m = grid(3, 3, 1.0);
        let topo = m.topology();
        let tris = m.triangles();
        for v in 0..m.num_vertices() {
            let fan = topo.fan(v);
            for w in fan.windows(2) {
                // consecutive faces share the spoke v -> (corner + 2) of the first
                let spoke = tris[w[0].face][(w[0].corner + 2) % 3];
                assert_eq!(tris[w[1].face][(w[1].corner + 1) % 3], spoke);
            }
        }
        // interior vertex (1,1) has six incident triangles
        assert_eq!(topo.fan(5).len(), 6);
        assert!(!topo.is_boundary_vertex(5));
        assert!(topo.is_boundary_vertex(0));
    }
}
