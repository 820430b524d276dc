//! Approximate geodesic distance between surface points.
//!
//! Distances come from Dijkstra over a graph whose nodes are the mesh
//! vertices plus `steiner` evenly spaced points on every edge; every pair of
//! nodes on the boundary of a common triangle that do not lie on the same
//! edge is joined by a straight segment across that triangle. Query points
//! are linked to the nodes of their containing triangle.
//!
//! Graph paths must pass through discrete edge points, which inflates short
//! distances. Each graph path is therefore straightened: the triangles it
//! visits are unfolded into the plane and the shortest path inside that strip
//! is found with a funnel walk. Pairs whose triangles share a vertex are also
//! measured through that vertex's unfolded fan. Every estimate is the length
//! of a genuine surface path, so their minimum is still an upper bound on the
//! true geodesic.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use super::{Mesh, SurfacePoint, Vec2, Vec3};
use crate::error::Result;

pub const DEFAULT_STEINER_POINTS: usize = 1;

#[derive(Debug, Clone)]
pub struct Geodesic<'a> {
    mesh: &'a Mesh,
    steiner: usize,
    node_pos: Vec<Vec3>,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
    edge_faces: Vec<[usize; 2]>,
}

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, u32);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<'a> Geodesic<'a> {
    pub fn new(mesh: &'a Mesh, steiner: usize) -> Self {
        let nv = mesh.num_vertices();
        let topo = mesh.topology();
        let verts = mesh.vertices();
        let mut node_pos: Vec<Vec3> = verts.to_vec();
        for &[a, b] in &topo.edges {
            for j in 0..steiner {
                let s = (j + 1) as f64 / (steiner + 1) as f64;
                node_pos.push(verts[a] * (1.0 - s) + verts[b] * s);
            }
        }
        let n = node_pos.len();
        let mut adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        let link = |adj: &mut Vec<Vec<(u32, f64)>>, x: usize, y: usize| {
            let w = (node_pos[x] - node_pos[y]).norm();
            adj[x].push((y as u32, w));
            adj[y].push((x as u32, w));
        };

        // chains along each edge
        for (e, &[a, b]) in topo.edges.iter().enumerate() {
            let mut prev = a;
            for j in 0..steiner {
                let s = nv + e * steiner + j;
                link(&mut adj, prev, s);
                prev = s;
            }
            link(&mut adj, prev, b);
        }

        // segments across each face between nodes on different edges
        let mut items: Vec<(usize, u8)> = Vec::with_capacity(3 + 3 * steiner);
        for (f, tri) in mesh.triangles().iter().enumerate() {
            items.clear();
            for c in 0..3 {
                // corner c lies on edges c and c + 2
                items.push((tri[c], (1u8 << c) | (1u8 << ((c + 2) % 3))));
            }
            for k in 0..3 {
                let e = topo.face_edges[f][k];
                for j in 0..steiner {
                    items.push((nv + e * steiner + j, 1u8 << k));
                }
            }
            for i in 0..items.len() {
                for j in i + 1..items.len() {
                    if items[i].1 & items[j].1 == 0 {
                        link(&mut adj, items[i].0, items[j].0);
                    }
                }
            }
        }

        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for list in adj {
            for (t, w) in list {
                targets.push(t);
                weights.push(w);
            }
            offsets.push(targets.len());
        }

        let mut edge_faces = vec![[usize::MAX; 2]; topo.edges.len()];
        for (f, fe) in topo.face_edges.iter().enumerate() {
            for &e in fe {
                let slot = if edge_faces[e][0] == usize::MAX { 0 } else { 1 };
                edge_faces[e][slot] = f;
            }
        }

        Self {
            mesh,
            steiner,
            node_pos,
            offsets,
            targets,
            weights,
            edge_faces,
        }
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    pub fn steiner_points(&self) -> usize {
        self.steiner
    }

    fn face_nodes(&self, f: usize) -> impl Iterator<Item = usize> + '_ {
        let nv = self.mesh.num_vertices();
        let tri = self.mesh.triangles()[f];
        let edges = self.mesh.topology().face_edges[f];
        let k = self.steiner;
        tri.into_iter()
            .chain(edges.into_iter().flat_map(move |e| (0..k).map(move |j| nv + e * k + j)))
    }

    /// Distance between two surface points. Symmetric: the search always
    /// starts from the lexicographically smaller endpoint. Returns
    /// `f64::INFINITY` (with a warning) for points on disconnected components.
    pub fn distance(&self, a: &SurfacePoint, b: &SurfacePoint) -> Result<f64> {
        let (a, b) = if point_key(a) <= point_key(b) { (a, b) } else { (b, a) };
        Ok(self.distances_from(a, std::slice::from_ref(b))?[0])
    }

    /// Distances from `source` to every point in `targets` from a single
    /// Dijkstra sweep. Each target's graph path is then straightened inside
    /// the strip of triangles it crosses.
    pub fn distances_from(&self, source: &SurfacePoint, targets: &[SurfacePoint]) -> Result<Vec<f64>> {
        self.distances_within(source, targets, f64::INFINITY)
    }

    /// Like [`Geodesic::distances_from`], but paths whose graph length
    /// exceeds `straighten_below` are not straightened; their entries are the
    /// graph length, an upper bound on the distance.
    pub fn distances_within(&self, source: &SurfacePoint, targets: &[SurfacePoint], straighten_below: f64) -> Result<Vec<f64>> {
        self.mesh.check_triangle(source.triangle)?;
        for t in targets {
            self.mesh.check_triangle(t.triangle)?;
        }
        let ps = self.mesh.embed_unchecked(source);
        let mut shortcut: Vec<f64> = targets
            .iter()
            .map(|t| {
                if t.triangle == source.triangle {
                    (self.mesh.embed_unchecked(t) - ps).norm()
                } else {
                    self.fan_distance(source, t).unwrap_or(f64::INFINITY)
                }
            })
            .collect();
        let mut graph = vec![f64::INFINITY; targets.len()];
        let mut last_node = vec![NONE; targets.len()];
        let mut lookup: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
        for (i, t) in targets.iter().enumerate() {
            if t.triangle == source.triangle {
                graph[i] = shortcut[i];
                continue;
            }
            let pt = self.mesh.embed_unchecked(t);
            for n in self.face_nodes(t.triangle) {
                lookup
                    .entry(n)
                    .or_default()
                    .push((i, (self.node_pos[n] - pt).norm()));
            }
        }

        let mut dist = vec![f64::INFINITY; self.node_pos.len()];
        let mut pred = vec![NONE; self.node_pos.len()];
        let mut heap = BinaryHeap::new();
        for n in self.face_nodes(source.triangle) {
            let d = (self.node_pos[n] - ps).norm();
            if d < dist[n] {
                dist[n] = d;
                heap.push(Entry(d, n as u32));
            }
        }
        let mut bound = graph.iter().copied().fold(0.0, f64::max);
        while let Some(Entry(d, n)) = heap.pop() {
            if d >= bound {
                break;
            }
            let n = n as usize;
            if d > dist[n] {
                continue;
            }
            if let Some(list) = lookup.get(&n) {
                for &(i, off) in list {
                    if d + off < graph[i] {
                        graph[i] = d + off;
                        last_node[i] = n as u32;
                    }
                }
                bound = graph.iter().copied().fold(0.0, f64::max);
            }
            for k in self.offsets[n]..self.offsets[n + 1] {
                let m = self.targets[k] as usize;
                let nd = d + self.weights[k];
                if nd < dist[m] {
                    dist[m] = nd;
                    pred[m] = n as u32;
                    heap.push(Entry(nd, m as u32));
                }
            }
        }

        for (i, t) in targets.iter().enumerate() {
            if last_node[i] != NONE && graph[i] <= straighten_below {
                let mut nodes = vec![last_node[i] as usize];
                while pred[*nodes.last().unwrap()] != NONE {
                    nodes.push(pred[*nodes.last().unwrap()] as usize);
                }
                nodes.reverse();
                if let Some(d) = self.straightened(source, t, &nodes) {
                    shortcut[i] = shortcut[i].min(d);
                }
            }
        }
        let best: Vec<f64> = graph.iter().zip(&shortcut).map(|(g, s)| g.min(*s)).collect();
        if best.iter().any(|d| !d.is_finite()) {
            log::warn!("geodesic distance: some targets are unreachable from triangle {}", source.triangle);
        }
        Ok(best)
    }

    /// Triangles whose boundary contains graph node `n`.
    fn node_faces(&self, n: usize) -> Vec<usize> {
        let nv = self.mesh.num_vertices();
        if n < nv {
            self.mesh.topology().fan(n).iter().map(|fc| fc.face).collect()
        } else {
            let e = (n - nv) / self.steiner;
            self.edge_faces[e].iter().copied().filter(|&f| f != usize::MAX).collect()
        }
    }

    /// Length of the shortest path from `s` to `t` inside a strip of
    /// triangles following the graph path `nodes`. Around each vertex on the
    /// path the strip may pass on either side; sides are flipped greedily
    /// while that shortens the result.
    fn straightened(&self, s: &SurfacePoint, t: &SurfacePoint, nodes: &[usize]) -> Option<f64> {
        let nv = self.mesh.num_vertices();
        let mut flip = vec![false; nodes.len()];
        let mut best = self.strip_length(s, t, nodes, &flip)?;
        for _ in 0..3 {
            let mut improved = false;
            for i in 0..nodes.len() {
                if nodes[i] >= nv || self.mesh.topology().is_boundary_vertex(nodes[i]) {
                    continue;
                }
                flip[i] = !flip[i];
                match self.strip_length(s, t, nodes, &flip) {
                    Some(d) if d < best - 1e-12 * best => {
                        best = d;
                        improved = true;
                    }
                    _ => flip[i] = !flip[i],
                }
            }
            if !improved {
                break;
            }
        }
        Some(best)
    }

    fn strip_length(&self, s: &SurfacePoint, t: &SurfacePoint, nodes: &[usize], flip: &[bool]) -> Option<f64> {
        let mut strip = vec![s.triangle];
        for (i, &x) in nodes.iter().enumerate() {
            let hop_face = match nodes.get(i + 1) {
                None => t.triangle,
                Some(&y) => {
                    let fx = self.node_faces(x);
                    let fy = self.node_faces(y);
                    let last = *strip.last().unwrap();
                    if fx.contains(&last) && fy.contains(&last) {
                        last
                    } else {
                        *fx.iter().filter(|f| fy.contains(f)).min()?
                    }
                }
            };
            self.walk_to(&mut strip, x, hop_face, flip[i])?;
        }
        let d = self.funnel_length(&strip, s, t);
        d.is_finite().then_some(d)
    }

    /// Appends the triangles from the strip's last triangle to `to`, both of
    /// which contain node `x`.
    /// `other_side` takes the longer way around an interior vertex.
    fn walk_to(&self, strip: &mut Vec<usize>, x: usize, to: usize, other_side: bool) -> Option<()> {
        let from = *strip.last().unwrap();
        if from == to {
            return Some(());
        }
        let nv = self.mesh.num_vertices();
        if x >= nv {
            strip.push(to);
            return Some(());
        }
        let frames = self.mesh.frames();
        let fan = self.mesh.topology().fan(x);
        let ia = fan.iter().position(|fc| fc.face == from)?;
        let ib = fan.iter().position(|fc| fc.face == to)?;
        let angle = |i: usize| frames.corner_angle[fan[i].face][fan[i].corner];
        let n = fan.len();
        let ccw: Vec<usize> = (1..=(ib + n - ia) % n).map(|k| (ia + k) % n).collect();
        let cw: Vec<usize> = (1..=(ia + n - ib) % n).map(|k| (ia + n - k) % n).collect();
        let open = self.mesh.topology().is_boundary_vertex(x);
        let path = if open {
            if ib > ia { ccw } else { cw }
        } else {
            let sweep = |p: &[usize]| p[..p.len() - 1].iter().map(|&i| angle(i)).sum::<f64>();
            if (sweep(&ccw) <= sweep(&cw)) != other_side { ccw } else { cw }
        };
        strip.extend(path.into_iter().map(|i| fan[i].face));
        Some(())
    }

    fn funnel_length(&self, strip: &[usize], s: &SurfacePoint, t: &SurfacePoint) -> f64 {
        let frames = self.mesh.frames();
        let topo = self.mesh.topology();
        let mut coords: [Vec2; 3] = frames.face_coords[strip[0]];
        let mut portals: Vec<(Vec2, Vec2)> = Vec::with_capacity(strip.len() + 1);
        let sp = coords[0] * s.bary[0] + coords[1] * s.bary[1] + coords[2] * s.bary[2];
        portals.push((sp, sp));
        for w in strip.windows(2) {
            let (f, g) = (w[0], w[1]);
            let Some(k) = (0..3).find(|&k| topo.twin(f, k).map(|(h, _)| h) == Some(g)) else {
                // not edge-adjacent: give up on this strip
                return f64::INFINITY;
            };
            let (_, m) = topo.twin(f, k).unwrap();
            let (a, b) = (coords[k], coords[(k + 1) % 3]);
            portals.push((b, a));
            // g's edge m runs b -> a
            let cg = &frames.face_coords[g];
            let from = cg[(m + 1) % 3] - cg[m];
            let to = a - b;
            let rot = cross2(&from, &to).atan2(from.dot(&to));
            let (sn, cs) = rot.sin_cos();
            let place = |p: Vec2| {
                let d = p - cg[m];
                b + Vec2::new(cs * d.x - sn * d.y, sn * d.x + cs * d.y)
            };
            let mut next = [Vec2::zeros(); 3];
            next[m] = b;
            next[(m + 1) % 3] = a;
            next[(m + 2) % 3] = place(cg[(m + 2) % 3]);
            coords = next;
        }
        let tp = coords[0] * t.bary[0] + coords[1] * t.bary[1] + coords[2] * t.bary[2];
        portals.push((tp, tp));
        funnel(&portals)
    }

    /// Shortest straight path through the unfolded fan of a vertex shared by
    /// the two triangles, falling back to the path through the vertex itself.
    fn fan_distance(&self, a: &SurfacePoint, b: &SurfacePoint) -> Option<f64> {
        let mesh = self.mesh;
        let ta = mesh.triangles()[a.triangle];
        let tb = mesh.triangles()[b.triangle];
        let pa = mesh.embed_unchecked(a);
        let pb = mesh.embed_unchecked(b);
        let mut best: Option<f64> = None;
        for &w in ta.iter().filter(|w| tb.contains(w)) {
            let d = self.unfold_through(w, a.triangle, &pa, b.triangle, &pb);
            best = Some(best.map_or(d, |x: f64| x.min(d)));
        }
        best
    }

    fn unfold_through(&self, w: usize, fa: usize, pa: &Vec3, fb: usize, pb: &Vec3) -> f64 {
        let mesh = self.mesh;
        let frames = mesh.frames();
        let topo = mesh.topology();
        let pw = mesh.vertices()[w];
        let ra = (pa - pw).norm();
        let rb = (pb - pw).norm();
        let through_vertex = ra + rb;
        if ra == 0.0 || rb == 0.0 {
            return through_vertex;
        }

        // polar angles of fan spokes
        let fan = topo.fan(w);
        let mut spoke_angle = Vec::with_capacity(fan.len() + 1);
        let mut spoke_len = Vec::with_capacity(fan.len() + 1);
        let mut acc = 0.0;
        let mut angle_a = None;
        let mut angle_b = None;
        for fc in fan {
            let tri = mesh.triangles()[fc.face];
            let start = mesh.vertices()[tri[(fc.corner + 1) % 3]] - pw;
            spoke_angle.push(acc);
            spoke_len.push(start.norm());
            if fc.face == fa {
                angle_a = Some(acc + super::frames::angle_between(&start, &(pa - pw)));
            }
            if fc.face == fb {
                angle_b = Some(acc + super::frames::angle_between(&start, &(pb - pw)));
            }
            acc += frames.corner_angle[fc.face][fc.corner];
        }
        let total = acc;
        let boundary = topo.is_boundary_vertex(w);
        if boundary {
            let last = fan[fan.len() - 1];
            let tri = mesh.triangles()[last.face];
            spoke_angle.push(total);
            spoke_len.push((mesh.vertices()[tri[(last.corner + 2) % 3]] - pw).norm());
        }
        let (Some(phi_a), Some(phi_b)) = (angle_a, angle_b) else {
            return through_vertex;
        };

        let mut best = through_vertex;
        // (start angle, signed sweep) of each admissible way around the fan
        let mut sweeps = Vec::with_capacity(2);
        if boundary {
            sweeps.push((phi_a, phi_b - phi_a));
        } else {
            let ccw = (phi_b - phi_a).rem_euclid(total);
            sweeps.push((phi_a, ccw));
            sweeps.push((phi_a, ccw - total));
        }
        for (start, sweep) in sweeps {
            let delta = sweep.abs();
            if delta >= std::f64::consts::PI {
                continue;
            }
            let ax = nalgebra::Vector2::new(ra, 0.0);
            let bx = nalgebra::Vector2::new(rb * delta.cos(), rb * delta.sin());
            let dvec = bx - ax;
            let mut inside = true;
            for (k, &sa) in spoke_angle.iter().enumerate() {
                // angle of this spoke measured from a, in the sweep direction
                let rel = if boundary {
                    (sa - start) * sweep.signum()
                } else {
                    ((sa - start) * sweep.signum()).rem_euclid(total)
                };
                if rel <= 0.0 || rel >= delta {
                    continue;
                }
                let dir = nalgebra::Vector2::new(rel.cos(), rel.sin());
                let denom = dir.x * dvec.y - dir.y * dvec.x;
                if denom.abs() < 1e-300 {
                    inside = false;
                    break;
                }
                let rho = (ax.x * dvec.y - ax.y * dvec.x) / denom;
                if rho > spoke_len[k] {
                    inside = false;
                    break;
                }
            }
            if inside {
                best = best.min(dvec.norm());
            }
        }
        best
    }
}

const NONE: u32 = u32::MAX;

fn cross2(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Shortest path length through a sequence of portals `(left, right)`,
/// the first and last being degenerate start and end points.
fn funnel(portals: &[(Vec2, Vec2)]) -> f64 {
    let n = portals.len();
    let mut apex = portals[0].0;
    let (mut left, mut right) = (apex, apex);
    let (mut li, mut ri) = (0usize, 0usize);
    let mut length = 0.0;
    let mut i = 1;
    while i < n {
        let (l, r) = portals[i];
        if cross2(&(right - apex), &(r - apex)) >= 0.0 {
            if right == apex || left == apex || cross2(&(left - apex), &(r - apex)) < 0.0 {
                right = r;
                ri = i;
            } else {
                length += (left - apex).norm();
                apex = left;
                (right, ri) = (apex, li);
                i = li + 1;
                continue;
            }
        }
        if cross2(&(left - apex), &(l - apex)) <= 0.0 {
            if left == apex || right == apex || cross2(&(right - apex), &(l - apex)) > 0.0 {
                left = l;
                li = i;
            } else {
                length += (right - apex).norm();
                apex = right;
                (left, li) = (apex, ri);
                i = ri + 1;
                continue;
            }
        }
        i += 1;
    }
    length + (portals[n - 1].0 - apex).norm()
}

fn point_key(p: &SurfacePoint) -> (usize, [u64; 3]) {
    (p.triangle, p.bary.map(f64::to_bits))
}
