//! Axis-aligned bounding-volume hierarchy for closest-point queries.

use super::{Mesh, SurfacePoint, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: `[start, start + count)` into `order`. Inner: children at
    /// `start` and `start + 1`, `count == 0`.
    start: usize,
    count: usize,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl Bvh {
    pub(crate) fn build(mesh: &Mesh) -> Self {
        let n = mesh.num_triangles();
        let centroids: Vec<Vec3> = (0..n)
            .map(|t| {
                let [a, b, c] = mesh.corners(t);
                (a + b + c) / 3.0
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut nodes = vec![Node {
            lo: Vec3::zeros(),
            hi: Vec3::zeros(),
            start: 0,
            count: n,
        }];
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let (start, count) = (nodes[ni].start, nodes[ni].count);
            let (lo, hi) = bounds(mesh, &order[start..start + count]);
            nodes[ni].lo = lo;
            nodes[ni].hi = hi;
            if count <= LEAF_SIZE {
                continue;
            }
            let (clo, chi) = order[start..start + count].iter().fold(
                (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
                |(l, h), &t| (l.inf(&centroids[t]), h.sup(&centroids[t])),
            );
            let axis = (chi - clo).imax();
            let mid = count / 2;
            order[start..start + count].select_nth_unstable_by(mid, |&a, &b| {
                centroids[a][axis]
                    .total_cmp(&centroids[b][axis])
                    .then(a.cmp(&b))
            });
            let left = nodes.len();
            nodes.push(Node {
                lo,
                hi,
                start,
                count: mid,
            });
            nodes.push(Node {
                lo,
                hi,
                start: start + mid,
                count: count - mid,
            });
            nodes[ni].start = left;
            nodes[ni].count = 0;
            stack.push(left);
            stack.push(left + 1);
        }
        Self { nodes, order }
    }

    /// Closest surface point and squared distance. Ties resolve to the lowest
    /// triangle index.
    pub fn closest(&self, mesh: &Mesh, q: &Vec3) -> (SurfacePoint, f64) {
        let mut best = (SurfacePoint::centroid(usize::MAX), f64::INFINITY);
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if box_dist2(&node.lo, &node.hi, q) > best.1 {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = mesh.corners(t);
                    let (bary, p) = closest_point_on_triangle(q, &a, &b, &c);
                    let d2 = (q - p).norm_squared();
                    if d2 < best.1 || (d2 == best.1 && t < best.0.triangle) {
                        best = (SurfacePoint::normalized(t, bary), d2);
                    }
                }
            } else {
                let (l, r) = (node.start, node.start + 1);
                let dl = box_dist2(&self.nodes[l].lo, &self.nodes[l].hi, q);
                let dr = box_dist2(&self.nodes[r].lo, &self.nodes[r].hi, q);
                // nearer child on top of the stack
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }
}

fn bounds(mesh: &Mesh, tris: &[usize]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &t in tris {
        for p in mesh.corners(t) {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
    }
    (lo, hi)
}

fn box_dist2(lo: &Vec3, hi: &Vec3, q: &Vec3) -> f64 {
    let mut d = 0.0;
    for i in 0..3 {
        let e = if q[i] < lo[i] {
            lo[i] - q[i]
        } else if q[i] > hi[i] {
            q[i] - hi[i]
        } else {
            0.0
        };
        d += e * e;
    }
    d
}

/// Closest point on triangle `abc` to `p`, returned as barycentric
/// coordinates and position (region-based projection).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> ([f64; 3], Vec3) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ([1.0, 0.0, 0.0], *a);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return ([0.0, 1.0, 0.0], *b);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return ([1.0 - v, v, 0.0], a + ab * v);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return ([0.0, 0.0, 1.0], *c);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return ([1.0 - w, 0.0, w], a + ac * w);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return ([0.0, 1.0 - w, w], b + (c - b) * w);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    ([1.0 - v - w, v, w], a + ab * v + ac * w)
}

#[cfg(test)]
mod tests {
    use super::super::test_meshes::*;
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute(mesh: &Mesh, q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for t in 0..mesh.num_triangles() {
            let [a, b, c] = mesh.corners(t);
            let (_, p) = closest_point_on_triangle(q, &a, &b, &c);
            let d2 = (q - p).norm_squared();
            if d2 < best.1 {
                best = (t, d2);
            }
        }
        best
    }

    #[test]
    fn vertex_query_hits_the_vertex() {
        let m = tetrahedron();
        for v in 0..4 {
            let (p, d2) = m.closest_surface_point_with_distance(&m.vertices()[v]);
            assert_eq!(d2, 0.0);
            assert!((m.embed(&p).unwrap() - m.vertices()[v]).norm() == 0.0);
        }
    }

    #[test]
    fn offset_centroid_projects_to_centroid() {
        let m = tetrahedron();
        for t in 0..4 {
            let c = m.embed(&SurfacePoint::centroid(t)).unwrap();
            let q = c + m.face_normal(t) * 0.1;
            let p = m.closest_surface_point(&q);
            assert_eq!(p.triangle, t);
            for b in p.bary {
                assert!((b - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_exhaustive_search() {
        let m = grid(12, 9, 0.7);
        let bent: Vec<Vec3> = m
            .vertices()
            .iter()
            .map(|v| Vec3::new(v.x, v.y, (v.x * 0.8).sin() * 0.6 + 0.1 * v.y * v.y))
            .collect();
        let m = m.with_positions(bent).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let q = Vec3::new(
                rng.gen_range(-2.0..10.0),
                rng.gen_range(-2.0..8.0),
                rng.gen_range(-2.0..2.0),
            );
            let (p, d2) = m.closest_surface_point_with_distance(&q);
            let (t, bd2) = brute(&m, &q);
            assert_eq!(d2, bd2);
            assert_eq!(p.triangle, t);
        }
    }
}
