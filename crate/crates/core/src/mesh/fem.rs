//! Linear finite-element operators on a triangle mesh.

use nalgebra_sparse::CsrMatrix;

use super::{Mesh, Vec3};
use crate::error::{Error, Result};
use crate::linalg::{pcg, spmv, SolveStats, SolverOptions, Triplets};

/// Cotangent weights are clamped to this magnitude on near-degenerate triangles.
pub const COT_CLAMP: f64 = 1e4;

#[derive(Debug, Clone)]
pub struct FemOperators {
    /// Lumped vertex mass: one third of the incident triangle areas.
    pub mass: Vec<f64>,
    /// Cotangent stiffness (positive semidefinite, constants in the kernel).
    pub stiffness: CsrMatrix<f64>,
    pub face_area: Vec<f64>,
    /// Gradient of each corner's hat function on each face.
    pub hat_gradients: Vec<[Vec3; 3]>,
    /// Clamped cotangent of the angle at each corner.
    pub corner_cot: Vec<[f64; 3]>,
}

impl FemOperators {
    pub(crate) fn build(mesh: &Mesh) -> Self {
        let nv = mesh.num_vertices();
        let nf = mesh.num_triangles();
        let mut mass = vec![0.0; nv];
        let mut face_area = Vec::with_capacity(nf);
        let mut hat_gradients = Vec::with_capacity(nf);
        let mut corner_cot = Vec::with_capacity(nf);
        let mut trip = Triplets::new(nv);

        for (f, tri) in mesh.triangles().iter().enumerate() {
            let p = mesh.corners(f);
            let cross = (p[1] - p[0]).cross(&(p[2] - p[0]));
            let area = 0.5 * cross.norm();
            let n = cross / (2.0 * area);
            face_area.push(area);
            for &v in tri {
                mass[v] += area / 3.0;
            }
            let mut grads = [Vec3::zeros(); 3];
            let mut cots = [0.0; 3];
            for c in 0..3 {
                // edge opposite corner c, counter-clockwise
                let e = p[(c + 2) % 3] - p[(c + 1) % 3];
                grads[c] = n.cross(&e) / (2.0 * area);
                let u = p[(c + 1) % 3] - p[c];
                let w = p[(c + 2) % 3] - p[c];
                let cot = u.dot(&w) / u.cross(&w).norm();
                cots[c] = cot.clamp(-COT_CLAMP, COT_CLAMP);
            }
            for c in 0..3 {
                let (i, j) = (tri[(c + 1) % 3], tri[(c + 2) % 3]);
                let w = 0.5 * cots[c];
                trip.push(i, j, -w);
                trip.push(j, i, -w);
                trip.push(i, i, w);
                trip.push(j, j, w);
            }
            hat_gradients.push(grads);
            corner_cot.push(cots);
        }

        Self {
            mass,
            stiffness: trip.into_csr(),
            face_area,
            hat_gradients,
            corner_cot,
        }
    }

    /// Per-face gradient of a per-vertex scalar.
    pub fn gradient(&self, mesh: &Mesh, f: &[f64]) -> Vec<Vec3> {
        mesh.triangles()
            .iter()
            .zip(&self.hat_gradients)
            .map(|(tri, g)| g[0] * f[tri[0]] + g[1] * f[tri[1]] + g[2] * f[tri[2]])
            .collect()
    }

    pub fn apply_stiffness(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        spmv(&self.stiffness, f, &mut out);
        out
    }

    /// Mass-weighted integral of a per-vertex scalar.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.mass.iter().zip(f).map(|(m, v)| m * v).sum()
    }

    /// One implicit Euler step of heat flow, `(M + t S) u = M f`.
    pub fn heat_diffuse(&self, signal: &[f64], time: f64, opts: &SolverOptions) -> Result<Vec<f64>> {
        self.heat_diffuse_with_stats(signal, time, opts).map(|(u, _)| u)
    }

    pub fn heat_diffuse_with_stats(
        &self,
        signal: &[f64],
        time: f64,
        opts: &SolverOptions,
    ) -> Result<(Vec<f64>, SolveStats)> {
        let n = self.mass.len();
        if signal.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "signal has {} values for {} vertices",
                signal.len(),
                n
            )));
        }
        if !(time >= 0.0) || !time.is_finite() {
            return Err(Error::Config(format!("diffusion time must be >= 0, got {time}")));
        }
        if time == 0.0 {
            return Ok((signal.to_vec(), SolveStats::default()));
        }
        let mut trip = Triplets::new(n);
        for (i, j, v) in self.stiffness.triplet_iter() {
            trip.push(i, j, time * v);
        }
        for (i, m) in self.mass.iter().enumerate() {
            trip.push(i, i, *m);
        }
        let a = trip.into_csr();
        let rhs: Vec<f64> = self.mass.iter().zip(signal).map(|(m, f)| m * f).collect();
        let mut u = signal.to_vec();
        let stats = pcg(&a, &rhs, &mut u, opts)?;
        Ok((u, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_meshes::*;
    use super::*;
    use crate::linalg::quad_form;

    #[test]
    fn linear_function_has_constant_gradient() {
        let m = grid(5, 4, 0.3);
        let f: Vec<f64> = m.vertices().iter().map(|v| v.x).collect();
        for g in m.fem().gradient(&m, &f) {
            assert!((g - Vec3::x()).norm() < 1e-12);
        }
    }

    #[test]
    fn constants_are_in_the_stiffness_kernel() {
        let m = tetrahedron();
        let r = m.fem().apply_stiffness(&[2.5; 4]);
        assert!(r.iter().all(|x| x.abs() < 1e-9));
        let m = grid(6, 6, 1.0);
        let r = m.fem().apply_stiffness(&vec![1.0; m.num_vertices()]);
        assert!(r.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn total_mass_is_area() {
        let m = tetrahedron();
        let total: f64 = m.fem().mass.iter().sum();
        let area: f64 = (0..4).map(|t| m.triangle_area(t)).sum();
        assert!((total - area).abs() <= 1e-9 * area);
    }

    #[test]
    fn stiffness_symmetric_psd() {
        let m = grid(5, 5, 1.0);
        let s = &m.fem().stiffness;
        let dense = nalgebra::DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| {
            s.get_entry(i, j).map(|e| e.into_value()).unwrap_or(0.0)
        });
        assert_eq!(dense, dense.transpose());
        let ev = dense.symmetric_eigenvalues();
        assert!(ev.min() > -1e-10);
        let x: Vec<f64> = (0..s.nrows()).map(|i| (i as f64).cos()).collect();
        assert!(quad_form(s, &x) >= 0.0);
    }

    #[test]
    fn diffusion_zero_time_and_constant() {
        let m = grid(6, 6, 1.0);
        let f: Vec<f64> = (0..m.num_vertices()).map(|i| (i % 5) as f64).collect();
        assert_eq!(m.heat_diffuse(&f, 0.0).unwrap(), f);
        let c = vec![0.7; m.num_vertices()];
        let u = m.heat_diffuse(&c, 3.0).unwrap();
        assert!(u.iter().all(|x| (x - 0.7).abs() < 1e-10));
    }

    #[test]
    fn diffusion_conserves_mass_and_respects_max_principle() {
        let m = grid(10, 10, 1.0);
        let mut f = vec![0.0; m.num_vertices()];
        f[60] = 1.0;
        f[17] = 0.5;
        let u = m.heat_diffuse(&f, 2.0).unwrap();
        let fem = m.fem();
        let (a, b) = (fem.integrate(&f), fem.integrate(&u));
        assert!((a - b).abs() <= 1e-8 * a);
        assert!(u.iter().all(|&x| x > -1e-10 && x <= 1.0 + 1e-10));
    }

    #[test]
    fn negative_time_rejected() {
        let m = grid(2, 2, 1.0);
        assert!(m.heat_diffuse(&[0.0; 9], -1.0).is_err());
    }
}
