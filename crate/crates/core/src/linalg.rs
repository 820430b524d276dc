//! Sparse assembly helpers and a Jacobi-preconditioned conjugate gradient
//! solver for symmetric positive definite systems.

use nalgebra::DMatrix;
use nalgebra_sparse::CsrMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative residual `|r| / |b|` at which to stop.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 20_000,
        }
    }
}

/// Convergence record of one CG solve.
#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub residual_history: Vec<f64>,
    alphas: Vec<f64>,
    betas: Vec<f64>,
}

impl SolveStats {
    /// Extreme Ritz values of the (preconditioned) operator from the Lanczos
    /// tridiagonal implied by the CG coefficients. `None` when no iteration ran.
    pub fn ritz_extremes(&self) -> Option<(f64, f64)> {
        let k = self.alphas.len();
        if k == 0 {
            return None;
        }
        let mut t = DMatrix::<f64>::zeros(k, k);
        for j in 0..k {
            let mut d = 1.0 / self.alphas[j];
            if j > 0 {
                d += self.betas[j - 1] / self.alphas[j - 1];
            }
            t[(j, j)] = d;
            if j + 1 < k {
                let off = self.betas[j].sqrt() / self.alphas[j];
                t[(j, j + 1)] = off;
                t[(j + 1, j)] = off;
            }
        }
        let ev = t.symmetric_eigenvalues();
        Some((ev.min(), ev.max()))
    }
}

/// Triplet accumulator. Duplicates are summed in insertion order, so the
/// result is bit-reproducible for a fixed insertion sequence.
pub(crate) struct Triplets {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        self.rows.push(r);
        self.cols.push(c);
        self.vals.push(v);
    }

    /// Compresses to CSR, summing duplicates in insertion order.
    pub fn into_csr(self) -> CsrMatrix<f64> {
        let n = self.n;
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        // stable: equal (row, col) keep insertion order
        order.sort_by_key(|&k| (self.rows[k], self.cols[k]));
        let mut offsets = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(order.len());
        let mut vals: Vec<f64> = Vec::with_capacity(order.len());
        let mut last: Option<(usize, usize)> = None;
        for k in order {
            let key = (self.rows[k], self.cols[k]);
            if last == Some(key) {
                *vals.last_mut().unwrap() += self.vals[k];
            } else {
                offsets[key.0 + 1] += 1;
                cols.push(key.1);
                vals.push(self.vals[k]);
                last = Some(key);
            }
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        CsrMatrix::try_from_csr_data(n, n, offsets, cols, vals).expect("indices are in range by construction")
    }
}

/// `y = a x`.
pub fn spmv(a: &CsrMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let offsets = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    for (i, yi) in y.iter_mut().enumerate() {
        let mut s = 0.0;
        for k in offsets[i]..offsets[i + 1] {
            s += vals[k] * x[cols[k]];
        }
        *yi = s;
    }
}

pub fn diagonal(a: &CsrMatrix<f64>) -> Vec<f64> {
    let mut d = vec![0.0; a.nrows()];
    for (i, j, v) in a.triplet_iter() {
        if i == j {
            d[i] += *v;
        }
    }
    d
}

/// `x^T a x`.
pub fn quad_form(a: &CsrMatrix<f64>, x: &[f64]) -> f64 {
    let mut ax = vec![0.0; x.len()];
    spmv(a, x, &mut ax);
    dot(x, &ax)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `a x = b` by Jacobi-preconditioned CG starting from `x`.
pub fn pcg(
    a: &CsrMatrix<f64>,
    b: &[f64],
    x: &mut [f64],
    opts: &SolverOptions,
) -> Result<SolveStats> {
    let n = b.len();
    let diag = diagonal(a);
    let inv: Vec<f64> = diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut stats = SolveStats::default();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(stats);
    }

    let mut r = vec![0.0; n];
    spmv(a, x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut rel = norm(&r) / bnorm;
    stats.residual_history.push(rel);
    while rel > opts.tol {
        if stats.iterations >= opts.max_iters {
            return Err(Error::SolverDiverged {
                iterations: stats.iterations,
                residual: rel,
                history: stats.residual_history,
            });
        }
        spmv(a, &p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolverDiverged {
                iterations: stats.iterations,
                residual: rel,
                history: stats.residual_history,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        stats.alphas.push(alpha);
        stats.betas.push(beta);
        stats.iterations += 1;
        rel = norm(&r) / bnorm;
        stats.residual_history.push(rel);
        if !rel.is_finite() {
            return Err(Error::SolverDiverged {
                iterations: stats.iterations,
                residual: rel,
                history: stats.residual_history,
            });
        }
    }
    stats.relative_residual = rel;
    Ok(stats)
}
