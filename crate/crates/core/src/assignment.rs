//! Geodesic-cost lesion assignment with dummy nodes.
//!
//! Every lesion is either matched to exactly one lesion of the other scan or
//! to the dummy of the other side at cost `beta`. The problem is solved
//! exactly by padding to a square matrix and running the Hungarian method.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Geodesic, Mesh, SurfacePoint, DEFAULT_STEINER_POINTS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignConfig {
    /// Cost per millimeter of template geodesic distance.
    pub alpha: f64,
    /// Cost of leaving a lesion unmatched.
    pub beta: f64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 20.0 }
    }
}

impl AssignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "assignment needs alpha > 0 and beta >= 0 (got alpha {}, beta {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Real-real costs, row-major `n0 x n1`, plus the template distances they
/// were built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub n0: usize,
    pub n1: usize,
    pub cost: Vec<f64>,
    pub distance_mm: Vec<f64>,
    pub beta: f64,
}

impl CostMatrix {
    /// Costs given directly, e.g. for tests; distances are set to the costs.
    pub fn from_costs(n0: usize, n1: usize, cost: Vec<f64>, beta: f64) -> Result<Self> {
        if cost.len() != n0 * n1 {
            return Err(Error::DimensionMismatch(format!(
                "cost has {} entries, expected {n0} x {n1}",
                cost.len()
            )));
        }
        Ok(Self {
            n0,
            n1,
            distance_mm: cost.clone(),
            cost,
            beta,
        })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.n1 + j]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distance_mm[i * self.n1 + j]
    }
}

/// Graph paths longer than this many times `2 beta / alpha` are not
/// straightened. Such pairs cost more than two dummies either way, so they
/// never enter a matching and an upper bound suffices.
pub const EXACT_RANGE_FACTOR: f64 = 1.5;

/// Costs between template locations. Distances that are infinite (points on
/// disconnected components) cost `2 beta + 1`, which is always worse than
/// sending both lesions to their dummies. Distances beyond
/// `EXACT_RANGE_FACTOR * 2 beta / alpha` are graph upper bounds.
pub fn build_cost(
    src_on_template: &[SurfacePoint],
    tgt_on_template: &[SurfacePoint],
    template: &Mesh,
    cfg: &AssignConfig,
) -> Result<CostMatrix> {
    cfg.validate()?;
    let (n0, n1) = (src_on_template.len(), tgt_on_template.len());
    let mut distance_mm = Vec::with_capacity(n0 * n1);
    if n0 > 0 && n1 > 0 {
        let geo = Geodesic::new(template, DEFAULT_STEINER_POINTS);
        let exact_below = EXACT_RANGE_FACTOR * 2.0 * cfg.beta / cfg.alpha;
        let rows: Vec<Vec<f64>> = src_on_template
            .par_iter()
            .map(|s| geo.distances_within(s, tgt_on_template, exact_below))
            .collect::<Result<_>>()?;
        for row in rows {
            distance_mm.extend(row);
        }
    }
    let mut unreachable = 0;
    let cost = distance_mm
        .iter()
        .map(|&d| {
            if d.is_finite() {
                cfg.alpha * d
            } else {
                unreachable += 1;
                2.0 * cfg.beta + 1.0
            }
        })
        .collect();
    if unreachable > 0 {
        log::warn!("{unreachable} lesion pairs lie on disconnected template components; they cannot be matched");
    }
    Ok(CostMatrix {
        n0,
        n1,
        cost,
        distance_mm,
        beta: cfg.beta,
    })
}

/// Binary `(n0 + 1) x (n1 + 1)` matching with the dummy at index 0 of both
/// axes. Row `i + 1` is source lesion `i`, column `j + 1` target lesion `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchMatrix {
    pub src_ids: Vec<String>,
    pub tgt_ids: Vec<String>,
    entries: Vec<bool>,
}

impl MatchMatrix {
    /// Builds the matrix from real-real pairs (indices into the id lists);
    /// every other lesion goes to the dummy.
    pub fn from_pairs(src_ids: Vec<String>, tgt_ids: Vec<String>, pairs: &[(usize, usize)]) -> Result<Self> {
        let (n0, n1) = (src_ids.len(), tgt_ids.len());
        let cols = n1 + 1;
        let mut entries = vec![false; (n0 + 1) * cols];
        let mut row_used = vec![false; n0];
        let mut col_used = vec![false; n1];
        for &(i, j) in pairs {
            if i >= n0 || j >= n1 {
                return Err(Error::DimensionMismatch(format!("pair ({i}, {j}) outside {n0} x {n1}")));
            }
            if row_used[i] || col_used[j] {
                return Err(Error::Config(format!("pair ({i}, {j}) reuses a lesion")));
            }
            row_used[i] = true;
            col_used[j] = true;
            entries[(i + 1) * cols + j + 1] = true;
        }
        for i in 0..n0 {
            if !row_used[i] {
                entries[(i + 1) * cols] = true;
            }
        }
        for j in 0..n1 {
            if !col_used[j] {
                entries[j + 1] = true;
            }
        }
        let m = Self { src_ids, tgt_ids, entries };
        debug_assert!(m.satisfies_constraints());
        Ok(m)
    }

    pub fn n0(&self) -> usize {
        self.src_ids.len()
    }

    pub fn n1(&self) -> usize {
        self.tgt_ids.len()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.entries[row * (self.n1() + 1) + col]
    }

    /// Real rows and real columns each sum to exactly one.
    pub fn satisfies_constraints(&self) -> bool {
        let (n0, n1) = (self.n0(), self.n1());
        if self.entries.len() != (n0 + 1) * (n1 + 1) {
            return false;
        }
        let rows_ok = (1..=n0).all(|r| (0..=n1).filter(|&c| self.get(r, c)).count() == 1);
        let cols_ok = (1..=n1).all(|c| (0..=n0).filter(|&r| self.get(r, c)).count() == 1);
        rows_ok && cols_ok && !self.get(0, 0)
    }

    /// Matched `(source index, target index)` pairs in source order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n0())
            .filter_map(|i| (0..self.n1()).find(|&j| self.get(i + 1, j + 1)).map(|j| (i, j)))
            .collect()
    }

    pub fn id_pairs(&self) -> Vec<(&str, &str)> {
        self.pairs()
            .into_iter()
            .map(|(i, j)| (self.src_ids[i].as_str(), self.tgt_ids[j].as_str()))
            .collect()
    }

    pub fn num_matches(&self) -> usize {
        self.pairs().len()
    }

    pub fn unmatched_src(&self) -> Vec<usize> {
        (0..self.n0()).filter(|&i| self.get(i + 1, 0)).collect()
    }

    pub fn unmatched_tgt(&self) -> Vec<usize> {
        (0..self.n1()).filter(|&j| self.get(0, j + 1)).collect()
    }
}

/// `sum of matched costs + beta * (unmatched sources + unmatched targets)`,
/// accumulated in source order.
pub fn objective(cost: &CostMatrix, pairs: &[(usize, usize)]) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_unstable();
    let matched: f64 = sorted.iter().map(|&(i, j)| cost.at(i, j)).sum();
    let unmatched = (cost.n0 - sorted.len()) + (cost.n1 - sorted.len());
    matched + cost.beta * unmatched as f64
}

/// Exact minimizer of [`objective`] over all partial one-to-one matchings.
pub fn solve_assignment(cost: &CostMatrix, src_ids: Vec<String>, tgt_ids: Vec<String>) -> Result<MatchMatrix> {
    let (n0, n1) = (cost.n0, cost.n1);
    if src_ids.len() != n0 || tgt_ids.len() != n1 || cost.cost.len() != n0 * n1 {
        return Err(Error::DimensionMismatch(format!(
            "cost is {n0} x {n1} with {} entries but {} source and {} target ids were given",
            cost.cost.len(),
            src_ids.len(),
            tgt_ids.len()
        )));
    }
    if !cost.beta.is_finite() || cost.cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Config("assignment costs must be finite".into()));
    }

    // Rows: sources, then one dummy row per target. Columns: targets, then
    // one dummy column per source. Any source may use any dummy column and
    // any target any dummy row, all at beta; dummy-dummy cells are free.
    let n = n0 + n1;
    let padded = |r: usize, c: usize| -> f64 {
        match (r < n0, c < n1) {
            (true, true) => cost.at(r, c),
            (true, false) | (false, true) => cost.beta,
            (false, false) => 0.0,
        }
    };
    let assignment = hungarian(n, padded);

    let pairs: Vec<(usize, usize)> = (0..n0)
        .filter_map(|i| {
            let j = assignment[i];
            (j < n1).then_some((i, j))
        })
        .collect();
    let m = MatchMatrix::from_pairs(src_ids, tgt_ids, &pairs)?;
    assert!(m.satisfies_constraints(), "assignment violates the one-match-per-lesion constraints");
    Ok(m)
}

/// Hungarian method with potentials on an `n x n` cost; returns the column
/// of every row. Rows are inserted in index order and the first minimal
/// column wins, so ties resolve deterministically.
fn hungarian(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    // 1-based with column 0 as the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; n];
    for j in 1..=n {
        col_of[row_of[j] - 1] = j - 1;
    }
    col_of
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub src: String,
    pub tgt: String,
    pub geodesic_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmatchedEntry {
    pub id: String,
    pub template_tri: usize,
    pub bary: [f64; 3],
    pub pos_mm: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub matches: Vec<MatchEntry>,
    pub unmatched_src: Vec<UnmatchedEntry>,
    pub unmatched_tgt: Vec<UnmatchedEntry>,
}

impl MatchReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Matched pairs with their template distance, and the template location of
/// every unmatched lesion.
pub fn match_report(
    pi: &MatchMatrix,
    cost: &CostMatrix,
    src_on_template: &[SurfacePoint],
    tgt_on_template: &[SurfacePoint],
    template: &Mesh,
) -> Result<MatchReport> {
    if src_on_template.len() != pi.n0() || tgt_on_template.len() != pi.n1() || cost.n0 != pi.n0() || cost.n1 != pi.n1() {
        return Err(Error::DimensionMismatch(
            "match matrix, cost and lesion locations disagree in size".into(),
        ));
    }
    let unmatched = |ids: &[String], points: &[SurfacePoint], which: Vec<usize>| -> Result<Vec<UnmatchedEntry>> {
        which
            .into_iter()
            .map(|k| {
                let p = points[k];
                let pos = template.embed(&p)?;
                Ok(UnmatchedEntry {
                    id: ids[k].clone(),
                    template_tri: p.triangle,
                    bary: p.bary,
                    pos_mm: [pos.x, pos.y, pos.z],
                })
            })
            .collect()
    };
    Ok(MatchReport {
        matches: pi
            .pairs()
            .into_iter()
            .map(|(i, j)| MatchEntry {
                src: pi.src_ids[i].clone(),
                tgt: pi.tgt_ids[j].clone(),
                geodesic_mm: cost.distance(i, j),
            })
            .collect(),
        unmatched_src: unmatched(&pi.src_ids, src_on_template, pi.unmatched_src())?,
        unmatched_tgt: unmatched(&pi.tgt_ids, tgt_on_template, pi.unmatched_tgt())?,
    })
}
