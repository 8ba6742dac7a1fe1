//! One-to-one assignment between predictions (rows) and ground truths (columns).
//!
//! Rectangular problems are padded to square with zero-cost dummy rows or
//! columns, so exactly `min(rows, cols)` real pairs come out. Among all optimal
//! assignments of the padded problem, the one whose row-by-row column sequence
//! is lexicographically smallest is returned. Costs within [`TIE_TOLERANCE`]
//! (relative) of the optimum count as ties.

use crate::error::{Error, Result};
use crate::geometry::BoxCcwh;
use crate::losses::{composite_reg_loss, L1Kind, LossWeights};

/// Relative slack under which two assignment totals are considered equal.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Largest square size [`brute_force_match`] accepts.
pub const BRUTE_FORCE_LIMIT: usize = 8;

/// Dense row-major cost matrix, predictions by ground truths.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "cost matrix data vs rows*cols",
                left: data.len(),
                right: rows * cols,
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite cost entry {v}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != n_cols) {
            return Err(Error::LengthMismatch {
                what: "ragged cost matrix row",
                left: r.len(),
                right: n_cols,
            });
        }
        Self::new(n_rows, n_cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn padded(&self, r: usize, c: usize) -> f64 {
        if r < self.rows && c < self.cols {
            self.get(r, c)
        } else {
            0.0
        }
    }
}

/// Matched `(prediction, ground truth)` index pairs, sorted by prediction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    pub pairs: Vec<(usize, usize)>,
}

impl MatchResult {
    pub fn total_cost(&self, costs: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(r, c)| costs.get(r, c)).sum()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Pairwise composite regression cost: entry `(i, j)` is the composite loss of
/// the single pair `(preds[i], gts[j])`.
pub fn reg_cost_matrix(
    preds: &[BoxCcwh],
    gts: &[BoxCcwh],
    kind: &L1Kind,
    lw: &LossWeights,
) -> Result<CostMatrix> {
    if preds.is_empty() || gts.is_empty() {
        return Err(Error::EmptyMatching);
    }
    let mut data = Vec::with_capacity(preds.len() * gts.len());
    for p in preds {
        for g in gts {
            data.push(composite_reg_loss(
                std::slice::from_ref(p),
                std::slice::from_ref(g),
                kind,
                lw,
            )?);
        }
    }
    CostMatrix::new(preds.len(), gts.len(), data)
}

/// Minimum-cost assignment (Kuhn-Munkres with potentials, O(n^3) for the
/// optimum, plus a tie-break pass that only re-solves when a row has more than
/// one zero-reduced-cost column).
pub fn hungarian(costs: &CostMatrix) -> MatchResult {
    let n = costs.rows.max(costs.cols);
    if costs.rows == 0 || costs.cols == 0 {
        return MatchResult::default();
    }
    let cost = |r: usize, c: usize| costs.padded(r, c);
    let rows: Vec<usize> = (0..n).collect();
    let cols: Vec<usize> = (0..n).collect();
    let (mut assign, total, u, v) = solve_sub(&cost, &rows, &cols);
    let tol = TIE_TOLERANCE * (1.0 + total.abs());

    let mut prefix_cost = 0.0;
    let mut used = vec![false; n];
    for r in 0..n {
        let candidates: Vec<usize> = (0..n)
            .filter(|&c| !used[c] && cost(r, c) - u[r] - v[c] <= tol)
            .collect();
        for &c in &candidates {
            if c == assign[r] {
                break;
            }
            let rest_rows: Vec<usize> = (r + 1..n).collect();
            let rest_cols: Vec<usize> = (0..n).filter(|&k| !used[k] && k != c).collect();
            let (sub, sub_total, _, _) = solve_sub(&cost, &rest_rows, &rest_cols);
            if prefix_cost + cost(r, c) + sub_total <= total + tol {
                assign[r] = c;
                for (i, &row) in rest_rows.iter().enumerate() {
                    assign[row] = rest_cols[sub[i]];
                }
                break;
            }
        }
        used[assign[r]] = true;
        prefix_cost += cost(r, assign[r]);
    }

    MatchResult {
        pairs: (0..costs.rows)
            .filter(|&r| assign[r] < costs.cols)
            .map(|r| (r, assign[r]))
            .collect(),
    }
}

/// Solves the square subproblem on `rows x cols` (equal lengths). Returns the
/// column position (index into `cols`) for each row position, the optimal total,
/// and row/column potentials indexed by original row/column ids.
fn solve_sub<F: Fn(usize, usize) -> f64>(
    cost: &F,
    rows: &[usize],
    cols: &[usize],
) -> (Vec<usize>, f64, Vec<f64>, Vec<f64>) {
    let n = rows.len();
    debug_assert_eq!(n, cols.len());
    let full = rows.iter().chain(cols).copied().max().map_or(0, |m| m + 1);
    if n == 0 {
        return (Vec::new(), 0.0, vec![0.0; full], vec![0.0; full]);
    }
    let c = |i: usize, j: usize| cost(rows[i - 1], cols[j - 1]);

    // 1-based potentials; p[j] = row assigned to column j, way[] = augmenting path.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut visited = vec![false; n + 1];
        loop {
            visited[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if visited[j] {
                    continue;
                }
                let cur = c(i0, j) - u[i0] - v[j];
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
                if visited[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost(rows[i], cols[assign[i]])).sum();
    let mut uu = vec![0.0; full];
    let mut vv = vec![0.0; full];
    for i in 0..n {
        uu[rows[i]] = u[i + 1];
        vv[cols[i]] = v[i + 1];
    }
    (assign, total, uu, vv)
}

/// Exhaustive minimum over all permutations of the padded square problem, with
/// the same tie rule as [`hungarian`]. Test oracle; refuses `n > 8`.
pub fn brute_force_match(costs: &CostMatrix) -> Result<MatchResult> {
    let n = costs.rows.max(costs.cols);
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::BruteForceTooLarge(n));
    }
    if costs.rows == 0 || costs.cols == 0 {
        return Ok(MatchResult::default());
    }
    let mut perms = Vec::new();
    let mut current: Vec<usize> = Vec::with_capacity(n);
    let mut used = vec![false; n];
    enumerate(n, &mut current, &mut used, &mut perms);

    // lexicographic enumeration order, so the first perm within tolerance wins
    let totals: Vec<f64> = perms
        .iter()
        .map(|perm| perm.iter().enumerate().map(|(r, &c)| costs.padded(r, c)).sum())
        .collect();
    let best = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = TIE_TOLERANCE * (1.0 + best.abs());
    let idx = totals.iter().position(|&t| t <= best + tol).unwrap_or(0);
    let perm = &perms[idx];
    Ok(MatchResult {
        pairs: (0..costs.rows)
            .filter(|&r| perm[r] < costs.cols)
            .map(|r| (r, perm[r]))
            .collect(),
    })
}

fn enumerate(n: usize, current: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
    if current.len() == n {
        out.push(current.clone());
        return;
    }
    for c in 0..n {
        if !used[c] {
            used[c] = true;
            current.push(c);
            enumerate(n, current, used, out);
            current.pop();
            used[c] = false;
        }
    }
}
