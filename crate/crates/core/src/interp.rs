//! Approximations of the delayed trajectory `x(I - tau)` from the grid values `x(I)`.
//!
//! Both schemes honor the constant history convention: any row with
//! `t_j <= tau` reads the initial value `x(t_1) = x(0)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gp::GpComponentCache;
use crate::kernels::{derivatives_from_profile, profile, MaternParams};
use crate::linalg::{matvec, matvec_t};

/// Relative tolerance under which `t_j - tau` is treated as landing on a knot.
const KNOT_SNAP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Row {
    /// Left knot of the interval.
    col: usize,
    /// Weight on `col + 1`; `1 - w` sits on `col`.
    w: f64,
    history: bool,
}

/// Sparse linear-interpolation map `x(I) -> x_hat(I - tau)` with at most two
/// nonzeros per row.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryOperator {
    tau: f64,
    grid: Vec<f64>,
    rows: Vec<Row>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::domain("history grid must be non-empty"));
    }
    if grid[0] != 0.0 {
        return Err(Error::domain(format!(
            "history grid must start at 0, starts at {}",
            grid[0]
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("history grid must be strictly increasing"));
    }
    Ok(())
}

fn check_tau(grid: &[f64], tau: f64) -> Result<()> {
    let end = grid[grid.len() - 1];
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::domain(format!("delay must be finite and >= 0, got {tau}")));
    }
    if tau > end {
        return Err(Error::domain(format!("delay {tau} exceeds the time span {end}")));
    }
    Ok(())
}

/// Left knot of the interval holding `s` and the fractional position within it.
/// Positions within `KNOT_SNAP` of a knot snap onto that knot with weight 0.
fn locate(grid: &[f64], s: f64) -> (usize, f64) {
    let n = grid.len();
    let c = grid.partition_point(|&t| t <= s).saturating_sub(1);
    if c + 1 >= n {
        return (n - 1, 0.0);
    }
    let h = grid[c + 1] - grid[c];
    let w = (s - grid[c]) / h;
    if w < KNOT_SNAP {
        (c, 0.0)
    } else if w > 1.0 - KNOT_SNAP {
        (c + 1, 0.0)
    } else {
        (c, w)
    }
}

pub fn build_linear_operator(grid: &[f64], tau: f64) -> Result<HistoryOperator> {
    check_grid(grid)?;
    check_tau(grid, tau)?;
    let n = grid.len();
    let rows = grid
        .iter()
        .map(|&t| {
            let s = t - tau;
            if s <= 0.0 {
                return Row {
                    col: 0,
                    w: 0.0,
                    history: true,
                };
            }
            let (mut col, mut w) = locate(grid, s);
            if col == n - 1 {
                // Only reachable at tau = 0 on the last point; keep two columns
                // so the tau-derivative has an interval to work with.
                col = n - 2;
                w = 1.0;
            }
            Row { col, w, history: false }
        })
        .collect();
    Ok(HistoryOperator {
        tau,
        grid: grid.to_vec(),
        rows,
    })
}

impl HistoryOperator {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn is_history_row(&self, j: usize) -> bool {
        self.rows[j].history
    }

    /// Nonzero entries of row `j` as `(column, weight)` pairs.
    pub fn row_entries(&self, j: usize) -> Vec<(usize, f64)> {
        let r = self.rows[j];
        if r.history || r.w == 0.0 {
            vec![(r.col, 1.0)]
        } else {
            vec![(r.col, 1.0 - r.w), (r.col + 1, r.w)]
        }
    }

    /// Dense copy of `S`, mainly for inspection and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut s = DMatrix::zeros(n, n);
        for j in 0..n {
            for (c, w) in self.row_entries(j) {
                s[(j, c)] += w;
            }
        }
        s
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::domain(format!(
                "state has {} entries, grid has {}",
                x.len(),
                self.len()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(&self.rows) {
            *o = if r.w == 0.0 {
                x[r.col]
            } else {
                (1.0 - r.w) * x[r.col] + r.w * x[r.col + 1]
            };
        }
    }

    /// `out += S^T v`.
    pub(crate) fn apply_transpose_add(&self, v: &[f64], out: &mut [f64]) {
        for (vj, r) in v.iter().zip(&self.rows) {
            if r.w == 0.0 {
                out[r.col] += vj;
            } else {
                out[r.col] += (1.0 - r.w) * vj;
                out[r.col + 1] += r.w * vj;
            }
        }
    }

    /// Derivative of `S x` with respect to `tau`.
    pub fn tau_jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut out = vec![0.0; x.len()];
        self.tau_jacobian_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn tau_jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        for (o, r) in out.iter_mut().zip(&self.rows) {
            *o = if r.history || g.len() < 2 {
                0.0
            } else {
                // knot rows use the interval to their right
                let c = r.col.min(g.len() - 2);
                -(x[c + 1] - x[c]) / (g[c + 1] - g[c])
            };
        }
    }
}

/// `x_hat(I - tau) = mu + A (x - mu)` with `A = K(I - tau, I) C^{-1}` and
/// history rows pinned to `x(0)`.
///
/// Stored as the cross-covariance and its tau-derivative; applications cost
/// `O(n^2)` through the cached `C^{-1}`.
#[derive(Clone, Debug)]
pub struct ConditionalExpectationOperator {
    tau: f64,
    mean: f64,
    /// Rows of `K(I - tau, I)` (zeroed on history rows).
    cross: DMatrix<f64>,
    /// Rows of `d/dtau K(I - tau, I)`.
    dcross: DMatrix<f64>,
    c_inv: DMatrix<f64>,
    history: Vec<bool>,
    /// Row snapped exactly onto a grid point, if any.
    exact: Vec<Option<usize>>,
}

pub fn build_conditional_operator(
    cache: &GpComponentCache,
    tau: f64,
    mean: f64,
) -> Result<ConditionalExpectationOperator> {
    let grid = &cache.grid;
    check_grid(grid)?;
    check_tau(grid, tau)?;
    if !mean.is_finite() {
        return Err(Error::domain("prior mean must be finite"));
    }
    let n = grid.len();
    let p: &MaternParams = &cache.params;
    let mut cross = DMatrix::zeros(n, n);
    let mut dcross = DMatrix::zeros(n, n);
    let mut history = vec![false; n];
    let mut exact = vec![None; n];
    for (j, &t) in grid.iter().enumerate() {
        let s = t - tau;
        if s <= 0.0 {
            history[j] = true;
            continue;
        }
        let (c, w) = locate(grid, s);
        if w == 0.0 {
            exact[j] = Some(c);
        }
        for (q, &tq) in grid.iter().enumerate() {
            let delta = s - tq;
            let pr = profile(delta.abs(), p);
            let d = derivatives_from_profile(delta, &pr);
            cross[(j, q)] = pr.k;
            // d/dtau K(t_j - tau, t_q) = -dK/ds
            dcross[(j, q)] = -d.ds;
        }
    }
    Ok(ConditionalExpectationOperator {
        tau,
        mean,
        cross,
        dcross,
        c_inv: cache.c_inv.clone(),
        history,
        exact,
    })
}

impl ConditionalExpectationOperator {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn centered_solve(&self, x: &[f64]) -> Vec<f64> {
        let u: Vec<f64> = x.iter().map(|v| v - self.mean).collect();
        let mut a = vec![0.0; u.len()];
        matvec(&self.c_inv, &u, &mut a);
        a
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.history.len() {
            return Err(Error::domain("state length does not match the operator grid"));
        }
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let a = self.centered_solve(x);
        matvec(&self.cross, &a, out);
        for (j, o) in out.iter_mut().enumerate() {
            *o = if self.history[j] {
                x[0]
            } else if let Some(c) = self.exact[j] {
                x[c]
            } else {
                self.mean + *o
            };
        }
    }

    /// `out += A^T v` for the affine map above.
    pub(crate) fn apply_transpose_add(&self, v: &[f64], out: &mut [f64]) {
        let n = v.len();
        let mut dense = vec![0.0; n];
        for j in 0..n {
            if self.history[j] {
                out[0] += v[j];
            } else if let Some(c) = self.exact[j] {
                out[c] += v[j];
            } else {
                dense[j] = v[j];
            }
        }
        let mut kt = vec![0.0; n];
        matvec_t(&self.cross, &dense, &mut kt);
        let mut back = vec![0.0; n];
        matvec(&self.c_inv, &kt, &mut back);
        for (o, b) in out.iter_mut().zip(&back) {
            *o += b;
        }
    }

    pub fn tau_jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.history.len() {
            return Err(Error::domain("state length does not match the operator grid"));
        }
        let mut out = vec![0.0; x.len()];
        self.tau_jacobian_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn tau_jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let a = self.centered_solve(x);
        matvec(&self.dcross, &a, out);
        for (j, o) in out.iter_mut().enumerate() {
            if self.history[j] {
                *o = 0.0;
            }
        }
    }
}

/// One-shot conditional-expectation approximation of `x(I - tau)`.
pub fn conditional_expectation_history(cache: &GpComponentCache, tau: f64, mean: f64, x: &[f64]) -> Result<Vec<f64>> {
    build_conditional_operator(cache, tau, mean)?.apply(x)
}
