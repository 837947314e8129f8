//! Compressive-sensing pre-selection: an l1-regularized fit shrinks the
//! dictionary to a candidate set small enough for exact subset search.
//!
//! The lasso solver is cyclic coordinate descent in covariance form: it
//! works off Theta^T y and cached Gram columns, so sweeps cost O(P^2)
//! instead of O(N P). Gram columns are materialized lazily for coordinates
//! that ever move, which keeps the memory footprint proportional to the
//! active set for wide dictionaries.

use serde::{Deserialize, Serialize};

use crate::dictionary::DesignMatrix;
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{dot, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreeningConfig {
    /// l1 weight in ||y - Theta xi||^2 + lambda1 ||xi||_1.
    pub lambda1: f64,
    /// Magnitude threshold for retention; 0 leaves the top-s_max cap as the
    /// effective filter.
    pub epsilon: f64,
    /// Cap on retained terms.
    pub s_max: usize,
    /// Screening triggers only when the dictionary is wider than this.
    pub p_max: usize,
    /// Convergence tolerance on the largest coordinate change per sweep.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        ScreeningConfig {
            lambda1: 1e-6,
            epsilon: 0.0,
            s_max: 100,
            p_max: 100,
            tol: 1e-9,
            max_sweeps: 20_000,
        }
    }
}

impl ScreeningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0) {
            return Err(Error::config("lambda1 must be > 0"));
        }
        if self.epsilon < 0.0 || self.s_max < 1 {
            return Err(Error::config("epsilon must be >= 0 and s_max >= 1"));
        }
        Ok(())
    }
}

/// Outcome of screening one equation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreenResult {
    /// Retained dictionary indices, ascending.
    pub indices: Vec<usize>,
    /// Full coefficient vector from the l1 fit (zeros when bypassed).
    pub xi_cs: Vec<f64>,
}

impl ScreenResult {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let magnitudes: Vec<f64> = self.indices.iter().map(|&i| self.xi_cs[i].abs()).collect();
        serde_json::json!({ "indices": self.indices, "magnitudes": magnitudes })
    }
}

struct GramCache<'a> {
    theta: &'a Mat,
    /// Dense Gram when P is small, else lazily filled columns.
    full: Option<Vec<f64>>,
    columns: Vec<Option<Vec<f64>>>,
}

impl<'a> GramCache<'a> {
    fn new(theta: &'a Mat) -> Self {
        let p = theta.cols();
        if p <= 512 {
            // Eager Gram; entries are independent so this parallelizes
            // deterministically.
            let rows = exec::map_indices(p, |a| {
                let mut row = vec![0.0; p];
                for b in 0..p {
                    if b < a {
                        continue;
                    }
                    let mut s = 0.0;
                    for i in 0..theta.rows() {
                        s += theta.get(i, a) * theta.get(i, b);
                    }
                    row[b] = s;
                }
                row
            });
            let mut full = vec![0.0; p * p];
            for (a, row) in rows.iter().enumerate() {
                for b in a..p {
                    full[a * p + b] = row[b];
                    full[b * p + a] = row[b];
                }
            }
            GramCache { theta, full: Some(full), columns: Vec::new() }
        } else {
            GramCache { theta, full: None, columns: vec![None; p] }
        }
    }

    fn column(&mut self, j: usize) -> &[f64] {
        let p = self.theta.cols();
        if let Some(full) = &self.full {
            return &full[j * p..(j + 1) * p];
        }
        if self.columns[j].is_none() {
            let n = self.theta.rows();
            let col = exec::map_indices(p, |b| {
                let mut s = 0.0;
                for i in 0..n {
                    s += self.theta.get(i, j) * self.theta.get(i, b);
                }
                s
            });
            self.columns[j] = Some(col);
        }
        self.columns[j].as_ref().unwrap()
    }

    fn diag(&mut self, j: usize) -> f64 {
        self.column(j)[j]
    }
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Solve min ||y - Theta xi||^2 + lambda1 ||xi||_1 by cyclic coordinate
/// descent. Theta must be standardized. Deterministic given inputs.
pub fn lasso_solve(
    theta: &DesignMatrix,
    y: &[f64],
    lambda1: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<Vec<f64>> {
    if !theta.is_standardized() {
        return Err(Error::invalid("lasso requires a standardized design"));
    }
    if !(lambda1 > 0.0) {
        return Err(Error::invalid("lambda1 must be > 0"));
    }
    let m = &theta.theta;
    let (n, p) = (m.rows(), m.cols());
    if y.len() != n {
        return Err(Error::ShapeMismatch { expected: format!("{n} targets"), got: format!("{}", y.len()) });
    }
    let mut gram = GramCache::new(m);
    let g: Vec<f64> = exec::map_indices(p, |j| (0..n).map(|i| m.get(i, j) * y[i]).sum());
    let diag: Vec<f64> = (0..p).map(|j| gram.diag(j)).collect();
    let skip: Vec<bool> = (0..p).map(|j| diag[j] <= 0.0 || theta.degenerate.contains(&j)).collect();

    let mut xi = vec![0.0; p];
    // q = Gram * xi, maintained incrementally.
    let mut q = vec![0.0; p];
    let threshold = lambda1 / 2.0;
    let mut sweeps = 0usize;
    let mut max_delta = f64::INFINITY;

    let sweep = |order: &[usize], xi: &mut Vec<f64>, q: &mut Vec<f64>, gram: &mut GramCache| -> f64 {
        let mut max_d = 0.0f64;
        for &j in order {
            if skip[j] {
                continue;
            }
            let c = g[j] - q[j] + diag[j] * xi[j];
            let new = soft_threshold(c, threshold) / diag[j];
            let delta = new - xi[j];
            if delta != 0.0 {
                let col = gram.column(j);
                for (qb, cb) in q.iter_mut().zip(col) {
                    *qb += delta * cb;
                }
                xi[j] = new;
                max_d = max_d.max(delta.abs());
            }
        }
        max_d
    };

    let all: Vec<usize> = (0..p).collect();
    while sweeps < max_sweeps {
        sweeps += 1;
        max_delta = sweep(&all, &mut xi, &mut q, &mut gram);
        if max_delta < tol {
            return Ok(xi);
        }
        // Iterate the active set until it stabilizes, then re-check all
        // coordinates on the next outer sweep.
        let active: Vec<usize> = (0..p).filter(|&j| xi[j] != 0.0).collect();
        while sweeps < max_sweeps {
            sweeps += 1;
            max_delta = sweep(&active, &mut xi, &mut q, &mut gram);
            if max_delta < tol {
                break;
            }
        }
    }
    if max_delta >= tol {
        return Err(Error::NonConvergence { iterations: sweeps, residual: max_delta });
    }
    Ok(xi)
}

/// Lasso objective, for tests and diagnostics.
pub fn lasso_objective(theta: &Mat, y: &[f64], xi: &[f64], lambda1: f64) -> f64 {
    let n = theta.rows();
    let mut sse = 0.0;
    for i in 0..n {
        let pred = dot(theta.row(i), xi);
        sse += (y[i] - pred) * (y[i] - pred);
    }
    sse + lambda1 * xi.iter().map(|v| v.abs()).sum::<f64>()
}

/// Reduce the dictionary to a candidate set.
///
/// Bypassed entirely (all non-degenerate columns retained) when P does not
/// exceed `p_max`. Otherwise terms with |xi_cs| >= epsilon are kept and, if
/// still too many, ranked by decreasing magnitude and capped at `s_max`.
pub fn screen(theta: &DesignMatrix, y: &[f64], cfg: &ScreeningConfig) -> Result<ScreenResult> {
    cfg.validate()?;
    let p = theta.p();
    if p <= cfg.p_max {
        return Ok(ScreenResult { indices: theta.candidate_columns(), xi_cs: vec![0.0; p] });
    }
    let xi = lasso_solve(theta, y, cfg.lambda1, cfg.tol, cfg.max_sweeps)?;
    let mut kept: Vec<usize> = theta
        .candidate_columns()
        .into_iter()
        .filter(|&j| xi[j] != 0.0 && xi[j].abs() >= cfg.epsilon)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyScreen);
    }
    if kept.len() > cfg.s_max {
        // Decreasing |coefficient|, index ascending on exact ties.
        kept.sort_by(|&a, &b| {
            xi[b].abs().partial_cmp(&xi[a].abs()).unwrap().then(a.cmp(&b))
        });
        kept.truncate(cfg.s_max);
    }
    kept.sort_unstable();
    Ok(ScreenResult { indices: kept, xi_cs: xi })
}
