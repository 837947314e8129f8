//! Polynomial candidate library: symbolic multi-index terms, their evaluation
//! on data, and column standardization for the subset solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::Mat;

/// Ordered polynomial term library over `j` state variables up to a total
/// degree. Terms are sorted by (total degree, graded lexicographic), which is
/// the canonical order every support index in this crate refers to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermDictionary {
    j: usize,
    degree: usize,
    include_constant: bool,
    terms: Vec<Vec<u32>>,
    labels: Vec<String>,
}

fn term_label(exponents: &[u32]) -> String {
    let mut parts = Vec::new();
    for (v, &e) in exponents.iter().enumerate() {
        match e {
            0 => {}
            1 => parts.push(format!("x{}", v + 1)),
            _ => parts.push(format!("x{}^{}", v + 1, e)),
        }
    }
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join("*")
    }
}

/// Exponent vectors of total degree `d` over `j` variables, in descending
/// lexicographic order (x1 powers first).
fn exponents_of_degree(j: usize, d: u32) -> Vec<Vec<u32>> {
    fn rec(out: &mut Vec<Vec<u32>>, prefix: &mut Vec<u32>, vars_left: usize, deg_left: u32) {
        if vars_left == 1 {
            prefix.push(deg_left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=deg_left).rev() {
            prefix.push(e);
            rec(out, prefix, vars_left - 1, deg_left - e);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut out, &mut Vec::new(), j, d);
    out
}

pub fn build_dictionary(j: usize, degree: usize, include_constant: bool) -> TermDictionary {
    assert!(j >= 1 && degree >= 1, "need j >= 1 and degree >= 1");
    let mut terms = Vec::new();
    if include_constant {
        terms.push(vec![0u32; j]);
    }
    for d in 1..=degree as u32 {
        terms.extend(exponents_of_degree(j, d));
    }
    let labels = terms.iter().map(|e| term_label(e)).collect();
    TermDictionary { j, degree, include_constant, terms, labels }
}

impl TermDictionary {
    pub fn j(&self) -> usize {
        self.j
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn include_constant(&self) -> bool {
        self.include_constant
    }

    /// Number of terms P.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn exponents(&self, p: usize) -> &[u32] {
        &self.terms[p]
    }

    pub fn label(&self, p: usize) -> &str {
        &self.labels[p]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Index of the constant term, if present (always 0 by the ordering).
    pub fn constant_index(&self) -> Option<usize> {
        self.include_constant.then_some(0)
    }

    /// Look up a term by exponent vector.
    pub fn index_of(&self, exponents: &[u32]) -> Option<usize> {
        self.terms.iter().position(|t| t == exponents)
    }

    /// Evaluate one term at a state vector.
    #[inline]
    pub fn eval_term(&self, p: usize, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for (xi, &e) in x.iter().zip(&self.terms[p]) {
            match e {
                0 => {}
                1 => v *= xi,
                2 => v *= xi * xi,
                _ => v *= xi.powi(e as i32),
            }
        }
        v
    }

    /// Evaluate the full library on a data matrix, producing the N x P design.
    pub fn evaluate(&self, x: &Mat) -> Result<DesignMatrix> {
        if x.cols() != self.j {
            return Err(Error::ShapeMismatch {
                expected: format!("{} state columns", self.j),
                got: format!("{}", x.cols()),
            });
        }
        let p = self.len();
        let rows = exec::map_indices(x.rows(), |i| {
            let xi = x.row(i);
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: i });
            }
            let mut row = Vec::with_capacity(p);
            for t in 0..p {
                row.push(self.eval_term(t, xi));
            }
            Ok(row)
        });
        let mut data = Vec::with_capacity(x.rows() * p);
        for r in rows {
            data.extend(r?);
        }
        Ok(DesignMatrix {
            theta: Mat::from_raw(x.rows(), p, data),
            dict: self.clone(),
            stats: None,
            degenerate: Vec::new(),
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!(self
            .terms
            .iter()
            .zip(&self.labels)
            .map(|(e, l)| serde_json::json!({"label": l, "exponents": e}))
            .collect::<Vec<_>>())
    }

    pub fn from_json(j: usize, degree: usize, value: &serde_json::Value) -> Result<Self> {
        let arr = value.as_array().ok_or_else(|| Error::invalid("dictionary json must be a list"))?;
        let mut terms = Vec::with_capacity(arr.len());
        for item in arr {
            let e: Vec<u32> = serde_json::from_value(
                item.get("exponents")
                    .ok_or_else(|| Error::invalid("term missing exponents"))?
                    .clone(),
            )?;
            terms.push(e);
        }
        let include_constant = terms.first().is_some_and(|t| t.iter().all(|&e| e == 0));
        let labels = terms.iter().map(|e| term_label(e)).collect();
        Ok(TermDictionary { j, degree, include_constant, terms, labels })
    }
}

/// How columns and targets are brought to a common scale before the subset
/// search.
///
/// `ScaleOnly` divides by the sample standard deviation without removing
/// means, so a constant library term stays a meaningful candidate and the
/// selected support carries over to the raw data unchanged. `CenterScale`
/// additionally removes means (classic z-scoring); under it the constant
/// column is inert and any true bias term is absorbed into the centering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeMode {
    #[default]
    ScaleOnly,
    CenterScale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardizeStats {
    pub mode: StandardizeMode,
    pub col_mean: Vec<f64>,
    pub col_std: Vec<f64>,
    /// Columns exempt from standardization (the constant column).
    pub exempt: Vec<bool>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

/// Evaluated library with optional standardization state.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub theta: Mat,
    pub dict: TermDictionary,
    pub stats: Option<StandardizeStats>,
    /// Non-constant columns with zero variance; excluded from subset candidacy.
    pub degenerate: Vec<usize>,
}

impl DesignMatrix {
    /// Wrap an arbitrary matrix as an (already standardized) design, for
    /// solver-level callers that do not go through a dictionary.
    pub fn from_matrix(theta: Mat) -> Self {
        let p = theta.cols();
        let dict = build_dictionary(p, 1, false);
        DesignMatrix { theta, dict, stats: None, degenerate: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.theta.rows()
    }

    pub fn p(&self) -> usize {
        self.theta.cols()
    }

    pub fn is_standardized(&self) -> bool {
        self.stats.is_some()
    }

    /// Candidate columns for screening/subset search: everything except
    /// degenerate (zero-variance non-constant) columns.
    pub fn candidate_columns(&self) -> Vec<usize> {
        (0..self.p()).filter(|c| !self.degenerate.contains(c)).collect()
    }
}

fn column_mean_std(theta: &Mat, j: usize) -> (f64, f64) {
    let n = theta.rows();
    let mean = (0..n).map(|i| theta.get(i, j)).sum::<f64>() / n as f64;
    let var = (0..n).map(|i| (theta.get(i, j) - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var.sqrt())
}

/// Standardize a design matrix and its target columns.
///
/// Non-constant columns (and each target column) are scaled to unit sample
/// variance; under `CenterScale` they are centered to zero mean as well. The
/// constant column is exempt and kept as ones. Zero-variance non-constant
/// columns are flagged degenerate and left untouched.
pub fn standardize(
    dm: &DesignMatrix,
    targets: &Mat,
    mode: StandardizeMode,
) -> Result<(DesignMatrix, Mat)> {
    if dm.is_standardized() {
        return Err(Error::invalid("design matrix is already standardized"));
    }
    let n = dm.n();
    if n < 2 {
        return Err(Error::invalid("standardization needs at least 2 rows"));
    }
    if targets.rows() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} target rows"),
            got: format!("{}", targets.rows()),
        });
    }
    let p = dm.p();
    let constant = dm.dict.constant_index();
    let mut col_mean = vec![0.0; p];
    let mut col_std = vec![1.0; p];
    let mut exempt = vec![false; p];
    let mut degenerate = Vec::new();
    let mut theta = dm.theta.clone();
    for j in 0..p {
        let (mean, std) = column_mean_std(&theta, j);
        col_mean[j] = mean;
        col_std[j] = std;
        if Some(j) == constant {
            exempt[j] = true;
            continue;
        }
        if std <= 0.0 {
            degenerate.push(j);
            col_std[j] = 1.0;
            continue;
        }
        let center = if mode == StandardizeMode::CenterScale { mean } else { 0.0 };
        for i in 0..n {
            let v = (theta.get(i, j) - center) / std;
            theta.set(i, j, v);
        }
    }
    let mut target_mean = vec![0.0; targets.cols()];
    let mut target_std = vec![1.0; targets.cols()];
    let mut scaled = targets.clone();
    for j in 0..targets.cols() {
        let (mean, std) = column_mean_std(targets, j);
        target_mean[j] = mean;
        let s = if std > 0.0 { std } else { 1.0 };
        target_std[j] = s;
        let center = if mode == StandardizeMode::CenterScale { mean } else { 0.0 };
        for i in 0..n {
            let v = (scaled.get(i, j) - center) / s;
            scaled.set(i, j, v);
        }
    }
    let stats = StandardizeStats { mode, col_mean, col_std, exempt, target_mean, target_std };
    Ok((
        DesignMatrix { theta, dict: dm.dict.clone(), stats: Some(stats), degenerate },
        scaled,
    ))
}

/// Undo `standardize`, reproducing the original design and targets.
pub fn destandardize(dm: &DesignMatrix, targets: &Mat) -> Result<(DesignMatrix, Mat)> {
    let stats = dm.stats.as_ref().ok_or_else(|| Error::invalid("design is not standardized"))?;
    let n = dm.n();
    let mut theta = dm.theta.clone();
    for j in 0..dm.p() {
        if stats.exempt[j] || dm.degenerate.contains(&j) {
            continue;
        }
        let center =
            if stats.mode == StandardizeMode::CenterScale { stats.col_mean[j] } else { 0.0 };
        for i in 0..n {
            let v = theta.get(i, j) * stats.col_std[j] + center;
            theta.set(i, j, v);
        }
    }
    let mut raw = targets.clone();
    for j in 0..targets.cols() {
        let center =
            if stats.mode == StandardizeMode::CenterScale { stats.target_mean[j] } else { 0.0 };
        for i in 0..n {
            let v = raw.get(i, j) * stats.target_std[j] + center;
            raw.set(i, j, v);
        }
    }
    Ok((
        DesignMatrix { theta, dict: dm.dict.clone(), stats: None, degenerate: dm.degenerate.clone() },
        raw,
    ))
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..k {
        num *= (n - i) as u128;
        den *= (i + 1) as u128;
    }
    (num / den) as usize
}

/// Closed-form term count: C(j + degree, degree) including the constant.
pub fn dictionary_size(j: usize, degree: usize, include_constant: bool) -> usize {
    let full = binomial(j + degree, degree);
    if include_constant {
        full
    } else {
        full - 1
    }
}
