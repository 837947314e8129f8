//! Hyperparameter grid construction and T-fold cross-validation for the
//! subset solver: pick (k, lambda2) minimizing the summed held-out error.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dictionary::DesignMatrix;
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::Mat;
use crate::subset::{solve_gram, GramInstance, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FoldScheme {
    /// Contiguous time blocks (default: avoids shuffling correlated samples).
    #[default]
    Contiguous,
    /// Row i goes to fold i mod T.
    Strided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningConfig {
    pub k_max: usize,
    /// lambda2 grid size.
    pub m: usize,
    /// Fold count.
    pub t_folds: usize,
    /// Overrides the N-vs-P rule for the grid's lower-end ratio.
    pub r_override: Option<f64>,
    pub fold_scheme: FoldScheme,
    /// Parsimony width of the argmin in standard errors: cells within this
    /// many SEs (of the best cell's fold scatter) count as tied and the tie
    /// breaks toward smaller k. Zero gives the bare argmin.
    pub parsimony_se: f64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            k_max: 6,
            m: 50,
            t_folds: 5,
            r_override: None,
            fold_scheme: FoldScheme::Contiguous,
            parsimony_se: 2.0,
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max < 1 || self.m < 2 || self.t_folds < 2 {
            return Err(Error::config("tuning needs k_max >= 1, m >= 2, t_folds >= 2"));
        }
        Ok(())
    }
}

/// Solver budgets threaded through the grid; the per-cell wall-clock slice is
/// time_limit / (k_max * m * T) clamped to at least one second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBudgets {
    pub b: f64,
    pub time_limit: f64,
    pub gap_target: f64,
    pub node_limit: Option<u64>,
}

impl Default for SolverBudgets {
    fn default() -> Self {
        SolverBudgets { b: 1000.0, time_limit: 600.0, gap_target: 0.0, node_limit: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellOutcome {
    Optimal,
    TimeLimit,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct CellRecord {
    pub k: usize,
    pub lambda_index: usize,
    pub fold: usize,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone)]
pub struct TuningResult {
    /// k_max x m total CV errors; infinity marks invalid cells.
    pub errors: Mat,
    pub lambda_grid: Vec<f64>,
    pub k_star: usize,
    pub lambda_star: f64,
    pub lambda_star_index: usize,
    pub cv_error: f64,
    pub cells: Vec<CellRecord>,
}

impl TuningResult {
    /// CSV heatmap: rows k = 1..k_max, columns the lambda grid.
    pub fn heatmap_csv(&self) -> String {
        let mut out = String::from("k");
        for l in &self.lambda_grid {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for k in 0..self.errors.rows() {
            let _ = write!(out, "{}", k + 1);
            for c in 0..self.errors.cols() {
                let _ = write!(out, ",{}", self.errors.get(k, c));
            }
            out.push('\n');
        }
        out
    }
}

/// Log-uniform lambda2 grid.
///
/// The top end is ||Theta^T y||_inf; the bottom end is r times that, with
/// r = 1e-4 when N > P and 1e-2 otherwise (unless overridden). Values are
/// sampled uniformly in log space, returned ascending.
pub fn lambda_grid(theta: &DesignMatrix, y: &[f64], m: usize, r: Option<f64>) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::config("lambda grid needs m >= 2"));
    }
    let mat = &theta.theta;
    let (n, p) = (mat.rows(), mat.cols());
    let mut lmax = 0.0f64;
    for j in 0..p {
        let mut s = 0.0;
        for i in 0..n {
            s += mat.get(i, j) * y[i];
        }
        lmax = lmax.max(s.abs());
    }
    if lmax == 0.0 {
        return Err(Error::DegenerateTarget);
    }
    let r = r.unwrap_or(if n > p { 1e-4 } else { 1e-2 });
    let lmin = r * lmax;
    let (log_min, log_max) = (lmin.ln(), lmax.ln());
    Ok((0..m)
        .map(|i| (log_min + (log_max - log_min) * i as f64 / (m - 1) as f64).exp())
        .collect())
}

/// Fold row sets: disjoint, covering, sizes within one of each other.
pub fn fold_rows(n: usize, t_folds: usize, scheme: FoldScheme) -> Vec<Vec<usize>> {
    match scheme {
        FoldScheme::Contiguous => {
            let base = n / t_folds;
            let extra = n % t_folds;
            let mut out = Vec::with_capacity(t_folds);
            let mut start = 0;
            for t in 0..t_folds {
                let len = base + usize::from(t < extra);
                out.push((start..start + len).collect());
                start += len;
            }
            out
        }
        FoldScheme::Strided => {
            let mut out = vec![Vec::new(); t_folds];
            for i in 0..n {
                out[i % t_folds].push(i);
            }
            out
        }
    }
}

/// Grid-search (k, lambda2) by T-fold cross-validation.
///
/// For each cell the subset problem is solved on the fold's complement and
/// scored by the residual on the held-out fold; the per-fold errors are
/// summed and the argmin taken with ties broken toward smaller k, then
/// smaller lambda2. `warm_magnitudes` (screening coefficients) seed the
/// solver incumbent when available.
pub fn cross_validate(
    theta_s: &Mat,
    y: &[f64],
    cfg: &TuningConfig,
    budgets: &SolverBudgets,
    warm_magnitudes: Option<&[f64]>,
) -> Result<TuningResult> {
    cfg.validate()?;
    let n = theta_s.rows();
    let p = theta_s.cols();
    if n < cfg.t_folds {
        return Err(Error::invalid(format!("n = {n} smaller than fold count {}", cfg.t_folds)));
    }
    let k_max = cfg.k_max.min(p);
    let dm = DesignMatrix::from_matrix(theta_s.clone());
    let grid = lambda_grid(&dm, y, cfg.m, cfg.r_override)?;

    let folds = fold_rows(n, cfg.t_folds, cfg.fold_scheme);
    let fold_insts: Vec<GramInstance> =
        folds.iter().map(|rows| GramInstance::from_theta_rows(theta_s, y, rows)).collect();
    let mut total = GramInstance::zeros(p);
    for f in &fold_insts {
        total.add(f);
    }
    let complements: Vec<GramInstance> =
        fold_insts.iter().map(|f| total.subtract(f)).collect();

    // Warm-start hints per k: top-k screening magnitudes.
    let hint_for = |k: usize| -> Option<Vec<usize>> {
        warm_magnitudes.map(|mags| {
            let mut idx: Vec<usize> = (0..p.min(mags.len())).collect();
            idx.sort_by(|&a, &b| mags[b].abs().partial_cmp(&mags[a].abs()).unwrap().then(a.cmp(&b)));
            idx.truncate(k);
            idx.sort_unstable();
            idx
        })
    };

    let t = cfg.t_folds;
    let m = grid.len();
    let cell_time = (budgets.time_limit / (k_max * m * t) as f64).max(1.0);
    let candidates: Vec<usize> = (0..p).collect();
    let n_cells = k_max * m * t;
    let results = exec::map_indices(n_cells, |cell| {
        let k = cell / (m * t) + 1;
        let li = (cell / t) % m;
        let fold = cell % t;
        let hint = hint_for(k);
        let solved = solve_gram(
            &complements[fold],
            &candidates,
            k,
            grid[li],
            budgets.b,
            cell_time,
            budgets.gap_target,
            budgets.node_limit,
            hint.as_deref(),
            None,
        );
        match solved {
            Ok(sol) => {
                let support = sol.support();
                // Score the selected support by its unregularized refit on
                // the training complement; the solver's ridge-shrunk
                // coefficients would bias the error toward larger k.
                let coef = match crate::subset::ridge_on_support_jittered(
                    &complements[fold],
                    &support,
                    0.0,
                    f64::INFINITY,
                ) {
                    Ok((c, _)) => c,
                    Err(_) => support.iter().map(|&j| sol.xi[j]).collect(),
                };
                let mut err = 0.0;
                for &i in &folds[fold] {
                    let mut pred = 0.0;
                    for (l, &j) in support.iter().enumerate() {
                        pred += theta_s.get(i, j) * coef[l];
                    }
                    let r = y[i] - pred;
                    err += r * r;
                }
                let outcome = match sol.status {
                    SolveStatus::Optimal => CellOutcome::Optimal,
                    SolveStatus::TimeLimitSuboptimal => CellOutcome::TimeLimit,
                };
                (err, outcome)
            }
            Err(e) => (f64::INFINITY, CellOutcome::Failed(e.to_string())),
        }
    });

    let mut errors = Mat::zeros(k_max, m);
    let mut fold_errors = vec![vec![0.0f64; t]; k_max * m];
    let mut cells = Vec::with_capacity(n_cells);
    for (cell, (err, outcome)) in results.into_iter().enumerate() {
        let k = cell / (m * t) + 1;
        let li = (cell / t) % m;
        let fold = cell % t;
        let cur = errors.get(k - 1, li);
        errors.set(k - 1, li, if err.is_finite() && cur.is_finite() { cur + err } else { f64::INFINITY });
        fold_errors[(k - 1) * m + li][fold] = err;
        cells.push(CellRecord { k, lambda_index: li, fold, outcome });
    }

    // Bare argmin first (ties within float noise resolve to smaller k, then
    // smaller lambda2 by scan order).
    let mut best: Option<(usize, usize, f64)> = None;
    for k in 0..k_max {
        for li in 0..m {
            let e = errors.get(k, li);
            if !e.is_finite() {
                continue;
            }
            match best {
                None => best = Some((k, li, e)),
                Some((_, _, be)) => {
                    let tol = 1e-10 * be.abs().max(1.0);
                    if e < be - tol {
                        best = Some((k, li, e));
                    }
                }
            }
        }
    }
    let Some((mut k_idx, mut l_idx, min_error)) = best else {
        return Err(Error::TuningFailed);
    };
    // Parsimony: a smaller-k cell counts as tied with the argmin when its
    // total error is within `parsimony_se` paired standard errors of it.
    // Pairing the fold errors cancels the shared noise realization, so the
    // band tracks genuine model differences rather than the absolute error
    // scale. A tiny absolute floor handles the exact-fit case where both
    // errors sit at rounding level.
    if cfg.parsimony_se > 0.0 {
        let best_folds = fold_errors[k_idx * m + l_idx].clone();
        'outer: for k in 0..k_idx {
            // candidate = this k's best valid cell
            let mut cand: Option<(usize, f64)> = None;
            for li in 0..m {
                let e = errors.get(k, li);
                if e.is_finite() && cand.map_or(true, |(_, ce)| e < ce) {
                    cand = Some((li, e));
                }
            }
            let Some((li, e)) = cand else { continue };
            let diffs: Vec<f64> = fold_errors[k * m + li]
                .iter()
                .zip(&best_folds)
                .map(|(a, b)| a - b)
                .collect();
            let mean = diffs.iter().sum::<f64>() / t as f64;
            let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (t as f64 - 1.0);
            let se_of_sum = (var * t as f64).sqrt();
            let band = (cfg.parsimony_se * se_of_sum).max(1e-10 * min_error.abs().max(1.0));
            if e <= min_error + band {
                k_idx = k;
                l_idx = li;
                break 'outer;
            }
        }
    }
    let cv_error = errors.get(k_idx, l_idx);
    Ok(TuningResult {
        errors,
        lambda_star: grid[l_idx],
        lambda_grid: grid,
        k_star: k_idx + 1,
        lambda_star_index: l_idx,
        cv_error,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn lambda_grid_max_is_inf_norm() {
        let theta = Mat::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let dm = DesignMatrix::from_matrix(theta);
        let grid = lambda_grid(&dm, &[3.0, 8.0], 5, None).unwrap();
        assert!((grid.last().unwrap() - 8.0).abs() < 1e-12);
        // n = p here, so r = 0.01
        assert!((grid[0] - 0.08).abs() < 1e-12);
    }

    #[test]
    fn lambda_grid_two_points() {
        let theta = Mat::from_rows(vec![vec![1.0], vec![1.0], vec![1.0]]);
        let dm = DesignMatrix::from_matrix(theta);
        let grid = lambda_grid(&dm, &[1.0, 1.0, 2.0], 2, Some(0.01)).unwrap();
        assert_eq!(grid.len(), 2);
        assert!((grid[0] - 0.04).abs() < 1e-12);
        assert!((grid[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_grid_r_rule() {
        // N > P picks r = 1e-4
        let theta = Mat::from_fn(100, 3, |i, j| ((i + j) as f64 * 0.1).sin());
        let y: Vec<f64> = (0..100).map(|i| theta.get(i, 0)).collect();
        let dm = DesignMatrix::from_matrix(theta);
        let grid = lambda_grid(&dm, &y, 10, None).unwrap();
        let ratio = grid[0] / grid.last().unwrap();
        assert!((ratio - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn lambda_grid_rejects_zero_target() {
        let theta = Mat::from_fn(10, 2, |i, _| i as f64);
        let dm = DesignMatrix::from_matrix(theta);
        assert!(matches!(
            lambda_grid(&dm, &[0.0; 10], 5, None),
            Err(Error::DegenerateTarget)
        ));
    }

    #[test]
    fn folds_partition_rows() {
        for scheme in [FoldScheme::Contiguous, FoldScheme::Strided] {
            let folds = fold_rows(103, 5, scheme);
            let mut seen = vec![false; 103];
            for f in &folds {
                for &i in f {
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            assert!(seen.iter().all(|&s| s));
            let sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
        // contiguous on 10 rows, T=2: 0..5 and 5..10
        let folds = fold_rows(10, 2, FoldScheme::Contiguous);
        assert_eq!(folds[0], (0..5).collect::<Vec<_>>());
        assert_eq!(folds[1], (5..10).collect::<Vec<_>>());
    }

    #[test]
    fn exact_representation_selects_true_k() {
        // y spanned exactly by columns 1 and 3; k* must be 2 by the tie rule.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 60;
        let theta = Mat::from_fn(n, 6, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<f64> = (0..n).map(|i| 2.0 * theta.get(i, 1) - theta.get(i, 3)).collect();
        let cfg = TuningConfig { k_max: 4, m: 3, t_folds: 3, ..Default::default() };
        let res = cross_validate(&theta, &y, &cfg, &SolverBudgets::default(), None).unwrap();
        assert_eq!(res.k_star, 2);
        assert!(res.cv_error <= 1e-10 * n as f64);
    }

    #[test]
    fn errors_accumulate_over_folds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 45;
        let theta = Mat::from_fn(n, 5, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                theta.get(i, 0) + 0.2 * z
            })
            .collect();
        let cfg = TuningConfig { k_max: 2, m: 2, t_folds: 3, ..Default::default() };
        let res = cross_validate(&theta, &y, &cfg, &SolverBudgets::default(), None).unwrap();
        assert_eq!(res.errors.rows(), 2);
        assert_eq!(res.errors.cols(), 2);
        assert_eq!(res.cells.len(), 2 * 2 * 3);
        assert!(res.errors.iter().all(|e| e >= 0.0));
        // argmin attains the matrix minimum (within the tie tolerance)
        let min = res.errors.iter().fold(f64::INFINITY, f64::min);
        let chosen = res.errors.get(res.k_star - 1, res.lambda_star_index);
        assert!(chosen <= min + 1e-10 * min.abs().max(1.0));
    }

    #[test]
    fn repeated_runs_are_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 40;
        let theta = Mat::from_fn(n, 6, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                theta.get(i, 2) - 2.0 * theta.get(i, 5) + 0.5 * z
            })
            .collect();
        let cfg = TuningConfig { k_max: 3, m: 4, t_folds: 4, ..Default::default() };
        let a = cross_validate(&theta, &y, &cfg, &SolverBudgets::default(), None).unwrap();
        let b = cross_validate(&theta, &y, &cfg, &SolverBudgets::default(), None).unwrap();
        assert_eq!(a.k_star, b.k_star);
        assert_eq!(a.lambda_star, b.lambda_star);
        assert_eq!(a.errors, b.errors);
    }

    #[test]
    fn heatmap_has_expected_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 30;
        let theta = Mat::from_fn(n, 4, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<f64> = (0..n).map(|i| theta.get(i, 1)).collect();
        let cfg = TuningConfig { k_max: 2, m: 3, t_folds: 2, ..Default::default() };
        let res = cross_validate(&theta, &y, &cfg, &SolverBudgets::default(), None).unwrap();
        let csv = res.heatmap_csv();
        assert_eq!(csv.lines().count(), 3); // header + 2 k-rows
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 4);
    }
}

