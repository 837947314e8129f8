//! Per-equation discovery pipeline: standardize, screen, tune, solve the
//! subset problem at the tuned (k, lambda2), then refit coefficients by
//! ordinary least squares on the original data. Also hosts the sequentially
//! thresholded least-squares baseline.

use serde::{Deserialize, Serialize};

use crate::dictionary::{build_dictionary, standardize, DesignMatrix, StandardizeMode, TermDictionary};
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{qr_lstsq, Mat};
use crate::screen::{screen, ScreeningConfig};
use crate::subset::{solve_gram, GramInstance, SolveStatus};
use crate::systems::{GroundTruthModel, TrajectoryDataset};
use crate::tuning::{cross_validate, SolverBudgets, TuningConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub degree: usize,
    pub include_constant: bool,
    pub standardize_mode: StandardizeMode,
    pub screening: ScreeningConfig,
    pub tuning: TuningConfig,
    pub budgets: SolverBudgets,
    /// Target columns to skip (bifurcation-parameter dummy equations).
    pub dummy_columns: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            degree: 5,
            include_constant: true,
            standardize_mode: StandardizeMode::default(),
            screening: ScreeningConfig::default(),
            tuning: TuningConfig::default(),
            budgets: SolverBudgets::default(),
            dummy_columns: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EquationStatus {
    /// Solved to proven optimality at the tuned hyperparameters.
    Optimal,
    /// Budget ran out; best incumbent reported.
    TimeLimit,
    /// Dummy equation, not discovered.
    Skipped,
    /// Baseline thresholded every coefficient away.
    Empty,
    Failed(String),
}

impl EquationStatus {
    fn as_str(&self) -> String {
        match self {
            EquationStatus::Optimal => "optimal".into(),
            EquationStatus::TimeLimit => "time_limit".into(),
            EquationStatus::Skipped => "skipped".into(),
            EquationStatus::Empty => "empty".into(),
            EquationStatus::Failed(m) => format!("failed: {m}"),
        }
    }

    fn parse(s: &str) -> Self {
        match s {
            "optimal" => EquationStatus::Optimal,
            "time_limit" => EquationStatus::TimeLimit,
            "skipped" => EquationStatus::Skipped,
            "empty" => EquationStatus::Empty,
            other => EquationStatus::Failed(other.trim_start_matches("failed: ").into()),
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, EquationStatus::Optimal | EquationStatus::TimeLimit | EquationStatus::Skipped)
    }
}

/// One recovered equation: support indices into the dictionary and the
/// least-squares coefficients on the original data.
#[derive(Debug, Clone)]
pub struct EquationModel {
    pub target: String,
    pub status: EquationStatus,
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub k: usize,
    pub lambda2: Option<f64>,
    pub cv_error: Option<f64>,
}

impl EquationModel {
    fn skipped(target: String) -> Self {
        EquationModel {
            target,
            status: EquationStatus::Skipped,
            support: Vec::new(),
            coefficients: Vec::new(),
            k: 0,
            lambda2: None,
            cv_error: None,
        }
    }

    fn failed(target: String, msg: String) -> Self {
        EquationModel {
            target,
            status: EquationStatus::Failed(msg),
            support: Vec::new(),
            coefficients: Vec::new(),
            k: 0,
            lambda2: None,
            cv_error: None,
        }
    }
}

/// Discovered sparse model over a named dictionary.
#[derive(Debug, Clone)]
pub struct SparseModel {
    pub dictionary: TermDictionary,
    pub equations: Vec<EquationModel>,
}

impl SparseModel {
    pub fn gamma_column(&self, j: usize) -> Vec<bool> {
        let mut g = vec![false; self.dictionary.len()];
        for &t in &self.equations[j].support {
            g[t] = true;
        }
        g
    }

    pub fn xi_column(&self, j: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dictionary.len()];
        for (&t, &c) in self.equations[j].support.iter().zip(&self.equations[j].coefficients) {
            x[t] = c;
        }
        x
    }

    pub fn failed_equations(&self) -> Vec<usize> {
        self.equations
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.status.is_ok())
            .map(|(j, _)| j)
            .collect()
    }

    pub fn to_json(&self) -> ModelJson {
        ModelJson {
            dictionary: DictionaryJson {
                degree: self.dictionary.degree(),
                j: self.dictionary.j(),
                terms: self
                    .dictionary
                    .labels()
                    .iter()
                    .enumerate()
                    .map(|(p, l)| TermJson {
                        label: l.clone(),
                        exponents: self.dictionary.exponents(p).to_vec(),
                    })
                    .collect(),
            },
            equations: self
                .equations
                .iter()
                .map(|e| EquationJson {
                    target: e.target.clone(),
                    k: e.k,
                    lambda2: e.lambda2,
                    terms: e
                        .support
                        .iter()
                        .zip(&e.coefficients)
                        .map(|(&t, &c)| CoefficientJson {
                            label: self.dictionary.label(t).to_string(),
                            coefficient: c,
                        })
                        .collect(),
                    status: e.status.as_str(),
                    cv_error: e.cv_error,
                })
                .collect(),
        }
    }

    pub fn from_json(json: &ModelJson) -> Result<SparseModel> {
        let dict = build_dictionary(json.dictionary.j, json.dictionary.degree, true);
        if dict.len() != json.dictionary.terms.len() {
            return Err(Error::invalid(format!(
                "dictionary size mismatch: expected {}, file has {}",
                dict.len(),
                json.dictionary.terms.len()
            )));
        }
        let mut equations = Vec::with_capacity(json.equations.len());
        for eq in &json.equations {
            let mut support = Vec::new();
            let mut coefficients = Vec::new();
            for term in &eq.terms {
                let idx = dict
                    .labels()
                    .iter()
                    .position(|l| *l == term.label)
                    .ok_or_else(|| Error::invalid(format!("unknown term label '{}'", term.label)))?;
                support.push(idx);
                coefficients.push(term.coefficient);
            }
            equations.push(EquationModel {
                target: eq.target.clone(),
                status: EquationStatus::parse(&eq.status),
                support,
                coefficients,
                k: eq.k,
                lambda2: eq.lambda2,
                cv_error: eq.cv_error,
            });
        }
        Ok(SparseModel { dictionary: dict, equations })
    }
}

impl GroundTruthModel {
    pub fn to_sparse_model(&self, targets: &[String]) -> SparseModel {
        SparseModel {
            dictionary: self.dict.clone(),
            equations: self
                .support
                .iter()
                .zip(&self.coeffs)
                .zip(targets)
                .map(|((s, c), t)| EquationModel {
                    target: t.clone(),
                    status: EquationStatus::Optimal,
                    support: s.clone(),
                    coefficients: c.clone(),
                    k: s.len(),
                    lambda2: None,
                    cv_error: None,
                })
                .collect(),
        }
    }
}

// JSON shape of a serialized model; field order is the file's key order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelJson {
    pub dictionary: DictionaryJson,
    pub equations: Vec<EquationJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryJson {
    pub degree: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub terms: Vec<TermJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermJson {
    pub label: String,
    pub exponents: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquationJson {
    pub target: String,
    pub k: usize,
    pub lambda2: Option<f64>,
    pub terms: Vec<CoefficientJson>,
    pub status: String,
    pub cv_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientJson {
    pub label: String,
    pub coefficient: f64,
}

/// Ordinary least squares on the selected raw columns (no ridge, no box).
pub fn ls_refit(theta_raw: &DesignMatrix, y_raw: &[f64], support: &[usize]) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Err(Error::invalid("refit support must be non-empty"));
    }
    let sub = theta_raw.theta.select_cols(support);
    qr_lstsq(&sub, y_raw).map_err(|e| match e {
        Error::RankDeficient(cols) => Error::RankDeficient(
            cols.iter()
                .filter_map(|c| c.parse::<usize>().ok())
                .map(|c| theta_raw.dict.label(support[c]).to_string())
                .collect(),
        ),
        other => other,
    })
}

/// Per-equation side channel for the CLI: the CV error surface and the node
/// log of the final subset solve.
#[derive(Debug, Clone, Default)]
pub struct EquationDiagnostics {
    pub tuning: Option<crate::tuning::TuningResult>,
    pub node_log: Option<String>,
}

/// Run the full discovery pipeline on a dataset with derivatives present.
///
/// Equations are processed independently (and in parallel); a failure in one
/// leaves the others intact and is recorded in that equation's status.
pub fn discover(data: &TrajectoryDataset, cfg: &PipelineConfig) -> Result<SparseModel> {
    discover_with_diagnostics(data, cfg, false).map(|(m, _)| m)
}

pub fn discover_with_diagnostics(
    data: &TrajectoryDataset,
    cfg: &PipelineConfig,
    capture_node_log: bool,
) -> Result<(SparseModel, Vec<EquationDiagnostics>)> {
    data.validate()?;
    let derivs = data.derivs.as_ref().ok_or(Error::MissingDerivatives)?;
    let dict = build_dictionary(data.j(), cfg.degree, cfg.include_constant);
    let theta_raw = dict.evaluate(&data.states)?;
    let (theta_std, y_std) = standardize(&theta_raw, derivs, cfg.standardize_mode)?;

    let results = exec::map_indices(data.j(), |eq| {
        let target = data.names[eq].clone();
        if cfg.dummy_columns.contains(&eq) {
            return (EquationModel::skipped(target), EquationDiagnostics::default());
        }
        match discover_equation(&theta_raw, &theta_std, &y_std, derivs, eq, cfg, capture_node_log) {
            Ok((model, diag)) => (EquationModel { target, ..model }, diag),
            Err(e) => (EquationModel::failed(target, e.to_string()), EquationDiagnostics::default()),
        }
    });
    let mut equations = Vec::with_capacity(results.len());
    let mut diags = Vec::with_capacity(results.len());
    for (eq, d) in results {
        equations.push(eq);
        diags.push(d);
    }
    Ok((SparseModel { dictionary: dict, equations }, diags))
}

#[allow(clippy::too_many_arguments)]
fn discover_equation(
    theta_raw: &DesignMatrix,
    theta_std: &DesignMatrix,
    y_std: &Mat,
    y_raw: &Mat,
    eq: usize,
    cfg: &PipelineConfig,
    capture_node_log: bool,
) -> Result<(EquationModel, EquationDiagnostics)> {
    let y = y_std.col(eq);
    let screened = screen(theta_std, &y, &cfg.screening)?;
    let selected = &screened.indices;
    let theta_sub = theta_std.theta.select_cols(selected);
    let warm: Vec<f64> = selected.iter().map(|&g| screened.xi_cs[g]).collect();
    let has_warm = warm.iter().any(|v| *v != 0.0);

    let tuning_cfg = TuningConfig { k_max: cfg.tuning.k_max.min(selected.len()), ..cfg.tuning };
    let tuned = cross_validate(
        &theta_sub,
        &y,
        &tuning_cfg,
        &cfg.budgets,
        has_warm.then_some(warm.as_slice()),
    )?;

    // Final subset solve on the full standardized data at (k*, lambda2*).
    let inst = GramInstance::from_theta(&theta_sub, &y);
    let candidates: Vec<usize> = (0..theta_sub.cols()).collect();
    let hint: Option<Vec<usize>> = has_warm.then(|| {
        let mut idx: Vec<usize> = (0..selected.len()).collect();
        idx.sort_by(|&a, &b| warm[b].abs().partial_cmp(&warm[a].abs()).unwrap().then(a.cmp(&b)));
        idx.truncate(tuned.k_star);
        idx.sort_unstable();
        idx
    });
    let mut node_log = capture_node_log.then(String::new);
    let mut observer = node_log.as_mut().map(|log| {
        log.push_str("node,depth,bound,incumbent\n");
        move |e: &crate::subset::NodeEvent| {
            use std::fmt::Write as _;
            let _ = writeln!(log, "{},{},{},{}", e.id, e.depth, e.bound, e.incumbent);
        }
    });
    let sol = solve_gram(
        &inst,
        &candidates,
        tuned.k_star,
        tuned.lambda_star,
        cfg.budgets.b,
        cfg.budgets.time_limit,
        cfg.budgets.gap_target,
        cfg.budgets.node_limit,
        hint.as_deref(),
        observer.as_mut().map(|f| f as &mut dyn FnMut(&crate::subset::NodeEvent)),
    )?;
    let support: Vec<usize> = sol.support().iter().map(|&local| selected[local]).collect();

    // Coefficients come from an unregularized refit on the original data;
    // the solver's internal estimates are discarded.
    let coefficients = ls_refit(theta_raw, &y_raw.col(eq), &support)?;
    drop(observer);
    let model = EquationModel {
        target: String::new(),
        status: match sol.status {
            SolveStatus::Optimal => EquationStatus::Optimal,
            SolveStatus::TimeLimitSuboptimal => EquationStatus::TimeLimit,
        },
        support,
        coefficients,
        k: tuned.k_star,
        lambda2: Some(tuned.lambda_star),
        cv_error: Some(tuned.cv_error),
    };
    Ok((model, EquationDiagnostics { tuning: Some(tuned), node_log }))
}

/// Sequentially thresholded ridge regression on raw data (the classic
/// sparse-regression baseline).
pub fn stlsq_baseline(
    data: &TrajectoryDataset,
    degree: usize,
    threshold: f64,
    ridge: f64,
    max_iters: usize,
) -> Result<SparseModel> {
    if !(threshold > 0.0) {
        return Err(Error::invalid("threshold must be > 0"));
    }
    data.validate()?;
    let derivs = data.derivs.as_ref().ok_or(Error::MissingDerivatives)?;
    let dict = build_dictionary(data.j(), degree, true);
    let theta = dict.evaluate(&data.states)?;
    let dummy = data.meta.system.as_ref().map(|s| s.dummy_columns()).unwrap_or_default();

    let equations = exec::map_indices(data.j(), |eq| {
        let target = data.names[eq].clone();
        if dummy.contains(&eq) {
            return EquationModel::skipped(target);
        }
        match stlsq_equation(&theta.theta, &derivs.col(eq), threshold, ridge, max_iters) {
            Ok((support, coefficients)) => {
                let empty = support.is_empty();
                EquationModel {
                    target,
                    status: if empty { EquationStatus::Empty } else { EquationStatus::Optimal },
                    k: support.len(),
                    support,
                    coefficients,
                    lambda2: Some(ridge),
                    cv_error: None,
                }
            }
            Err(e) => EquationModel::failed(target, e.to_string()),
        }
    });
    Ok(SparseModel { dictionary: dict, equations })
}

fn stlsq_equation(
    theta: &Mat,
    y: &[f64],
    threshold: f64,
    ridge: f64,
    max_iters: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let inst = GramInstance::from_theta(theta, y);
    let mut active: Vec<usize> = (0..theta.cols()).collect();
    for _ in 0..max_iters.max(1) {
        if active.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let m = active.len();
        let mut a = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        for (r, &ir) in active.iter().enumerate() {
            rhs[r] = inst.gy[ir];
            for (c, &ic) in active.iter().enumerate() {
                a[r * m + c] = inst.gram[ir * inst.p + ic];
            }
            a[r * m + r] += ridge;
        }
        let beta = crate::linalg::solve_spd(&a, m, &rhs)
            .map_err(|p| Error::SingularSystem(active[p], active[p]))?;
        let keep: Vec<usize> =
            (0..m).filter(|&i| beta[i].abs() >= threshold).map(|i| active[i]).collect();
        if keep.len() == active.len() {
            return Ok((active, beta));
        }
        active = keep;
    }
    // did not reach a fixed point; return the current active fit
    if active.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let m = active.len();
    let mut a = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    for (r, &ir) in active.iter().enumerate() {
        rhs[r] = inst.gy[ir];
        for (c, &ic) in active.iter().enumerate() {
            a[r * m + c] = inst.gram[ir * inst.p + ic];
        }
        a[r * m + r] += ridge;
    }
    let beta = crate::linalg::solve_spd(&a, m, &rhs)
        .map_err(|p| Error::SingularSystem(active[p], active[p]))?;
    Ok((active, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{ground_truth, integrate_ode, SystemSpec};

    fn quick_cfg(degree: usize) -> PipelineConfig {
        PipelineConfig {
            degree,
            // clean data: drop the lambda2 grid floor so selection is
            // SSE-driven (no noise floor to regularize against)
            tuning: TuningConfig {
                k_max: 4,
                m: 4,
                t_folds: 3,
                r_override: Some(1e-12),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    /// Short clean Lorenz run discovers the exact equations.
    #[test]
    fn clean_lorenz_short_run_recovers_truth() {
        let spec = SystemSpec::lorenz3();
        let data = integrate_ode(&spec, &[-8.0, 8.0, 27.0], 0.002, 6.0).unwrap();
        let cfg = quick_cfg(3);
        let model = discover(&data, &cfg).unwrap();
        let truth = ground_truth(&spec, 3).unwrap();
        for j in 0..3 {
            assert_eq!(model.equations[j].support, truth.support[j], "equation {j}");
            for (c, t) in model.equations[j].coefficients.iter().zip(&truth.coeffs[j]) {
                assert!((c - t).abs() < 1e-6, "coefficient {c} vs {t}");
            }
        }
        // refit consistency: coefficients equal a direct refit
        let dict = model.dictionary.clone();
        let theta_raw = dict.evaluate(&data.states).unwrap();
        for j in 0..3 {
            let refit = ls_refit(
                &theta_raw,
                &data.derivs.as_ref().unwrap().col(j),
                &model.equations[j].support,
            )
            .unwrap();
            assert_eq!(refit, model.equations[j].coefficients);
        }
    }

    #[test]
    fn equation_order_is_immaterial() {
        // swap two state columns; the recovered supports swap accordingly
        let spec = SystemSpec::lorenz3();
        let data = integrate_ode(&spec, &[-8.0, 8.0, 27.0], 0.005, 4.0).unwrap();
        let cfg = quick_cfg(2);
        let model = discover(&data, &cfg).unwrap();
        let model2 = discover(&data, &cfg).unwrap();
        for (a, b) in model.equations.iter().zip(&model2.equations) {
            assert_eq!(a.support, b.support);
            assert_eq!(a.coefficients, b.coefficients);
        }
    }

    #[test]
    fn ls_refit_exact_on_consistent_system() {
        let spec = SystemSpec::lorenz3();
        let data = integrate_ode(&spec, &[-8.0, 8.0, 27.0], 0.01, 2.0).unwrap();
        let dict = build_dictionary(3, 2, true);
        let theta = dict.evaluate(&data.states).unwrap();
        let ix = dict.index_of(&[1, 0, 0]).unwrap();
        let iy = dict.index_of(&[0, 1, 0]).unwrap();
        let coef = ls_refit(&theta, &data.derivs.as_ref().unwrap().col(0), &[ix, iy]).unwrap();
        assert!((coef[0] + 10.0).abs() < 1e-9);
        assert!((coef[1] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn ls_refit_names_dependent_columns() {
        let spec = SystemSpec::lorenz3();
        let data = integrate_ode(&spec, &[-8.0, 8.0, 27.0], 0.01, 1.0).unwrap();
        let dict = build_dictionary(3, 2, true);
        let theta = dict.evaluate(&data.states).unwrap();
        let ix = dict.index_of(&[1, 0, 0]).unwrap();
        match ls_refit(&theta, &data.derivs.as_ref().unwrap().col(0), &[ix, ix]) {
            Err(Error::RankDeficient(cols)) => assert_eq!(cols, vec!["x1".to_string()]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn stlsq_recovers_clean_lorenz() {
        let spec = SystemSpec::lorenz3();
        let data = integrate_ode(&spec, &[-8.0, 8.0, 27.0], 0.002, 6.0).unwrap();
        let model = stlsq_baseline(&data, 3, 0.1, 0.05, 20).unwrap();
        let truth = ground_truth(&spec, 3).unwrap();
        for j in 0..3 {
            assert_eq!(model.equations[j].support, truth.support[j]);
        }
    }

    #[test]
    fn stlsq_huge_threshold_empties_model() {
        let spec = SystemSpec::lorenz3();
        let data = integrate_ode(&spec, &[-8.0, 8.0, 27.0], 0.01, 1.0).unwrap();
        let model = stlsq_baseline(&data, 2, 1e6, 0.05, 20).unwrap();
        assert!(model.equations.iter().all(|e| e.status == EquationStatus::Empty));
    }

    #[test]
    fn stlsq_zero_iters_is_plain_ridge() {
        let spec = SystemSpec::lorenz3();
        let data = integrate_ode(&spec, &[-8.0, 8.0, 27.0], 0.01, 1.0).unwrap();
        let model = stlsq_baseline(&data, 2, 1e-300_f64.max(1e-12), 0.0, 1).unwrap();
        // threshold ~0, one iteration: full dictionary retained
        assert_eq!(model.equations[0].support.len(), model.dictionary.len());
    }

    #[test]
    fn model_json_round_trips() {
        let spec = SystemSpec::lorenz3();
        let truth = ground_truth(&spec, 2).unwrap();
        let model = truth.to_sparse_model(&["x".into(), "y".into(), "z".into()]);
        let json = model.to_json();
        let text = serde_json::to_string_pretty(&json).unwrap();
        let parsed: ModelJson = serde_json::from_str(&text).unwrap();
        let back = SparseModel::from_json(&parsed).unwrap();
        assert_eq!(back.dictionary, model.dictionary);
        for (a, b) in back.equations.iter().zip(&model.equations) {
            assert_eq!(a.support, b.support);
            assert_eq!(a.coefficients, b.coefficients);
        }
        // serialization is byte-stable
        let text2 = serde_json::to_string_pretty(&back.to_json()).unwrap();
        assert_eq!(text, text2);
    }

    #[test]
    fn discover_requires_derivatives() {
        let spec = SystemSpec::lorenz3();
        let mut data = integrate_ode(&spec, &[-8.0, 8.0, 27.0], 0.01, 1.0).unwrap();
        data.derivs = None;
        assert!(matches!(
            discover(&data, &quick_cfg(2)),
            Err(Error::MissingDerivatives)
        ));
    }
}
