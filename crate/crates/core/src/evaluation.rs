//! Recovery metrics and model simulation: exact-support counts, simulated
//! trajectories of identified models, pointwise error series and Hovmoeller
//! difference fields, and the benchmark table renderer.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::io::format_sig6;
use crate::linalg::Mat;
use crate::pipeline::{EquationStatus, SparseModel};
use crate::systems::{rk4_step, DatasetMeta, GroundTruthModel, SparseRhs, TrajectoryDataset};

/// Support-recovery report: A counts equations whose support matches the
/// ground truth exactly (coefficients ignored).
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub a: usize,
    /// Per-equation match flag; dummy/excluded columns are false and not
    /// counted.
    pub matches: Vec<bool>,
    pub coeff_errors: Vec<CoeffError>,
    pub excluded: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CoeffError {
    pub equation: usize,
    pub label: String,
    pub truth: f64,
    pub estimate: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

/// Count exactly recovered equations against the ground truth.
pub fn recovery_metric(
    model: &SparseModel,
    truth: &GroundTruthModel,
    excluded: &[usize],
) -> Result<RecoveryReport> {
    if model.dictionary != truth.dict {
        return Err(Error::invalid(
            "model and ground truth use different dictionaries",
        ));
    }
    if model.equations.len() != truth.support.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} equations", truth.support.len()),
            got: format!("{}", model.equations.len()),
        });
    }
    let mut matches = vec![false; model.equations.len()];
    let mut coeff_errors = Vec::new();
    let mut a = 0;
    for j in 0..model.equations.len() {
        if excluded.contains(&j) {
            continue;
        }
        let eq = &model.equations[j];
        matches[j] = eq.status.is_ok() && eq.support == truth.support[j];
        if matches[j] {
            a += 1;
        }
        // coefficient errors for true terms present in the estimate
        for (pos, &term) in truth.support[j].iter().enumerate() {
            let truth_c = truth.coeffs[j][pos];
            if let Some(est_pos) = eq.support.iter().position(|&t| t == term) {
                let est = eq.coefficients[est_pos];
                coeff_errors.push(CoeffError {
                    equation: j,
                    label: truth.dict.label(term).to_string(),
                    truth: truth_c,
                    estimate: est,
                    abs_err: (est - truth_c).abs(),
                    rel_err: (est - truth_c).abs() / truth_c.abs().max(1e-300),
                });
            }
        }
    }
    Ok(RecoveryReport { a, matches, coeff_errors, excluded: excluded.to_vec() })
}

/// Simulation horizon for an identified model.
#[derive(Debug, Clone, Copy)]
pub enum SimulateKind {
    Ode { dt: f64, t_end: f64 },
    Map { steps: usize },
}

/// Integrate (or iterate) an identified model from an initial state.
///
/// Skipped columns are treated as dummy parameter equations: derivative zero
/// for continuous systems, identity for maps. Blow-up truncates the output
/// and is reported through the dataset length rather than an error so
/// comparisons can still use the prefix.
pub fn simulate_model(model: &SparseModel, x0: &[f64], kind: SimulateKind) -> Result<TrajectoryDataset> {
    let j = model.equations.len();
    if x0.len() != j {
        return Err(Error::ShapeMismatch {
            expected: format!("{j} initial values"),
            got: format!("{}", x0.len()),
        });
    }
    for eq in &model.equations {
        if let EquationStatus::Failed(msg) = &eq.status {
            return Err(Error::invalid(format!(
                "cannot simulate: equation '{}' failed ({msg})",
                eq.target
            )));
        }
    }
    let rhs = SparseRhs {
        dict: model.dictionary.clone(),
        cols: model
            .equations
            .iter()
            .map(|e| e.support.iter().copied().zip(e.coefficients.iter().copied()).collect())
            .collect(),
    };
    let names: Vec<String> = model.equations.iter().map(|e| e.target.clone()).collect();
    match kind {
        SimulateKind::Ode { dt, t_end } => {
            if !(dt > 0.0) || !(t_end > 0.0) {
                return Err(Error::invalid("dt and t_end must be positive"));
            }
            let n_steps = (t_end / dt).floor() as usize;
            let mut states = Mat::zeros(n_steps + 1, j);
            let mut x = x0.to_vec();
            states.row_mut(0).copy_from_slice(&x);
            let mut scratch = vec![vec![0.0; j]; 5];
            let mut n = n_steps + 1;
            for step in 0..n_steps {
                rk4_step(&rhs, &mut x, dt, &mut scratch);
                if x.iter().any(|v| !v.is_finite()) {
                    n = step + 1; // truncate at the last finite state
                    break;
                }
                states.row_mut(step + 1).copy_from_slice(&x);
            }
            let states = states.select_rows(&(0..n).collect::<Vec<_>>());
            Ok(TrajectoryDataset {
                times: (0..n).map(|i| i as f64 * dt).collect(),
                states,
                derivs: None,
                names,
                meta: DatasetMeta { dt: Some(dt), ..Default::default() },
            })
        }
        SimulateKind::Map { steps } => {
            if steps < 1 {
                return Err(Error::invalid("steps must be >= 1"));
            }
            let mut states = Mat::zeros(steps + 1, j);
            let mut x = x0.to_vec();
            states.row_mut(0).copy_from_slice(&x);
            let mut next = vec![0.0; j];
            let mut n = steps + 1;
            for step in 0..steps {
                rhs.eval_into(&x, &mut next);
                for (c, eq) in model.equations.iter().enumerate() {
                    if eq.status == EquationStatus::Skipped {
                        next[c] = x[c]; // dummy parameter column carries over
                    }
                }
                if next.iter().any(|v| !v.is_finite()) {
                    n = step + 1;
                    break;
                }
                x.copy_from_slice(&next);
                states.row_mut(step + 1).copy_from_slice(&x);
            }
            let states = states.select_rows(&(0..n).collect::<Vec<_>>());
            Ok(TrajectoryDataset {
                times: (0..n).map(|i| i as f64).collect(),
                states,
                derivs: None,
                names,
                meta: DatasetMeta::default(),
            })
        }
    }
}

/// Pointwise comparison of a simulated trajectory against a reference.
#[derive(Debug, Clone)]
pub struct TrajectoryComparison {
    pub times: Vec<f64>,
    /// ||xhat(t) - x(t)||^2 per sample.
    pub l2_error: Vec<f64>,
    /// J x N difference field, rows = state index, columns = time.
    pub hovmoller: Mat,
}

pub fn compare_trajectories(
    reference: &TrajectoryDataset,
    simulated: &TrajectoryDataset,
) -> Result<TrajectoryComparison> {
    if reference.j() != simulated.j() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} columns", reference.j()),
            got: format!("{}", simulated.j()),
        });
    }
    let n = reference.n().min(simulated.n());
    let j = reference.j();
    let mut l2 = Vec::with_capacity(n);
    let mut hov = Mat::zeros(j, n);
    for i in 0..n {
        let mut e = 0.0;
        for c in 0..j {
            let d = reference.states.get(i, c) - simulated.states.get(i, c);
            hov.set(c, i, d);
            e += d * d;
        }
        l2.push(e);
    }
    Ok(TrajectoryComparison { times: reference.times[..n].to_vec(), l2_error: l2, hovmoller: hov })
}

impl TrajectoryComparison {
    pub fn l2_series_csv(&self) -> String {
        let mut out = String::from("t,l2_error\n");
        for (t, e) in self.times.iter().zip(&self.l2_error) {
            let _ = writeln!(out, "{t},{e}");
        }
        out
    }

    pub fn hovmoller_csv(&self) -> String {
        crate::io::matrix_to_csv(&self.hovmoller)
    }
}

/// One benchmark table row.
#[derive(Debug, Clone, Copy)]
pub struct TableRow {
    pub sigma: f64,
    pub snr: f64,
    pub a_baseline: usize,
    pub a_subset: usize,
}

/// Render rows in the benchmark table schema, 6 significant digits,
/// input order preserved.
pub fn table_report(rows: &[TableRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::invalid("table report needs at least one row"));
    }
    let mut out = String::from("noise_std,snr,a_stlsq,a_bestsubset\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            format_sig6(r.sigma),
            format_sig6(r.snr),
            r.a_baseline,
            r.a_subset
        );
    }
    Ok(out)
}
