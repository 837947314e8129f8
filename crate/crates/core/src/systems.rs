//! Benchmark dynamical systems: trajectory generation and ground-truth
//! sparse models.
//!
//! Every right-hand side is represented as a sparse coefficient vector over
//! the canonical term dictionary and evaluated through one shared path
//! ([`SparseRhs`]), so a recovered model with exactly the true terms
//! reproduces the generating trajectory bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dictionary::{build_dictionary, TermDictionary};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::noise::{NoiseRecord, NoiseSpec, NoiseSurface, NoiseType};

pub const RNG_NAME: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    ContinuousOde,
    DiscreteMap,
}

/// Parameterized benchmark system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum SystemSpec {
    Lorenz3 { alpha: f64, rho: f64, beta: f64 },
    Lorenz96 { j: usize, f: f64 },
    HopfNormal { omega: f64, a: f64, mus: Vec<f64> },
    LogisticMap { rs: Vec<f64>, sigma_eta: f64 },
    CylinderMeanField { mu: f64, omega: f64, a: f64, lambda: f64 },
}

impl SystemSpec {
    pub fn lorenz3() -> Self {
        SystemSpec::Lorenz3 { alpha: 10.0, rho: 28.0, beta: 8.0 / 3.0 }
    }

    pub fn lorenz96(j: usize) -> Self {
        SystemSpec::Lorenz96 { j, f: 8.0 }
    }

    /// 14 evenly spaced bifurcation values over [-0.2, 0.6].
    pub fn hopf_default() -> Self {
        let mus = (0..14).map(|i| -0.2 + 0.8 * i as f64 / 13.0).collect();
        SystemSpec::HopfNormal { omega: 1.0, a: -1.0, mus }
    }

    /// 10 evenly spaced map parameters over [2.5, 4.0].
    pub fn logistic_default(sigma_eta: f64) -> Self {
        let rs = (0..10).map(|i| 2.5 + 1.5 * i as f64 / 9.0).collect();
        SystemSpec::LogisticMap { rs, sigma_eta }
    }

    pub fn cylinder_default() -> Self {
        SystemSpec::CylinderMeanField { mu: 0.1, omega: 1.0, a: -1.0, lambda: 10.0 }
    }

    pub fn kind(&self) -> SystemKind {
        match self {
            SystemSpec::LogisticMap { .. } => SystemKind::DiscreteMap,
            _ => SystemKind::ContinuousOde,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemSpec::Lorenz3 { .. } => "lorenz3",
            SystemSpec::Lorenz96 { .. } => "lorenz96",
            SystemSpec::HopfNormal { .. } => "hopf",
            SystemSpec::LogisticMap { .. } => "logistic",
            SystemSpec::CylinderMeanField { .. } => "cylinder",
        }
    }

    /// Dimension of the state vector handed to the integrator / map.
    pub fn state_dim(&self) -> usize {
        match self {
            SystemSpec::Lorenz3 { .. } | SystemSpec::CylinderMeanField { .. } => 3,
            SystemSpec::Lorenz96 { j, .. } => *j,
            SystemSpec::HopfNormal { .. } => 2,
            SystemSpec::LogisticMap { .. } => 1,
        }
    }

    /// Number of state columns in discovery datasets (bifurcation systems
    /// carry the parameter as an extra column).
    pub fn dataset_dim(&self) -> usize {
        match self {
            SystemSpec::HopfNormal { .. } => 3,
            SystemSpec::LogisticMap { .. } => 2,
            _ => self.state_dim(),
        }
    }

    /// Dataset columns holding a bifurcation parameter (dummy equations).
    pub fn dummy_columns(&self) -> Vec<usize> {
        match self {
            SystemSpec::HopfNormal { .. } => vec![2],
            SystemSpec::LogisticMap { .. } => vec![1],
            _ => Vec::new(),
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        match self {
            SystemSpec::Lorenz3 { .. } | SystemSpec::CylinderMeanField { .. } => {
                vec!["x".into(), "y".into(), "z".into()]
            }
            SystemSpec::Lorenz96 { j, .. } => (1..=*j).map(|i| format!("x{i}")).collect(),
            SystemSpec::HopfNormal { .. } => vec!["x".into(), "y".into(), "mu".into()],
            SystemSpec::LogisticMap { .. } => vec!["x".into(), "r".into()],
        }
    }

    /// Paper-standard initial condition.
    pub fn default_x0(&self) -> Vec<f64> {
        match self {
            SystemSpec::Lorenz3 { .. } => vec![-8.0, 8.0, 27.0],
            SystemSpec::Lorenz96 { j, .. } => {
                let mut x = vec![1.0; *j];
                x[0] = 1.01;
                x
            }
            SystemSpec::HopfNormal { .. } => vec![2.0, 0.0],
            SystemSpec::LogisticMap { .. } => vec![0.5],
            SystemSpec::CylinderMeanField { .. } => vec![0.01, 0.0, 0.0],
        }
    }

    /// Smallest polynomial degree containing all true terms.
    pub fn minimal_degree(&self) -> usize {
        match self {
            SystemSpec::Lorenz3 { .. } | SystemSpec::Lorenz96 { .. } => 2,
            SystemSpec::HopfNormal { .. } | SystemSpec::LogisticMap { .. } => 3,
            SystemSpec::CylinderMeanField { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{what} must be finite")))
            }
        };
        match self {
            SystemSpec::Lorenz3 { alpha, rho, beta } => {
                finite(*alpha, "alpha")?;
                finite(*rho, "rho")?;
                finite(*beta, "beta")
            }
            SystemSpec::Lorenz96 { j, f } => {
                if *j < 4 {
                    return Err(Error::config("lorenz96 requires j >= 4"));
                }
                finite(*f, "f")
            }
            SystemSpec::HopfNormal { omega, a, mus } => {
                finite(*omega, "omega")?;
                finite(*a, "a")?;
                if mus.is_empty() {
                    return Err(Error::config("hopf requires a non-empty mu list"));
                }
                mus.iter().try_for_each(|m| finite(*m, "mu"))
            }
            SystemSpec::LogisticMap { rs, sigma_eta } => {
                if rs.is_empty() {
                    return Err(Error::config("logistic requires a non-empty r list"));
                }
                if !sigma_eta.is_finite() || *sigma_eta < 0.0 {
                    return Err(Error::config("sigma_eta must be finite and >= 0"));
                }
                rs.iter().try_for_each(|r| finite(*r, "r"))
            }
            SystemSpec::CylinderMeanField { mu, omega, a, lambda } => {
                finite(*mu, "mu")?;
                finite(*omega, "omega")?;
                finite(*a, "a")?;
                finite(*lambda, "lambda")
            }
        }
    }
}

/// Time-stamped state (and derivative / next-state) matrices.
#[derive(Debug, Clone)]
pub struct TrajectoryDataset {
    pub times: Vec<f64>,
    /// N x J states. For maps, row n holds (x_n, parameter).
    pub states: Mat,
    /// N x J derivatives for ODEs; next states for maps.
    pub derivs: Option<Mat>,
    pub names: Vec<String>,
    pub meta: DatasetMeta,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetMeta {
    pub system: Option<SystemSpec>,
    pub seed: Option<u64>,
    pub rng: Option<String>,
    pub dt: Option<f64>,
    pub noise: Option<NoiseRecord>,
}

impl TrajectoryDataset {
    pub fn n(&self) -> usize {
        self.states.rows()
    }

    pub fn j(&self) -> usize {
        self.states.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.n() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} times", self.n()),
                got: format!("{}", self.times.len()),
            });
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("times must be strictly increasing"));
        }
        if let Some(d) = &self.derivs {
            if d.rows() != self.n() || d.cols() != self.j() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{}x{} derivatives", self.n(), self.j()),
                    got: format!("{}x{}", d.rows(), d.cols()),
                });
            }
        }
        if self.names.len() != self.j() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} column names", self.j()),
                got: format!("{}", self.names.len()),
            });
        }
        Ok(())
    }
}

/// Right-hand side as sparse (term, coefficient) pairs per state column,
/// evaluated in canonical term order.
#[derive(Debug, Clone)]
pub struct SparseRhs {
    pub dict: TermDictionary,
    /// One list of (term index, coefficient) per state column.
    pub cols: Vec<Vec<(usize, f64)>>,
}

impl SparseRhs {
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, terms) in self.cols.iter().enumerate() {
            let mut acc = 0.0;
            for &(t, c) in terms {
                acc += c * self.dict.eval_term(t, x);
            }
            out[j] = acc;
        }
    }
}

/// Ground-truth support and coefficients in a canonical dictionary.
#[derive(Debug, Clone)]
pub struct GroundTruthModel {
    pub dict: TermDictionary,
    /// Per state column: sorted term indices of active terms.
    pub support: Vec<Vec<usize>>,
    /// Coefficients aligned with `support`.
    pub coeffs: Vec<Vec<f64>>,
    /// Columns governed by dummy bifurcation-parameter equations.
    pub dummy_columns: Vec<usize>,
}

impl GroundTruthModel {
    pub fn support_counts(&self) -> Vec<usize> {
        self.support.iter().map(|s| s.len()).collect()
    }

    pub fn to_rhs(&self) -> SparseRhs {
        SparseRhs {
            dict: self.dict.clone(),
            cols: self
                .support
                .iter()
                .zip(&self.coeffs)
                .map(|(s, c)| s.iter().copied().zip(c.iter().copied()).collect())
                .collect(),
        }
    }

    pub fn gamma_column(&self, j: usize) -> Vec<bool> {
        let mut g = vec![false; self.dict.len()];
        for &t in &self.support[j] {
            g[t] = true;
        }
        g
    }
}

/// Raw term lists (exponent vector, coefficient) for each equation of a
/// system, over the dataset state columns.
fn true_terms(spec: &SystemSpec) -> Vec<Vec<(Vec<u32>, f64)>> {
    match spec {
        SystemSpec::Lorenz3 { alpha, rho, beta } => vec![
            vec![(vec![1, 0, 0], -alpha), (vec![0, 1, 0], *alpha)],
            vec![(vec![1, 0, 0], *rho), (vec![0, 1, 0], -1.0), (vec![1, 0, 1], -1.0)],
            vec![(vec![0, 0, 1], -beta), (vec![1, 1, 0], 1.0)],
        ],
        SystemSpec::Lorenz96 { j, f } => {
            let n = *j;
            let mut cols = Vec::with_capacity(n);
            for eq in 0..n {
                let e = |vars: &[usize]| {
                    let mut v = vec![0u32; n];
                    for &idx in vars {
                        v[idx % n] += 1;
                    }
                    v
                };
                let jp1 = (eq + 1) % n;
                let jm1 = (eq + n - 1) % n;
                let jm2 = (eq + n - 2) % n;
                cols.push(vec![
                    (vec![0; n], *f),
                    (e(&[jp1, jm1]), 1.0),
                    (e(&[jm2, jm1]), -1.0),
                    (e(&[eq]), -1.0),
                ]);
            }
            cols
        }
        SystemSpec::HopfNormal { omega, a, .. } => vec![
            // xdot = mu x - omega y + A x^3 + A x y^2   over (x, y, mu)
            vec![
                (vec![0, 1, 0], -omega),
                (vec![1, 0, 1], 1.0),
                (vec![3, 0, 0], *a),
                (vec![1, 2, 0], *a),
            ],
            // ydot = omega x + mu y + A x^2 y + A y^3
            vec![
                (vec![1, 0, 0], *omega),
                (vec![0, 1, 1], 1.0),
                (vec![2, 1, 0], *a),
                (vec![0, 3, 0], *a),
            ],
            // dummy: mudot = 0
            vec![],
        ],
        SystemSpec::LogisticMap { .. } => vec![
            // x_{n+1} = r x_n - r x_n^2   over (x, r)
            vec![(vec![1, 1], 1.0), (vec![2, 1], -1.0)],
            // dummy: r_{n+1} = r_n
            vec![(vec![0, 1], 1.0)],
        ],
        SystemSpec::CylinderMeanField { mu, omega, a, lambda } => vec![
            vec![(vec![1, 0, 0], *mu), (vec![0, 1, 0], -omega), (vec![1, 0, 1], *a)],
            vec![(vec![1, 0, 0], *omega), (vec![0, 1, 0], *mu), (vec![0, 1, 1], *a)],
            vec![(vec![0, 0, 1], -lambda), (vec![2, 0, 0], *lambda), (vec![0, 2, 0], *lambda)],
        ],
    }
}

/// Ground-truth sparse model expressed in the canonical dictionary of the
/// given degree over the dataset state columns.
pub fn ground_truth(spec: &SystemSpec, degree: usize) -> Result<GroundTruthModel> {
    spec.validate()?;
    let j = spec.dataset_dim();
    let dict = build_dictionary(j, degree, true);
    let mut support = Vec::new();
    let mut coeffs = Vec::new();
    let mut missing = Vec::new();
    for col_terms in true_terms(spec) {
        let mut pairs: Vec<(usize, f64)> = Vec::new();
        for (expo, coef) in col_terms {
            match dict.index_of(&expo) {
                Some(idx) => pairs.push((idx, coef)),
                None => {
                    let mut label = String::new();
                    for (v, &e) in expo.iter().enumerate() {
                        if e > 0 {
                            label.push_str(&format!("x{}^{} ", v + 1, e));
                        }
                    }
                    missing.push(label.trim().to_string());
                }
            }
        }
        pairs.sort_by_key(|&(i, _)| i);
        support.push(pairs.iter().map(|&(i, _)| i).collect());
        coeffs.push(pairs.iter().map(|&(_, c)| c).collect());
    }
    if !missing.is_empty() {
        return Err(Error::InsufficientDegree { degree, missing });
    }
    Ok(GroundTruthModel { dict, support, coeffs, dummy_columns: spec.dummy_columns() })
}

/// RHS over the augmented dataset columns at the system's minimal degree.
fn system_rhs(spec: &SystemSpec) -> SparseRhs {
    ground_truth(spec, spec.minimal_degree())
        .expect("minimal degree contains all true terms")
        .to_rhs()
}

pub(crate) fn rk4_step(rhs: &SparseRhs, x: &mut [f64], dt: f64, scratch: &mut [Vec<f64>]) {
    let n = x.len();
    let [k1, k2, k3, k4, tmp] = scratch else { panic!("scratch must have 5 buffers") };
    rhs.eval_into(x, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    rhs.eval_into(tmp, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    rhs.eval_into(tmp, k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    rhs.eval_into(tmp, k4);
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrate a continuous system with classical fixed-step RK4.
///
/// Stores states at every step and the analytic right-hand side evaluated at
/// each stored state as the derivative matrix.
pub fn integrate_ode(spec: &SystemSpec, x0: &[f64], dt: f64, t_end: f64) -> Result<TrajectoryDataset> {
    spec.validate()?;
    if spec.kind() != SystemKind::ContinuousOde {
        return Err(Error::invalid("integrate_ode requires a continuous system"));
    }
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::invalid("dt and t_end must be positive"));
    }
    if x0.len() != spec.state_dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} state entries", spec.state_dim()),
            got: format!("{}", x0.len()),
        });
    }
    // Hopf integrates in the augmented (x, y, mu) space with the dummy
    // equation mudot = 0; a singleton mu list fixes the parameter.
    let (rhs, mut x) = match spec {
        SystemSpec::HopfNormal { mus, .. } => {
            if mus.len() != 1 {
                return Err(Error::invalid(
                    "integrate_ode on hopf needs a single mu; use bifurcation_stack for sweeps",
                ));
            }
            let mut x = x0.to_vec();
            x.push(mus[0]);
            (system_rhs(spec), x)
        }
        _ => (system_rhs(spec), x0.to_vec()),
    };
    let n_steps = (t_end / dt).floor() as usize;
    let n = n_steps + 1;
    let dim = x.len();
    let mut states = Mat::zeros(n, dim);
    let mut scratch = vec![vec![0.0; dim]; 5];
    states.row_mut(0).copy_from_slice(&x);
    for step in 0..n_steps {
        rk4_step(&rhs, &mut x, dt, &mut scratch);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: (step + 1) as f64 * dt });
        }
        states.row_mut(step + 1).copy_from_slice(&x);
    }
    let mut derivs = Mat::zeros(n, dim);
    let mut dx = vec![0.0; dim];
    for i in 0..n {
        rhs.eval_into(states.row(i), &mut dx);
        derivs.row_mut(i).copy_from_slice(&dx);
    }
    let times = (0..n).map(|i| i as f64 * dt).collect();
    let (states, derivs, names) = if matches!(spec, SystemSpec::HopfNormal { .. }) {
        // Strip the parameter column for a plain single-mu run.
        let keep = [0usize, 1];
        (states.select_cols(&keep), derivs.select_cols(&keep), vec!["x".into(), "y".into()])
    } else {
        (states, derivs, spec.column_names())
    };
    Ok(TrajectoryDataset {
        times,
        states,
        derivs: Some(derivs),
        names,
        meta: DatasetMeta { system: Some(spec.clone()), dt: Some(dt), ..Default::default() },
    })
}

/// Iterate a discrete map with stochastic forcing.
///
/// Row n of the states holds (x_n, r); row n of the derivative matrix holds
/// the regression targets (x_{n+1}, r_{n+1}).
pub fn iterate_map(spec: &SystemSpec, x0: f64, steps: usize, seed: u64) -> Result<TrajectoryDataset> {
    spec.validate()?;
    let SystemSpec::LogisticMap { rs, sigma_eta } = spec else {
        return Err(Error::invalid("iterate_map requires a discrete map system"));
    };
    if rs.len() != 1 {
        return Err(Error::invalid(
            "iterate_map needs a single r; use bifurcation_stack for sweeps",
        ));
    }
    if steps < 1 {
        return Err(Error::invalid("steps must be >= 1"));
    }
    let r = rs[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Mat::zeros(steps, 2);
    let mut targets = Mat::zeros(steps, 2);
    let mut eta_mat = Mat::zeros(steps, 2);
    let mut x = x0;
    for n in 0..steps {
        let eta: f64 = if *sigma_eta > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma_eta * z
        } else {
            0.0
        };
        let next = r * x * (1.0 - x) + eta;
        states.set(n, 0, x);
        states.set(n, 1, r);
        targets.set(n, 0, next);
        targets.set(n, 1, r);
        eta_mat.set(n, 0, eta);
        x = next;
    }
    let noise = (*sigma_eta > 0.0).then(|| NoiseRecord {
        spec: NoiseSpec { noise_type: NoiseType::Type1OnDerivative, sigma: *sigma_eta, seed },
        matrix: eta_mat,
        surface: NoiseSurface::Derivatives,
    });
    Ok(TrajectoryDataset {
        times: (0..steps).map(|n| n as f64).collect(),
        states,
        derivs: Some(targets),
        names: vec!["x".into(), "r".into()],
        meta: DatasetMeta {
            system: Some(spec.clone()),
            seed: Some(seed),
            rng: Some(RNG_NAME.into()),
            noise,
            ..Default::default()
        },
    })
}

/// Per-parameter-value generation settings for bifurcation sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackConfig {
    pub x0: Vec<f64>,
    pub dt: f64,
    pub t_end: f64,
    pub steps: usize,
    pub seed: u64,
}

impl StackConfig {
    pub fn hopf_default() -> Self {
        StackConfig { x0: vec![2.0, 0.0], dt: 0.0025, t_end: 75.0, steps: 0, seed: 0 }
    }

    pub fn logistic_default(seed: u64) -> Self {
        StackConfig { x0: vec![0.5], dt: 1.0, t_end: 0.0, steps: 1000, seed }
    }
}

/// Concatenate per-parameter trajectories into one dataset whose state is
/// augmented with the bifurcation parameter as a constant column per segment.
pub fn bifurcation_stack(spec: &SystemSpec, cfg: &StackConfig) -> Result<TrajectoryDataset> {
    spec.validate()?;
    match spec {
        SystemSpec::HopfNormal { omega, a, mus } => {
            let mut all_states: Vec<Mat> = Vec::new();
            let mut all_derivs: Vec<Mat> = Vec::new();
            let mut times = Vec::new();
            let mut offset = 0.0;
            for &mu in mus {
                let single =
                    SystemSpec::HopfNormal { omega: *omega, a: *a, mus: vec![mu] };
                let traj = integrate_ode(&single, &cfg.x0, cfg.dt, cfg.t_end)?;
                let n = traj.n();
                let mut st = Mat::zeros(n, 3);
                let mut dv = Mat::zeros(n, 3);
                let derivs = traj.derivs.as_ref().expect("ode output has derivatives");
                for i in 0..n {
                    st.set(i, 0, traj.states.get(i, 0));
                    st.set(i, 1, traj.states.get(i, 1));
                    st.set(i, 2, mu);
                    dv.set(i, 0, derivs.get(i, 0));
                    dv.set(i, 1, derivs.get(i, 1));
                    dv.set(i, 2, 0.0);
                }
                times.extend(traj.times.iter().map(|t| t + offset));
                offset += cfg.t_end + cfg.dt;
                all_states.push(st);
                all_derivs.push(dv);
            }
            Ok(TrajectoryDataset {
                times,
                states: vstack(&all_states),
                derivs: Some(vstack(&all_derivs)),
                names: spec.column_names(),
                meta: DatasetMeta {
                    system: Some(spec.clone()),
                    dt: Some(cfg.dt),
                    ..Default::default()
                },
            })
        }
        SystemSpec::LogisticMap { rs, sigma_eta } => {
            let mut all_states = Vec::new();
            let mut all_targets = Vec::new();
            let mut all_eta = Vec::new();
            let mut times = Vec::new();
            let mut offset = 0.0;
            for (seg, &r) in rs.iter().enumerate() {
                let single = SystemSpec::LogisticMap { rs: vec![r], sigma_eta: *sigma_eta };
                let mut rng_seed = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng_seed.set_stream(seg as u64);
                // Each segment gets an independent, reproducible stream.
                let traj = iterate_map_with_rng(&single, cfg.x0[0], cfg.steps, rng_seed, cfg.seed)?;
                times.extend(traj.times.iter().map(|t| t + offset));
                offset += cfg.steps as f64;
                if let Some(noise) = traj.meta.noise {
                    all_eta.push(noise.matrix);
                }
                all_states.push(traj.states);
                all_targets.push(traj.derivs.expect("map output has targets"));
            }
            let noise = (!all_eta.is_empty()).then(|| NoiseRecord {
                spec: NoiseSpec {
                    noise_type: NoiseType::Type1OnDerivative,
                    sigma: *sigma_eta,
                    seed: cfg.seed,
                },
                matrix: vstack(&all_eta),
                surface: NoiseSurface::Derivatives,
            });
            Ok(TrajectoryDataset {
                times,
                states: vstack(&all_states),
                derivs: Some(vstack(&all_targets)),
                names: spec.column_names(),
                meta: DatasetMeta {
                    system: Some(spec.clone()),
                    seed: Some(cfg.seed),
                    rng: Some(RNG_NAME.into()),
                    noise,
                    ..Default::default()
                },
            })
        }
        _ => Err(Error::invalid("bifurcation_stack requires hopf or logistic")),
    }
}

fn iterate_map_with_rng(
    spec: &SystemSpec,
    x0: f64,
    steps: usize,
    mut rng: ChaCha8Rng,
    seed: u64,
) -> Result<TrajectoryDataset> {
    let SystemSpec::LogisticMap { rs, sigma_eta } = spec else {
        return Err(Error::invalid("expected logistic map"));
    };
    let r = rs[0];
    let mut states = Mat::zeros(steps, 2);
    let mut targets = Mat::zeros(steps, 2);
    let mut eta_mat = Mat::zeros(steps, 2);
    let mut x = x0;
    for n in 0..steps {
        let eta: f64 = if *sigma_eta > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma_eta * z
        } else {
            0.0
        };
        let next = r * x * (1.0 - x) + eta;
        states.set(n, 0, x);
        states.set(n, 1, r);
        targets.set(n, 0, next);
        targets.set(n, 1, r);
        eta_mat.set(n, 0, eta);
        x = next;
    }
    let noise = (*sigma_eta > 0.0).then(|| NoiseRecord {
        spec: NoiseSpec { noise_type: NoiseType::Type1OnDerivative, sigma: *sigma_eta, seed },
        matrix: eta_mat,
        surface: NoiseSurface::Derivatives,
    });
    Ok(TrajectoryDataset {
        times: (0..steps).map(|n| n as f64).collect(),
        states,
        derivs: Some(targets),
        names: vec!["x".into(), "r".into()],
        meta: DatasetMeta {
            system: Some(spec.clone()),
            seed: Some(seed),
            rng: Some(RNG_NAME.into()),
            noise,
            ..Default::default()
        },
    })
}

fn vstack(mats: &[Mat]) -> Mat {
    let cols = mats[0].cols();
    let rows: usize = mats.iter().map(|m| m.rows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for m in mats {
        for i in 0..m.rows() {
            out.row_mut(r).copy_from_slice(m.row(i));
            r += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lorenz3_initial_derivative() {
        let spec = SystemSpec::lorenz3();
        let traj = integrate_ode(&spec, &[-8.0, 8.0, 27.0], 0.001, 60.0).unwrap();
        assert_eq!(traj.n(), 60001);
        let d = traj.derivs.as_ref().unwrap();
        // rhs at x0: (alpha(y-x), x(rho-z)-y, xy-beta z) = (160, -16, -136)
        assert_abs_diff_eq!(d.get(0, 0), 160.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.get(0, 1), -16.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.get(0, 2), -136.0, epsilon = 1e-12);
    }

    #[test]
    fn lorenz96_full_scale_shape() {
        let spec = SystemSpec::lorenz96(96);
        let traj = integrate_ode(&spec, &spec.default_x0(), 0.01, 600.0).unwrap();
        assert_eq!(traj.n(), 60001);
        assert_eq!(traj.j(), 96);
    }

    #[test]
    fn hopf_origin_is_fixed_point() {
        let spec = SystemSpec::HopfNormal { omega: 1.0, a: -1.0, mus: vec![0.0] };
        let traj = integrate_ode(&spec, &[0.0, 0.0], 0.01, 1.0).unwrap();
        assert!(traj.states.iter().all(|v| v == 0.0));
    }

    #[test]
    fn derivatives_match_rhs_bitwise() {
        let spec = SystemSpec::lorenz3();
        let traj = integrate_ode(&spec, &[-8.0, 8.0, 27.0], 0.01, 1.0).unwrap();
        let rhs = system_rhs(&spec);
        let d = traj.derivs.as_ref().unwrap();
        let mut out = vec![0.0; 3];
        for i in 0..traj.n() {
            rhs.eval_into(traj.states.row(i), &mut out);
            assert_eq!(&out[..], d.row(i));
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let spec = SystemSpec::lorenz3();
        let x0 = [-8.0, 8.0, 27.0];
        let reference = integrate_ode(&spec, &x0, 0.0005, 1.0).unwrap();
        let coarse = integrate_ode(&spec, &x0, 0.004, 1.0).unwrap();
        let fine = integrate_ode(&spec, &x0, 0.002, 1.0).unwrap();
        let err = |traj: &TrajectoryDataset, stride: usize| -> f64 {
            let mut e: f64 = 0.0;
            for i in 0..traj.n() {
                let r = reference.states.row(i * stride);
                let s = traj.states.row(i);
                for j in 0..3 {
                    e = e.max((r[j] - s[j]).abs());
                }
            }
            e
        };
        let e_coarse = err(&coarse, 8);
        let e_fine = err(&fine, 4);
        assert!(
            e_coarse / e_fine >= 8.0,
            "halving dt reduced error only {:.2}x",
            e_coarse / e_fine
        );
    }

    #[test]
    fn divergence_is_reported() {
        // Huge step on a cubic-growth system blows up quickly.
        let spec = SystemSpec::lorenz3();
        let r = integrate_ode(&spec, &[1e100, 1e100, 1e100], 0.5, 10.0);
        assert!(matches!(r, Err(Error::Divergence { .. })));
    }

    #[test]
    fn logistic_map_arithmetic() {
        let spec = SystemSpec::LogisticMap { rs: vec![4.0], sigma_eta: 0.0 };
        let traj = iterate_map(&spec, 0.5, 4, 0).unwrap();
        let t = traj.derivs.as_ref().unwrap();
        assert_eq!(t.get(0, 0), 1.0);
        assert_eq!(t.get(1, 0), 0.0);
        assert_eq!(t.get(2, 0), 0.0);
        // fixed point at r=2
        let spec2 = SystemSpec::LogisticMap { rs: vec![2.0], sigma_eta: 0.0 };
        let traj2 = iterate_map(&spec2, 0.5, 10, 0).unwrap();
        assert!(traj2.states.col(0).iter().all(|&x| x == 0.5));
    }

    #[test]
    fn seeded_map_is_reproducible() {
        let spec = SystemSpec::LogisticMap { rs: vec![3.9], sigma_eta: 0.001 };
        let a = iterate_map(&spec, 0.5, 200, 42).unwrap();
        let b = iterate_map(&spec, 0.5, 200, 42).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.derivs, b.derivs);
        let c = iterate_map(&spec, 0.5, 200, 43).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn hopf_stack_shape() {
        let spec = SystemSpec::hopf_default();
        let cfg = StackConfig { t_end: 1.0, ..StackConfig::hopf_default() };
        let traj = bifurcation_stack(&spec, &cfg).unwrap();
        assert_eq!(traj.n(), 14 * 401);
        assert_eq!(traj.j(), 3);
        assert_eq!(traj.names, vec!["x", "y", "mu"]);
        traj.validate().unwrap();
        // parameter column constant within each segment
        for seg in 0..14 {
            let mu0 = traj.states.get(seg * 401, 2);
            for i in 0..401 {
                assert_eq!(traj.states.get(seg * 401 + i, 2), mu0);
            }
        }
    }

    #[test]
    fn logistic_stack_shape() {
        let spec = SystemSpec::logistic_default(0.0);
        let cfg = StackConfig { steps: 100, ..StackConfig::logistic_default(7) };
        let traj = bifurcation_stack(&spec, &cfg).unwrap();
        assert_eq!(traj.n(), 1000);
        assert_eq!(traj.j(), 2);
        traj.validate().unwrap();
    }

    #[test]
    fn single_mu_stack_matches_plain_integration() {
        let spec = SystemSpec::HopfNormal { omega: 1.0, a: -1.0, mus: vec![0.25] };
        let cfg = StackConfig { t_end: 2.0, ..StackConfig::hopf_default() };
        let stacked = bifurcation_stack(&spec, &cfg).unwrap();
        let plain = integrate_ode(&spec, &[2.0, 0.0], cfg.dt, cfg.t_end).unwrap();
        assert_eq!(stacked.n(), plain.n());
        for i in 0..plain.n() {
            assert_eq!(stacked.states.get(i, 0), plain.states.get(i, 0));
            assert_eq!(stacked.states.get(i, 1), plain.states.get(i, 1));
            assert_eq!(stacked.states.get(i, 2), 0.25);
        }
    }

    #[test]
    fn ground_truth_supports() {
        let l3 = ground_truth(&SystemSpec::lorenz3(), 5).unwrap();
        assert_eq!(l3.support_counts(), vec![2, 3, 2]);
        // xdot column: exactly {x: -10, y: 10}
        let dict = &l3.dict;
        let ix = dict.index_of(&[1, 0, 0]).unwrap();
        let iy = dict.index_of(&[0, 1, 0]).unwrap();
        assert_eq!(l3.support[0], vec![ix, iy]);
        assert_eq!(l3.coeffs[0], vec![-10.0, 10.0]);

        let l96 = ground_truth(&SystemSpec::lorenz96(8), 2).unwrap();
        assert_eq!(l96.support_counts(), vec![4; 8]);
        for col in 0..8 {
            assert_eq!(l96.support[col][0], 0); // constant F first in canonical order
            assert_eq!(l96.coeffs[col][0], 8.0);
        }

        let hopf = ground_truth(&SystemSpec::hopf_default(), 3).unwrap();
        assert_eq!(hopf.support_counts(), vec![4, 4, 0]);
        assert_eq!(hopf.dummy_columns, vec![2]);
        // xdot = -y + mu x - x^3 - x y^2 with omega=1, A=-1
        assert_eq!(hopf.coeffs[0], vec![-1.0, 1.0, -1.0, -1.0]);

        let logi = ground_truth(&SystemSpec::logistic_default(0.0), 3).unwrap();
        assert_eq!(logi.support_counts(), vec![2, 1]);

        let cyl = ground_truth(&SystemSpec::cylinder_default(), 2).unwrap();
        assert_eq!(cyl.support_counts(), vec![3, 3, 3]);
    }

    #[test]
    fn ground_truth_rejects_low_degree() {
        match ground_truth(&SystemSpec::lorenz3(), 1) {
            Err(Error::InsufficientDegree { missing, .. }) => assert!(!missing.is_empty()),
            other => panic!("expected InsufficientDegree, got {other:?}"),
        }
        assert!(matches!(
            ground_truth(&SystemSpec::logistic_default(0.0), 2),
            Err(Error::InsufficientDegree { .. })
        ));
    }

    #[test]
    fn lorenz96_requires_j4() {
        assert!(SystemSpec::lorenz96(3).validate().is_err());
        assert!(SystemSpec::lorenz96(4).validate().is_ok());
    }
}
