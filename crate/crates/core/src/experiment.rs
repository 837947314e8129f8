//! Declarative experiment configuration and the operations behind the CLI
//! subcommands: dataset generation, corruption, differentiation, discovery,
//! evaluation, and benchmark sweeps.
//!
//! Configs are strict JSON (unknown keys rejected). `resolve` fills every
//! default in place, and the resolved config is written next to the outputs
//! so a run can be reproduced from it byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dictionary::StandardizeMode;
use crate::derivatives::{differentiate_dataset, differentiate_dataset_fd, select_alpha, TvdConfig};
use crate::error::{Error, Result};
use crate::evaluation::{recovery_metric, table_report, TableRow};
use crate::io::{read_trajectory_csv, write_trajectory_csv};
use crate::linalg::Mat;
use crate::noise::{corrupt_skipping, snr, NoiseSpec, NoiseType};
use crate::pipeline::{discover_with_diagnostics, stlsq_baseline, PipelineConfig, SparseModel};
use crate::screen::ScreeningConfig;
use crate::systems::{
    bifurcation_stack, ground_truth, integrate_ode, iterate_map, GroundTruthModel, StackConfig,
    SystemKind, SystemSpec, TrajectoryDataset,
};
use crate::tuning::{SolverBudgets, TuningConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemName {
    Lorenz3,
    Lorenz96,
    Hopf,
    Logistic,
    Cylinder,
}

/// System selection and parameters; unset fields take the benchmark
/// defaults for the named system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SystemBlock {
    pub name: Option<SystemName>,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub beta: Option<f64>,
    pub j: Option<usize>,
    pub f: Option<f64>,
    pub omega: Option<f64>,
    pub a: Option<f64>,
    pub mus: Option<Vec<f64>>,
    pub rs: Option<Vec<f64>>,
    pub sigma_eta: Option<f64>,
    pub mu: Option<f64>,
    pub lambda: Option<f64>,
}

impl SystemBlock {
    fn name(&self) -> Result<SystemName> {
        self.name.ok_or_else(|| Error::config("system.name is required"))
    }

    fn reject(&self, allowed: &[&str]) -> Result<()> {
        let fields: [(&str, bool); 12] = [
            ("alpha", self.alpha.is_some()),
            ("rho", self.rho.is_some()),
            ("beta", self.beta.is_some()),
            ("j", self.j.is_some()),
            ("f", self.f.is_some()),
            ("omega", self.omega.is_some()),
            ("a", self.a.is_some()),
            ("mus", self.mus.is_some()),
            ("rs", self.rs.is_some()),
            ("sigma_eta", self.sigma_eta.is_some()),
            ("mu", self.mu.is_some()),
            ("lambda", self.lambda.is_some()),
        ];
        for (name, set) in fields {
            if set && !allowed.contains(&name) {
                return Err(Error::config(format!(
                    "system parameter '{name}' does not apply to this system"
                )));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<SystemSpec> {
        let spec = match self.name()? {
            SystemName::Lorenz3 => {
                self.reject(&["alpha", "rho", "beta"])?;
                SystemSpec::Lorenz3 {
                    alpha: self.alpha.unwrap_or(10.0),
                    rho: self.rho.unwrap_or(28.0),
                    beta: self.beta.unwrap_or(8.0 / 3.0),
                }
            }
            SystemName::Lorenz96 => {
                self.reject(&["j", "f"])?;
                SystemSpec::Lorenz96 { j: self.j.unwrap_or(8), f: self.f.unwrap_or(8.0) }
            }
            SystemName::Hopf => {
                self.reject(&["omega", "a", "mus"])?;
                let dflt = SystemSpec::hopf_default();
                let SystemSpec::HopfNormal { mus, .. } = &dflt else { unreachable!() };
                SystemSpec::HopfNormal {
                    omega: self.omega.unwrap_or(1.0),
                    a: self.a.unwrap_or(-1.0),
                    mus: self.mus.clone().unwrap_or_else(|| mus.clone()),
                }
            }
            SystemName::Logistic => {
                self.reject(&["rs", "sigma_eta"])?;
                let dflt = SystemSpec::logistic_default(0.0);
                let SystemSpec::LogisticMap { rs, .. } = &dflt else { unreachable!() };
                SystemSpec::LogisticMap {
                    rs: self.rs.clone().unwrap_or_else(|| rs.clone()),
                    sigma_eta: self.sigma_eta.unwrap_or(0.0),
                }
            }
            SystemName::Cylinder => {
                self.reject(&["mu", "omega", "a", "lambda"])?;
                SystemSpec::CylinderMeanField {
                    mu: self.mu.unwrap_or(0.1),
                    omega: self.omega.unwrap_or(1.0),
                    a: self.a.unwrap_or(-1.0),
                    lambda: self.lambda.unwrap_or(10.0),
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    fn resolve(&mut self) -> Result<()> {
        let spec = self.build()?;
        match spec {
            SystemSpec::Lorenz3 { alpha, rho, beta } => {
                self.alpha = Some(alpha);
                self.rho = Some(rho);
                self.beta = Some(beta);
            }
            SystemSpec::Lorenz96 { j, f } => {
                self.j = Some(j);
                self.f = Some(f);
            }
            SystemSpec::HopfNormal { omega, a, mus } => {
                self.omega = Some(omega);
                self.a = Some(a);
                self.mus = Some(mus);
            }
            SystemSpec::LogisticMap { rs, sigma_eta } => {
                self.rs = Some(rs);
                self.sigma_eta = Some(sigma_eta);
            }
            SystemSpec::CylinderMeanField { mu, omega, a, lambda } => {
                self.mu = Some(mu);
                self.omega = Some(omega);
                self.a = Some(a);
                self.lambda = Some(lambda);
            }
        }
        Ok(())
    }
}

/// Sampling settings for trajectory generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataBlock {
    pub x0: Option<Vec<f64>>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub steps: Option<usize>,
}

impl DataBlock {
    fn resolve(&mut self, spec: &SystemSpec) {
        let (dt, t_end, steps) = match spec {
            SystemSpec::Lorenz3 { .. } => (0.001, 60.0, 0),
            SystemSpec::Lorenz96 { .. } => (0.01, 600.0, 0),
            SystemSpec::HopfNormal { .. } => (0.0025, 75.0, 0),
            SystemSpec::LogisticMap { .. } => (1.0, 0.0, 1000),
            SystemSpec::CylinderMeanField { .. } => (0.01, 50.0, 0),
        };
        self.dt.get_or_insert(dt);
        self.t_end.get_or_insert(t_end);
        self.steps.get_or_insert(steps);
        self.x0.get_or_insert_with(|| spec.default_x0());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseBlock {
    pub noise_type: NoiseType,
    pub sigma: f64,
}

impl Default for NoiseBlock {
    fn default() -> Self {
        NoiseBlock { noise_type: NoiseType::Type1OnDerivative, sigma: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DerivMethod {
    /// Use the derivative columns already in the dataset.
    #[default]
    Measured,
    FiniteDifference,
    Tvd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DerivativeBlock {
    pub method: DerivMethod,
    pub tvd: TvdConfig,
    /// Select tvd.alpha per dataset from `alpha_grid` by held-out parity CV.
    pub auto_alpha: bool,
    pub alpha_grid: Vec<f64>,
}

impl Default for DerivativeBlock {
    fn default() -> Self {
        DerivativeBlock {
            method: DerivMethod::Measured,
            tvd: TvdConfig::default(),
            auto_alpha: false,
            alpha_grid: vec![1e-4, 1e-3, 1e-2, 1e-1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DictionaryBlock {
    pub degree: Option<usize>,
    pub include_constant: Option<bool>,
}

impl DictionaryBlock {
    fn resolve(&mut self, spec: &SystemSpec) {
        let degree = match spec {
            SystemSpec::Lorenz3 { .. } => 5,
            SystemSpec::Lorenz96 { .. } => 2,
            SystemSpec::HopfNormal { .. } => 3,
            SystemSpec::LogisticMap { .. } => 3,
            SystemSpec::CylinderMeanField { .. } => 2,
        };
        self.degree.get_or_insert(degree);
        self.include_constant.get_or_insert(true);
    }
}

/// Baseline (sequentially thresholded ridge) settings for benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineBlock {
    pub threshold: f64,
    pub ridge: f64,
    pub max_iters: usize,
}

impl Default for BaselineBlock {
    fn default() -> Self {
        BaselineBlock { threshold: 0.1, ridge: 0.05, max_iters: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkBlock {
    pub sigmas: Vec<f64>,
    pub noise_type: NoiseType,
}

impl Default for BenchmarkBlock {
    fn default() -> Self {
        BenchmarkBlock { sigmas: Vec::new(), noise_type: NoiseType::Type1OnDerivative }
    }
}

/// Full declarative description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub system: SystemBlock,
    pub data: DataBlock,
    pub noise: Option<NoiseBlock>,
    pub derivative: DerivativeBlock,
    pub dictionary: DictionaryBlock,
    pub screening: ScreeningConfig,
    pub tuning: TuningConfig,
    pub solver: SolverBudgets,
    pub standardize: StandardizeMode,
    pub baseline: BaselineBlock,
    pub seeds: Vec<u64>,
    pub benchmark: Option<BenchmarkBlock>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            system: SystemBlock::default(),
            data: DataBlock::default(),
            noise: None,
            derivative: DerivativeBlock::default(),
            dictionary: DictionaryBlock::default(),
            screening: ScreeningConfig::default(),
            tuning: TuningConfig::default(),
            solver: SolverBudgets::default(),
            standardize: StandardizeMode::default(),
            baseline: BaselineBlock::default(),
            seeds: vec![0],
            benchmark: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("config parse: {e}")))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fill every default in place and validate.
    pub fn resolve(&mut self) -> Result<()> {
        self.system.resolve()?;
        let spec = self.system.build()?;
        self.data.resolve(&spec);
        self.dictionary.resolve(&spec);
        self.screening.validate()?;
        self.tuning.validate()?;
        if self.seeds.is_empty() {
            self.seeds.push(0);
        }
        // Type 2 noise clears measured derivatives; they have to be
        // recomputed, so "measured" silently upgrades to TVD.
        let wants_type2 = self.noise.map(|n| n.noise_type == NoiseType::Type2OnState).unwrap_or(false)
            || self
                .benchmark
                .as_ref()
                .map(|b| b.noise_type == NoiseType::Type2OnState)
                .unwrap_or(false);
        if wants_type2 && self.derivative.method == DerivMethod::Measured {
            self.derivative.method = DerivMethod::Tvd;
        }
        if let Some(n) = &self.noise {
            if !n.sigma.is_finite() || n.sigma < 0.0 {
                return Err(Error::config("noise.sigma must be finite and >= 0"));
            }
        }
        // Noise-free data has no error floor, so the lambda2 grid must reach
        // effectively-unregularized selection for exact recovery.
        let noiseless = self.noise.map(|n| n.sigma == 0.0).unwrap_or(true)
            && self.benchmark.is_none()
            && !matches!(
                self.system.name,
                Some(SystemName::Logistic) if self.system.sigma_eta.unwrap_or(0.0) > 0.0
            );
        if noiseless {
            self.tuning.r_override.get_or_insert(1e-12);
        }
        Ok(())
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        self.system.build()
    }

    pub fn pipeline_config(&self, spec: &SystemSpec) -> PipelineConfig {
        PipelineConfig {
            degree: self.dictionary.degree.unwrap_or(spec.minimal_degree()),
            include_constant: self.dictionary.include_constant.unwrap_or(true),
            standardize_mode: self.standardize,
            screening: self.screening,
            tuning: self.tuning,
            budgets: self.solver,
            dummy_columns: spec.dummy_columns(),
        }
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// A generated (clean, corrupted) dataset pair. For discrete maps the
/// forcing is part of generation, so `clean` is absent and the realized
/// noise record on `noisy` carries the injected forcing.
#[derive(Debug, Clone)]
pub struct Generated {
    pub clean: Option<TrajectoryDataset>,
    pub noisy: TrajectoryDataset,
}

/// Generate the clean dataset for a config (ODE systems only).
pub fn generate_clean(cfg: &ExperimentConfig) -> Result<Option<TrajectoryDataset>> {
    let spec = cfg.system_spec()?;
    let data = &cfg.data;
    match &spec {
        SystemSpec::LogisticMap { .. } => Ok(None),
        SystemSpec::HopfNormal { .. } => {
            let stack = StackConfig {
                x0: data.x0.clone().unwrap_or_else(|| spec.default_x0()),
                dt: data.dt.unwrap_or(0.0025),
                t_end: data.t_end.unwrap_or(75.0),
                steps: 0,
                seed: cfg.seeds[0],
            };
            Ok(Some(bifurcation_stack(&spec, &stack)?))
        }
        _ => {
            let x0 = data.x0.clone().unwrap_or_else(|| spec.default_x0());
            Ok(Some(integrate_ode(
                &spec,
                &x0,
                data.dt.unwrap_or(0.01),
                data.t_end.unwrap_or(10.0),
            )?))
        }
    }
}

/// Recompute derivatives according to the derivative block.
fn apply_derivative_method(cfg: &ExperimentConfig, data: TrajectoryDataset) -> Result<TrajectoryDataset> {
    match cfg.derivative.method {
        DerivMethod::Measured => {
            if data.derivs.is_none() {
                return Err(Error::MissingDerivatives);
            }
            Ok(data)
        }
        DerivMethod::FiniteDifference => differentiate_dataset_fd(&data),
        DerivMethod::Tvd => {
            let mut tvd = cfg.derivative.tvd;
            if cfg.derivative.auto_alpha {
                let dt = data.times[1] - data.times[0];
                tvd.alpha = select_alpha(&data.states.col(0), dt, &cfg.derivative.alpha_grid, &tvd)?;
            }
            differentiate_dataset(&data, &tvd)
        }
    }
}

/// Build the dataset for one (sigma, seed) cell, reusing a pre-generated
/// clean trajectory when available.
pub fn build_dataset(
    cfg: &ExperimentConfig,
    base: Option<&TrajectoryDataset>,
    noise: Option<NoiseBlock>,
    seed: u64,
) -> Result<Generated> {
    let spec = cfg.system_spec()?;
    if let SystemSpec::LogisticMap { rs, sigma_eta } = &spec {
        let sigma = noise.map(|n| n.sigma).unwrap_or(*sigma_eta);
        let noisy_spec = SystemSpec::LogisticMap { rs: rs.clone(), sigma_eta: sigma };
        let steps = cfg.data.steps.unwrap_or(1000);
        let x0 = cfg.data.x0.clone().unwrap_or_else(|| vec![0.5]);
        let noisy = if rs.len() == 1 {
            iterate_map(&noisy_spec, x0[0], steps, seed)?
        } else {
            let stack = StackConfig { x0, dt: 1.0, t_end: 0.0, steps, seed };
            bifurcation_stack(&noisy_spec, &stack)?
        };
        return Ok(Generated { clean: None, noisy });
    }
    let clean = match base {
        Some(b) => b.clone(),
        None => generate_clean(cfg)?.expect("continuous system generates a trajectory"),
    };
    let noisy = match noise {
        None => clean.clone(),
        Some(n) => {
            let spec_noise = NoiseSpec { noise_type: n.noise_type, sigma: n.sigma, seed };
            let corrupted = corrupt_skipping(&clean, &spec_noise, &spec.dummy_columns())?;
            match n.noise_type {
                NoiseType::Type1OnDerivative => corrupted,
                NoiseType::Type2OnState => apply_derivative_method(cfg, corrupted)?,
            }
        }
    };
    Ok(Generated { clean: Some(clean), noisy })
}

/// Realized averaged SNR over the non-dummy columns, from the noise record.
pub fn realized_snr(gen: &Generated, spec: &SystemSpec) -> Result<Option<f64>> {
    let Some(record) = &gen.noisy.meta.noise else {
        return Ok(None);
    };
    if record.spec.sigma == 0.0 {
        return Ok(None);
    }
    let dummy = spec.dummy_columns();
    let keep: Vec<usize> = (0..gen.noisy.j()).filter(|c| !dummy.contains(c)).collect();
    let noise = record.matrix.select_cols(&keep);
    let signal: Mat = match spec.kind() {
        SystemKind::DiscreteMap => {
            // signal = realized next-state sequence minus the forcing
            let targets = gen.noisy.derivs.as_ref().ok_or(Error::MissingDerivatives)?;
            let mut s = targets.select_cols(&keep);
            let nsel = record.matrix.select_cols(&keep);
            for i in 0..s.rows() {
                for c in 0..s.cols() {
                    let v = s.get(i, c) - nsel.get(i, c);
                    s.set(i, c, v);
                }
            }
            s
        }
        SystemKind::ContinuousOde => {
            let clean = gen.clean.as_ref().ok_or_else(|| Error::invalid("missing clean data"))?;
            match record.spec.noise_type {
                NoiseType::Type1OnDerivative => {
                    clean.derivs.as_ref().ok_or(Error::MissingDerivatives)?.select_cols(&keep)
                }
                NoiseType::Type2OnState => clean.states.select_cols(&keep),
            }
        }
    };
    snr(&signal, &noise).map(Some)
}

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn write_effective_config(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let path = out.join("effective_config.json");
    fs::write(&path, cfg.to_pretty_json())?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
struct DatasetMetaJson {
    system: SystemSpec,
    seed: u64,
    rng: &'static str,
    n: usize,
    j: usize,
    columns: Vec<String>,
    noise: Option<NoiseBlock>,
    realized_snr: Option<f64>,
}

/// `generate`: write the clean (and, with a noise block, corrupted) dataset
/// plus a metadata sidecar.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let spec = cfg.system_spec()?;
    let seed = cfg.seeds[0];
    let gen = build_dataset(cfg, None, cfg.noise, seed)?;
    let mut written = Vec::new();
    let stem = spec.name();
    if let Some(clean) = &gen.clean {
        let path = out.join(format!("{stem}_clean.csv"));
        write_trajectory_csv(clean, &path)?;
        written.push(path);
    }
    if cfg.noise.is_some() || gen.clean.is_none() {
        let path = out.join(format!("{stem}_noisy.csv"));
        write_trajectory_csv(&gen.noisy, &path)?;
        written.push(path);
    }
    let meta = DatasetMetaJson {
        system: spec.clone(),
        seed,
        rng: crate::systems::RNG_NAME,
        n: gen.noisy.n(),
        j: gen.noisy.j(),
        columns: gen.noisy.names.clone(),
        noise: cfg.noise,
        realized_snr: realized_snr(&gen, &spec)?,
    };
    let meta_path = out.join(format!("{stem}_meta.json"));
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;
    written.push(meta_path);
    write_effective_config(cfg, out)?;
    Ok(written)
}

/// `corrupt`: read a trajectory CSV, inject noise, write the noisy CSV.
pub fn cmd_corrupt(cfg: &ExperimentConfig, data_path: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let noise = cfg.noise.ok_or_else(|| Error::config("corrupt requires a noise block"))?;
    let data = read_trajectory_csv(data_path)?;
    ensure_dir(out)?;
    let spec = NoiseSpec { noise_type: noise.noise_type, sigma: noise.sigma, seed: cfg.seeds[0] };
    let noisy = corrupt_skipping(&data, &spec, &[])?;
    let stem = data_path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    let path = out.join(format!("{stem}_noisy.csv"));
    write_trajectory_csv(&noisy, &path)?;
    write_effective_config(cfg, out)?;
    Ok(vec![path])
}

/// `differentiate`: recompute derivative columns from states.
pub fn cmd_differentiate(cfg: &ExperimentConfig, data_path: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let data = read_trajectory_csv(data_path)?;
    ensure_dir(out)?;
    let mut cfg = cfg.clone();
    if cfg.derivative.method == DerivMethod::Measured {
        cfg.derivative.method = DerivMethod::Tvd;
    }
    let with_derivs = apply_derivative_method(&cfg, data)?;
    let stem = data_path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    let path = out.join(format!("{stem}_derivs.csv"));
    write_trajectory_csv(&with_derivs, &path)?;
    write_effective_config(&cfg, out)?;
    Ok(vec![path])
}

#[derive(Debug)]
pub struct DiscoverOutput {
    pub model_path: PathBuf,
    pub model: SparseModel,
    pub failed_equations: Vec<String>,
}

/// `discover`: run the pipeline on a dataset (from disk or generated per the
/// config) and write the model JSON plus per-equation tuning heatmaps.
pub fn cmd_discover(
    cfg: &ExperimentConfig,
    data_path: Option<&Path>,
    out: &Path,
    verbose: bool,
) -> Result<DiscoverOutput> {
    let spec = cfg.system_spec()?;
    let data = match data_path {
        Some(p) => {
            let raw = read_trajectory_csv(p)?;
            apply_derivative_method(cfg, raw)?
        }
        None => build_dataset(cfg, None, cfg.noise, cfg.seeds[0])?.noisy,
    };
    ensure_dir(out)?;
    let pipeline_cfg = cfg.pipeline_config(&spec);
    let (model, diags) = discover_with_diagnostics(&data, &pipeline_cfg, verbose)?;
    let model_path = out.join("model.json");
    fs::write(&model_path, serde_json::to_string_pretty(&model.to_json())?)?;
    for (j, diag) in diags.iter().enumerate() {
        if let Some(tuning) = &diag.tuning {
            fs::write(out.join(format!("tuning_eq{j}.csv")), tuning.heatmap_csv())?;
        }
        if let Some(log) = &diag.node_log {
            fs::write(out.join(format!("solver_eq{j}.csv")), log)?;
        }
    }
    write_effective_config(cfg, out)?;
    let failed = model
        .equations
        .iter()
        .filter(|e| !e.status.is_ok())
        .map(|e| e.target.clone())
        .collect();
    Ok(DiscoverOutput { model_path, model, failed_equations: failed })
}

#[derive(Debug, Clone, Serialize)]
struct RecoveryJson {
    a: usize,
    j_effective: usize,
    matches: Vec<bool>,
    excluded: Vec<usize>,
    coefficients: Vec<CoeffJson>,
}

#[derive(Debug, Clone, Serialize)]
struct CoeffJson {
    equation: usize,
    label: String,
    truth: f64,
    estimate: f64,
    abs_err: f64,
    rel_err: f64,
}

/// `evaluate`: compare a model JSON against the configured system's ground
/// truth; write a recovery report.
pub fn cmd_evaluate(cfg: &ExperimentConfig, model_path: &Path, out: &Path) -> Result<PathBuf> {
    let text = fs::read_to_string(model_path)?;
    let json: crate::pipeline::ModelJson = serde_json::from_str(&text)?;
    let model = SparseModel::from_json(&json)?;
    let spec = cfg.system_spec()?;
    let degree = cfg.dictionary.degree.unwrap_or(spec.minimal_degree());
    let truth = ground_truth(&spec, degree)?;
    let report = recovery_metric(&model, &truth, &truth.dummy_columns)?;
    ensure_dir(out)?;
    let j_effective = model.equations.len() - truth.dummy_columns.len();
    let out_json = RecoveryJson {
        a: report.a,
        j_effective,
        matches: report.matches.clone(),
        excluded: report.excluded.clone(),
        coefficients: report
            .coeff_errors
            .iter()
            .map(|c| CoeffJson {
                equation: c.equation,
                label: c.label.clone(),
                truth: c.truth,
                estimate: c.estimate,
                abs_err: c.abs_err,
                rel_err: c.rel_err,
            })
            .collect(),
    };
    let path = out.join("recovery.json");
    fs::write(&path, serde_json::to_string_pretty(&out_json)?)?;
    Ok(path)
}

#[derive(Debug)]
pub struct BenchmarkOutput {
    pub tables: Vec<PathBuf>,
    pub failures: Vec<String>,
}

/// One benchmark cell: corrupt at sigma/seed, run both methods, count
/// recovered equations.
fn benchmark_cell(
    cfg: &ExperimentConfig,
    spec: &SystemSpec,
    truth: &GroundTruthModel,
    base: Option<&TrajectoryDataset>,
    sigma: f64,
    seed: u64,
    noise_type: NoiseType,
) -> Result<TableRow> {
    let noise = NoiseBlock { noise_type, sigma };
    let gen = build_dataset(cfg, base, Some(noise), seed)?;
    let snr = realized_snr(&gen, spec)?.unwrap_or(f64::INFINITY);
    let mut pipeline_cfg = cfg.pipeline_config(spec);
    if sigma == 0.0 {
        pipeline_cfg.tuning.r_override.get_or_insert(1e-12);
    }
    let model = crate::pipeline::discover(&gen.noisy, &pipeline_cfg)?;
    let a_subset = recovery_metric(&model, truth, &truth.dummy_columns)?.a;
    let degree = pipeline_cfg.degree;
    let baseline = stlsq_baseline(
        &gen.noisy,
        degree,
        cfg.baseline.threshold,
        cfg.baseline.ridge,
        cfg.baseline.max_iters,
    )?;
    let a_baseline = recovery_metric(&baseline, truth, &truth.dummy_columns)?.a;
    Ok(TableRow { sigma, snr, a_baseline, a_subset })
}

/// `benchmark`: sweep the configured sigma list (per seed), writing one table
/// CSV per seed. Failed cells are skipped and reported in the error manifest.
pub fn cmd_benchmark(cfg: &ExperimentConfig, out: &Path) -> Result<BenchmarkOutput> {
    let bench = cfg
        .benchmark
        .as_ref()
        .ok_or_else(|| Error::config("benchmark requires a benchmark block"))?;
    if bench.sigmas.is_empty() {
        return Err(Error::config("benchmark.sigmas must be non-empty"));
    }
    let spec = cfg.system_spec()?;
    let degree = cfg.dictionary.degree.unwrap_or(spec.minimal_degree());
    let truth = ground_truth(&spec, degree)?;
    ensure_dir(out)?;
    let base = generate_clean(cfg)?;
    let noise_type = bench.noise_type;

    let mut tables = Vec::new();
    let mut failures = Vec::new();
    for &seed in &cfg.seeds {
        let cells = crate::exec::map_indices(bench.sigmas.len(), |i| {
            let sigma = bench.sigmas[i];
            benchmark_cell(cfg, &spec, &truth, base.as_ref(), sigma, seed, noise_type)
                .map_err(|e| format!("sigma={sigma} seed={seed}: {e}"))
        });
        let mut rows = Vec::new();
        for cell in cells {
            match cell {
                Ok(row) => rows.push(row),
                Err(msg) => failures.push(msg),
            }
        }
        if rows.is_empty() {
            continue;
        }
        let label = match (spec.kind(), noise_type) {
            (SystemKind::DiscreteMap, _) => "map",
            (_, NoiseType::Type1OnDerivative) => "type1",
            (_, NoiseType::Type2OnState) => "type2",
        };
        let path = out.join(format!("benchmark_{}_{}_seed{}.csv", spec.name(), label, seed));
        fs::write(&path, table_report(&rows)?)?;
        tables.push(path);
    }
    write_effective_config(cfg, out)?;
    if !failures.is_empty() {
        write_error_manifest(out, &failures)?;
    }
    Ok(BenchmarkOutput { tables, failures })
}

/// Machine-readable error list written next to partial outputs.
pub fn write_error_manifest(out: &Path, errors: &[String]) -> Result<PathBuf> {
    let path = out.join("error_manifest.json");
    let body = serde_json::json!({ "errors": errors });
    fs::write(&path, serde_json::to_string_pretty(&body)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys() {
        let text = r#"{"system": {"name": "lorenz3"}, "not_a_key": 1}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))));
    }

    #[test]
    fn config_rejects_foreign_params() {
        let text = r#"{"system": {"name": "lorenz3", "j": 8}}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
    }

    #[test]
    fn config_defaults_resolve() {
        let cfg = ExperimentConfig::from_json(r#"{"system": {"name": "lorenz3"}}"#).unwrap();
        assert_eq!(cfg.data.dt, Some(0.001));
        assert_eq!(cfg.data.t_end, Some(60.0));
        assert_eq!(cfg.dictionary.degree, Some(5));
        assert_eq!(cfg.seeds, vec![0]);
        let spec = cfg.system_spec().unwrap();
        assert_eq!(spec.name(), "lorenz3");
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::from_json(
            r#"{"system": {"name": "logistic", "sigma_eta": 0.1}, "data": {"steps": 50}}"#,
        )
        .unwrap();
        let text = cfg.to_pretty_json();
        let cfg2 = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg, cfg2);
    }

    #[test]
    fn type2_upgrades_derivative_method() {
        let cfg = ExperimentConfig::from_json(
            r#"{"system": {"name": "lorenz3"}, "noise": {"noise_type": "type2_on_state", "sigma": 0.1}}"#,
        )
        .unwrap();
        assert_eq!(cfg.derivative.method, DerivMethod::Tvd);
    }

    #[test]
    fn generate_and_rediscover_small_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_json(
            r#"{
                "system": {"name": "lorenz3"},
                "data": {"dt": 0.002, "t_end": 4.0},
                "dictionary": {"degree": 2},
                "tuning": {"k_max": 4, "m": 3, "t_folds": 3}
            }"#,
        )
        .unwrap();
        let files = cmd_generate(&cfg, dir.path()).unwrap();
        assert!(files.iter().any(|p| p.ends_with("lorenz3_clean.csv")));
        let discover =
            cmd_discover(&cfg, Some(&dir.path().join("lorenz3_clean.csv")), dir.path(), false)
                .unwrap();
        assert!(discover.failed_equations.is_empty());
        let eval = cmd_evaluate(&cfg, &discover.model_path, dir.path()).unwrap();
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(eval).unwrap()).unwrap();
        assert_eq!(report["a"], 3);
    }

    #[test]
    fn generate_same_seed_is_byte_identical() {
        let cfg = ExperimentConfig::from_json(
            r#"{
                "system": {"name": "lorenz3"},
                "data": {"dt": 0.01, "t_end": 1.0},
                "noise": {"noise_type": "type1_on_derivative", "sigma": 1.0},
                "seeds": [7]
            }"#,
        )
        .unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        cmd_generate(&cfg, d1.path()).unwrap();
        cmd_generate(&cfg, d2.path()).unwrap();
        for name in ["lorenz3_clean.csv", "lorenz3_noisy.csv"] {
            let a = fs::read(d1.path().join(name)).unwrap();
            let b = fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs across identical runs");
        }
    }

    #[test]
    fn zero_sigma_noisy_equals_clean() {
        let cfg = ExperimentConfig::from_json(
            r#"{
                "system": {"name": "lorenz3"},
                "data": {"dt": 0.01, "t_end": 1.0},
                "noise": {"noise_type": "type1_on_derivative", "sigma": 0.0}
            }"#,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        cmd_generate(&cfg, dir.path()).unwrap();
        let clean = fs::read(dir.path().join("lorenz3_clean.csv")).unwrap();
        let noisy = fs::read(dir.path().join("lorenz3_noisy.csv")).unwrap();
        assert_eq!(clean, noisy);
    }

    #[test]
    fn benchmark_rejects_empty_sweep() {
        let cfg = ExperimentConfig::from_json(
            r#"{"system": {"name": "lorenz3"}, "benchmark": {"sigmas": []}}"#,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(cmd_benchmark(&cfg, dir.path()).is_err());
    }
}
