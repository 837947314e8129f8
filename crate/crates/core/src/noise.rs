//! Additive Gaussian measurement noise and the averaged signal-to-noise
//! ratio that indexes every results table.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::systems::{TrajectoryDataset, RNG_NAME};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseType {
    /// Derivatives are measured; noise lands on the derivative matrix.
    Type1OnDerivative,
    /// Only states are measured; noise lands on the state matrix and the
    /// derivatives must be recomputed numerically.
    Type2OnState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub noise_type: NoiseType,
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::config("noise sigma must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSurface {
    Derivatives,
    States,
}

/// The realized noise draw attached to a corrupted dataset, kept so realized
/// SNR can be reported against the actual matrix rather than the nominal
/// sigma.
#[derive(Debug, Clone)]
pub struct NoiseRecord {
    pub spec: NoiseSpec,
    pub matrix: Mat,
    pub surface: NoiseSurface,
}

/// Standard normal N x J draw from a seeded generator, filled row-major.
/// The draw depends only on (seed, shape); sigma scales it afterwards, so a
/// sweep over sigma at a fixed seed reuses one underlying realization.
pub fn standard_normal_matrix(n: usize, j: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Mat::zeros(n, j);
    for i in 0..n {
        for c in 0..j {
            let z: f64 = StandardNormal.sample(&mut rng);
            m.set(i, c, z);
        }
    }
    m
}

/// Inject noise into a dataset according to the spec.
///
/// Type 1 adds sigma-scaled Gaussian entries to the derivative matrix and
/// leaves states alone. Type 2 adds them to the states and clears the
/// derivative matrix (to be recomputed by the derivatives module).
pub fn corrupt(data: &TrajectoryDataset, spec: &NoiseSpec) -> Result<TrajectoryDataset> {
    corrupt_skipping(data, spec, &[])
}

/// `corrupt` with some columns left noise-free (bifurcation-parameter
/// columns are exactly known, not measured).
pub fn corrupt_skipping(
    data: &TrajectoryDataset,
    spec: &NoiseSpec,
    skip_columns: &[usize],
) -> Result<TrajectoryDataset> {
    spec.validate()?;
    let mut out = data.clone();
    if spec.noise_type == NoiseType::Type1OnDerivative && data.derivs.is_none() {
        return Err(Error::MissingDerivatives);
    }
    if spec.sigma == 0.0 {
        out.meta.noise = Some(NoiseRecord {
            spec: *spec,
            matrix: Mat::zeros(data.n(), data.j()),
            surface: match spec.noise_type {
                NoiseType::Type1OnDerivative => NoiseSurface::Derivatives,
                NoiseType::Type2OnState => NoiseSurface::States,
            },
        });
        return Ok(out);
    }
    let z = standard_normal_matrix(data.n(), data.j(), spec.seed);
    let mut noise = Mat::zeros(data.n(), data.j());
    for i in 0..data.n() {
        for c in 0..data.j() {
            if skip_columns.contains(&c) {
                continue;
            }
            noise.set(i, c, spec.sigma * z.get(i, c));
        }
    }
    match spec.noise_type {
        NoiseType::Type1OnDerivative => {
            let mut d = data.derivs.clone().expect("checked above");
            for i in 0..data.n() {
                for c in 0..data.j() {
                    let v = d.get(i, c) + noise.get(i, c);
                    d.set(i, c, v);
                }
            }
            out.derivs = Some(d);
            out.meta.noise =
                Some(NoiseRecord { spec: *spec, matrix: noise, surface: NoiseSurface::Derivatives });
        }
        NoiseType::Type2OnState => {
            let mut x = data.states.clone();
            for i in 0..data.n() {
                for c in 0..data.j() {
                    let v = x.get(i, c) + noise.get(i, c);
                    x.set(i, c, v);
                }
            }
            out.states = x;
            out.derivs = None;
            out.meta.noise =
                Some(NoiseRecord { spec: *spec, matrix: noise, surface: NoiseSurface::States });
        }
    }
    out.meta.rng = Some(RNG_NAME.into());
    out.meta.seed = Some(spec.seed);
    Ok(out)
}

pub fn column_variance(m: &Mat, j: usize) -> f64 {
    let n = m.rows();
    let mean = (0..n).map(|i| m.get(i, j)).sum::<f64>() / n as f64;
    (0..n).map(|i| (m.get(i, j) - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)
}

/// Averaged SNR: (1/J) sum_j Var(signal_j) / Var(noise_j), sample variances
/// with the N-1 denominator.
pub fn snr(signal: &Mat, noise: &Mat) -> Result<f64> {
    if signal.rows() != noise.rows() || signal.cols() != noise.cols() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", signal.rows(), signal.cols()),
            got: format!("{}x{}", noise.rows(), noise.cols()),
        });
    }
    if signal.rows() < 2 {
        return Err(Error::invalid("snr needs at least 2 rows"));
    }
    let j = signal.cols();
    let mut acc = 0.0;
    for c in 0..j {
        let nv = column_variance(noise, c);
        if nv == 0.0 {
            return Err(Error::DegenerateNoise { column: c });
        }
        acc += column_variance(signal, c) / nv;
    }
    Ok(acc / j as f64)
}
