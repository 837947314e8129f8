//! Trajectory CSV read/write and small CSV helpers.
//!
//! Floats are written with Rust's shortest-roundtrip formatting so files are
//! diffable and parse back bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::systems::{DatasetMeta, TrajectoryDataset};

/// Render a trajectory as `t,x1,...,xJ[,dx1,...,dxJ]` CSV text.
pub fn trajectory_to_csv(data: &TrajectoryDataset) -> String {
    let j = data.j();
    let mut out = String::new();
    out.push('t');
    for c in 1..=j {
        let _ = write!(out, ",x{c}");
    }
    if data.derivs.is_some() {
        for c in 1..=j {
            let _ = write!(out, ",dx{c}");
        }
    }
    out.push('\n');
    for i in 0..data.n() {
        let _ = write!(out, "{}", data.times[i]);
        for c in 0..j {
            let _ = write!(out, ",{}", data.states.get(i, c));
        }
        if let Some(d) = &data.derivs {
            for c in 0..j {
                let _ = write!(out, ",{}", d.get(i, c));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_trajectory_csv(data: &TrajectoryDataset, path: &Path) -> Result<()> {
    fs::write(path, trajectory_to_csv(data))?;
    Ok(())
}

/// Parse a trajectory CSV produced by [`trajectory_to_csv`].
pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryDataset> {
    let text = fs::read_to_string(path)?;
    parse_trajectory_csv(&text)
}

pub fn parse_trajectory_csv(text: &str) -> Result<TrajectoryDataset> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Csv("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"t") {
        return Err(Error::Csv(format!("expected header starting with 't', got '{header}'")));
    }
    let state_cols = cols.iter().skip(1).take_while(|c| !c.starts_with("dx")).count();
    let deriv_cols = cols.len() - 1 - state_cols;
    if deriv_cols != 0 && deriv_cols != state_cols {
        return Err(Error::Csv(format!(
            "header has {state_cols} state but {deriv_cols} derivative columns"
        )));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut derivs = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.ok_or_else(|| Error::Csv(format!("line {}: too few fields", lineno + 2)))?
                .parse::<f64>()
                .map_err(|e| Error::Csv(format!("line {}: {e}", lineno + 2)))
        };
        times.push(parse(fields.next())?);
        for _ in 0..state_cols {
            states.push(parse(fields.next())?);
        }
        for _ in 0..deriv_cols {
            derivs.push(parse(fields.next())?);
        }
        if fields.next().is_some() {
            return Err(Error::Csv(format!("line {}: too many fields", lineno + 2)));
        }
    }
    let n = times.len();
    let data = TrajectoryDataset {
        times,
        states: Mat::from_raw(n, state_cols, states),
        derivs: (deriv_cols > 0).then(|| Mat::from_raw(n, deriv_cols, derivs)),
        names: (1..=state_cols).map(|c| format!("x{c}")).collect(),
        meta: DatasetMeta::default(),
    };
    data.validate()?;
    Ok(data)
}

/// Matrix as bare CSV (debugging export for design matrices and Hovmoeller
/// fields).
pub fn matrix_to_csv(m: &Mat) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        for (c, v) in m.row(i).iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(m: &Mat, path: &Path) -> Result<()> {
    fs::write(path, matrix_to_csv(m))?;
    Ok(())
}

/// Round to 6 significant digits, then shortest-roundtrip format.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    let scale = 10f64.powi(5 - exp);
    let rounded = (v * scale).round() / scale;
    format!("{rounded}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{integrate_ode, SystemSpec};
    use proptest::prelude::*;

    #[test]
    fn trajectory_round_trip_bit_exact() {
        let data = integrate_ode(&SystemSpec::lorenz3(), &[-8.0, 8.0, 27.0], 0.01, 1.0).unwrap();
        let csv = trajectory_to_csv(&data);
        let back = parse_trajectory_csv(&csv).unwrap();
        assert_eq!(back.times, data.times);
        assert_eq!(back.states, data.states);
        assert_eq!(back.derivs, data.derivs);
        assert_eq!(trajectory_to_csv(&back), csv);
    }

    #[test]
    fn format_sig6_examples() {
        assert_eq!(format_sig6(4191.6214), "4191.62");
        assert_eq!(format_sig6(0.047), "0.047");
        assert_eq!(format_sig6(3.0), "3");
        assert_eq!(format_sig6(-2.6666666), "-2.66667");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn float_field_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::ZERO) {
            let s = format!("{v}");
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
