//! CSV and JSON artifact formats shared by the library and the CLI.
//!
//! Time series go out as `t,value` with nine-decimal timestamps and
//! full-precision scientific values, so every emitted file round-trips
//! losslessly through the readers here.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::cloop::LoopTrace;
use crate::dsp::spectra::{FrequencyResponse, SpectralEstimate};
use crate::{Error, Result};

/// Writes bytes atomically: a temp file in the destination directory is
/// renamed over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let pid = std::process::id();
    let stem = path.file_name().and_then(|s| s.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{stem}.{pid}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt_value(v: f64) -> String {
    format!("{v:e}")
}

/// `t,value` sequence CSV: time with nine decimals, values in scientific
/// notation at full precision.
pub fn sequence_to_csv(t0: f64, dt: f64, values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 24 + 16);
    out.push_str("t,value\n");
    for (k, &v) in values.iter().enumerate() {
        let t = t0 + k as f64 * dt;
        out.push_str(&format!("{t:.9},{}\n", fmt_value(v)));
    }
    out
}

/// Parses a `t,value` CSV produced by [`sequence_to_csv`].
pub fn sequence_from_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "t,value" {
                return Err(Error::Io(format!("unexpected sequence header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let t = parse_field(parts.next(), lineno)?;
        let v = parse_field(parts.next(), lineno)?;
        times.push(t);
        values.push(v);
    }
    Ok((times, values))
}

fn parse_field(field: Option<&str>, lineno: usize) -> Result<f64> {
    field
        .ok_or_else(|| Error::Io(format!("missing field on line {lineno}")))?
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::Io(format!("bad number on line {lineno}: {e}")))
}

/// `f_hz,phi_uu,re_phi_yu,im_phi_yu` export of a spectral estimate.
pub fn spectral_estimate_to_csv(est: &SpectralEstimate) -> String {
    let mut out = String::from("f_hz,phi_uu,re_phi_yu,im_phi_yu\n");
    for k in 0..est.grid.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_value(est.grid[k]),
            fmt_value(est.phi_uu[k]),
            fmt_value(est.phi_yu[k].re),
            fmt_value(est.phi_yu[k].im)
        ));
    }
    out
}

/// `f_hz,re,im` export of a frequency response.
pub fn frequency_response_to_csv(resp: &FrequencyResponse) -> String {
    let mut out = String::from("f_hz,re,im\n");
    for k in 0..resp.len() {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_value(resp.grid[k]),
            fmt_value(resp.value[k].re),
            fmt_value(resp.value[k].im)
        ));
    }
    out
}

/// Parses an `f_hz,re,im` CSV back into a frequency response.
pub fn frequency_response_from_csv(text: &str) -> Result<FrequencyResponse> {
    let mut grid = Vec::new();
    let mut value = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "f_hz,re,im" {
                return Err(Error::Io(format!("unexpected response header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        grid.push(parse_field(parts.next(), lineno)?);
        let re = parse_field(parts.next(), lineno)?;
        let im = parse_field(parts.next(), lineno)?;
        value.push(Complex64::new(re, im));
    }
    FrequencyResponse::new(grid, value)
}

/// `f_hz,value` curve export (deflection and quasi-steady curves).
pub fn curve_to_csv(grid: &[f64], values: &[f64]) -> String {
    let mut out = String::from("f_hz,value\n");
    for (f, v) in grid.iter().zip(values) {
        out.push_str(&format!("{},{}\n", fmt_value(*f), fmt_value(*v)));
    }
    out
}

/// Parses an `f_hz,value` curve CSV.
pub fn curve_from_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut grid = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "f_hz,value" {
                return Err(Error::Io(format!("unexpected curve header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        grid.push(parse_field(parts.next(), lineno)?);
        values.push(parse_field(parts.next(), lineno)?);
    }
    Ok((grid, values))
}

/// `x_volts,f_of_x` nonlinearity-curve export.
pub fn nonlinearity_to_csv(x: &[f64], f_of_x: &[f64]) -> String {
    let mut out = String::from("x_volts,f_of_x\n");
    for (a, b) in x.iter().zip(f_of_x) {
        out.push_str(&format!("{},{}\n", fmt_value(*a), fmt_value(*b)));
    }
    out
}

/// Parses an `x_volts,f_of_x` CSV.
pub fn nonlinearity_from_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "x_volts,f_of_x" {
                return Err(Error::Io(format!("unexpected nonlinearity header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        x.push(parse_field(parts.next(), lineno)?);
        y.push(parse_field(parts.next(), lineno)?);
    }
    Ok((x, y))
}

/// `t,r,dy_meas,g_m,g_m_prime,drive,sat_flag,z_hat` loop-trace export.
pub fn loop_trace_to_csv(trace: &LoopTrace) -> String {
    let mut out = String::from("t,r,dy_meas,g_m,g_m_prime,drive,sat_flag,z_hat\n");
    for k in 0..trace.len() {
        let t = k as f64 * trace.dt;
        out.push_str(&format!(
            "{t:.9},{},{},{},{},{},{},{}\n",
            fmt_value(trace.r[k]),
            fmt_value(trace.dy_meas[k]),
            fmt_value(trace.g_m[k]),
            fmt_value(trace.g_m_prime[k]),
            fmt_value(trace.drive[k]),
            fmt_value(trace.sat_frac[k]),
            fmt_value(trace.z_hat[k])
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sequence_round_trip_lossless() {
        let values = vec![0.0, 1.5e-7, -3.25, 289.35185185185185, f64::MIN_POSITIVE];
        let csv = sequence_to_csv(0.0, 2e-5, &values);
        let (t, v) = sequence_from_csv(&csv).unwrap();
        assert_eq!(v, values);
        assert!((t[1] - 2e-5).abs() < 1e-9);
    }

    #[test]
    fn curve_round_trip() {
        let grid = vec![1250.0, 2200.0, 4850.0];
        let vals = vec![21.0, 60.0, 21.5];
        let (g, v) = curve_from_csv(&curve_to_csv(&grid, &vals)).unwrap();
        assert_eq!(g, grid);
        assert_eq!(v, vals);
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(sequence_from_csv("time,val\n0,1\n").is_err());
        assert!(curve_from_csv("f,v\n0,1\n").is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = std::env::temp_dir().join(format!("coanda-io-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("artifact.csv");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    proptest! {
        #[test]
        fn sequence_values_round_trip(values in proptest::collection::vec(-1e12_f64..1e12, 1..50)) {
            let csv = sequence_to_csv(0.0, 2e-5, &values);
            let (_, v) = sequence_from_csv(&csv).unwrap();
            prop_assert_eq!(v, values);
        }

        #[test]
        fn response_round_trip(pairs in proptest::collection::vec((-1e6_f64..1e6, -1e6_f64..1e6), 2..40)) {
            let grid: Vec<f64> = (0..pairs.len()).map(|k| 10.0 * (k as f64 + 1.0)).collect();
            let value: Vec<Complex64> = pairs.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
            let resp = FrequencyResponse::new(grid, value).unwrap();
            let back = frequency_response_from_csv(&frequency_response_to_csv(&resp)).unwrap();
            prop_assert_eq!(back.grid, resp.grid);
            for (a, b) in back.value.iter().zip(&resp.value) {
                prop_assert_eq!(a, b);
            }
        }
    }
}
