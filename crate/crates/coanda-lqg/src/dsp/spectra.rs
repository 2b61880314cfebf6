//! Welch-style segment-averaged spectral estimation and the empirical
//! transfer function estimate built on it.

use num_complex::Complex64;

use crate::fft::{fft_real, is_power_of_two};
use crate::{Error, Result};

use super::SampleSpec;

/// Segment window for [`estimate_spectra`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum WindowKind {
    /// Hann window with 50% segment overlap (default).
    Hann50,
    /// Plain rectangular segmentation, no overlap.
    Rectangular,
}

/// Averaged auto- and cross-spectral densities on a uniform frequency grid.
#[derive(Debug, Clone)]
pub struct SpectralEstimate {
    /// Frequency bins, Hz; spacing `f_s / segment_length`.
    pub grid: Vec<f64>,
    /// One-sided input power spectral density, units^2/Hz; real and
    /// nonnegative at every bin.
    pub phi_uu: Vec<f64>,
    /// One-sided output-input cross-spectral density.
    pub phi_yu: Vec<Complex64>,
    /// Number of averaged segments.
    pub n_segments: usize,
}

/// Complex gain over a strictly increasing frequency grid.
#[derive(Debug, Clone)]
pub struct FrequencyResponse {
    pub grid: Vec<f64>,
    pub value: Vec<Complex64>,
}

impl FrequencyResponse {
    pub fn new(grid: Vec<f64>, value: Vec<Complex64>) -> Result<Self> {
        if grid.len() != value.len() {
            return Err(Error::InvalidInput("frequency response grid/value length mismatch".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("frequency grid must be strictly increasing".into()));
        }
        Ok(FrequencyResponse { grid, value })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn magnitude_db(&self) -> Vec<f64> {
        self.value.iter().map(|v| 20.0 * v.norm().log10()).collect()
    }

    /// Unwrapped phase in radians.
    pub fn phase_unwrapped(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.value.len());
        let mut prev = 0.0;
        let mut offset = 0.0;
        for (i, v) in self.value.iter().enumerate() {
            let raw = v.arg();
            if i > 0 {
                let mut d = raw + offset - prev;
                while d > std::f64::consts::PI {
                    offset -= 2.0 * std::f64::consts::PI;
                    d -= 2.0 * std::f64::consts::PI;
                }
                while d < -std::f64::consts::PI {
                    offset += 2.0 * std::f64::consts::PI;
                    d += 2.0 * std::f64::consts::PI;
                }
            }
            let u = raw + offset;
            out.push(u);
            prev = u;
        }
        out
    }

    /// Least-squares integer delay from the slope of the unwrapped phase:
    /// a pure delay of `k` samples has phase `-2 pi f k T_s`.
    pub fn delay_from_phase_slope(&self, sample_spec: &SampleSpec) -> Result<i64> {
        if self.len() < 2 {
            return Err(Error::InvalidInput("need at least two bins for a phase slope".into()));
        }
        let phase = self.phase_unwrapped();
        let n = self.len() as f64;
        let sf: f64 = self.grid.iter().sum();
        let sp: f64 = phase.iter().sum();
        let sff: f64 = self.grid.iter().map(|f| f * f).sum();
        let sfp: f64 = self.grid.iter().zip(&phase).map(|(f, p)| f * p).sum();
        let slope = (n * sfp - sf * sp) / (n * sff - sf * sf);
        Ok((-slope / (2.0 * std::f64::consts::PI * sample_spec.t_s())).round() as i64)
    }

    /// Pointwise ratio of two responses on the same grid.
    pub fn divide(&self, other: &FrequencyResponse) -> Result<FrequencyResponse> {
        if self.grid.len() != other.grid.len()
            || self
                .grid
                .iter()
                .zip(&other.grid)
                .any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0))
        {
            return Err(Error::InvalidInput("responses are on different grids".into()));
        }
        FrequencyResponse::new(
            self.grid.clone(),
            self.value.iter().zip(&other.value).map(|(a, b)| a / b).collect(),
        )
    }
}

/// Welch-style segment-averaged auto- and cross-spectral densities.
///
/// `segment_length` must be a power of two (the transform is radix-2 only).
/// Each segment has its mean removed before windowing, so strong DC offsets
/// do not leak into the low bins.
pub fn estimate_spectra(
    u: &[f64],
    y: &[f64],
    segment_length: usize,
    sample_spec: &SampleSpec,
    window: WindowKind,
) -> Result<SpectralEstimate> {
    if u.len() != y.len() {
        return Err(Error::InvalidInput("estimate_spectra input/output length mismatch".into()));
    }
    if !is_power_of_two(segment_length) {
        return Err(Error::InvalidInput(format!(
            "segment length {segment_length} is not a power of two"
        )));
    }
    if u.len() < 2 * segment_length {
        return Err(Error::InvalidInput(format!(
            "need at least two segments ({} samples), got {}",
            2 * segment_length,
            u.len()
        )));
    }
    let n = segment_length;
    let (win, hop): (Vec<f64>, usize) = match window {
        WindowKind::Hann50 => (
            (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
            n / 2,
        ),
        WindowKind::Rectangular => (vec![1.0; n], n),
    };
    let win_energy: f64 = win.iter().map(|w| w * w).sum();
    let scale = 1.0 / (sample_spec.f_s * win_energy);

    let half = n / 2;
    let mut phi_uu = vec![0.0; half + 1];
    let mut phi_yu = vec![Complex64::new(0.0, 0.0); half + 1];
    let mut n_segments = 0usize;
    let mut start = 0usize;
    while start + n <= u.len() {
        let use_seg = |x: &[f64]| -> Vec<f64> {
            let seg = &x[start..start + n];
            let mean = seg.iter().sum::<f64>() / n as f64;
            seg.iter().zip(&win).map(|(v, w)| (v - mean) * w).collect()
        };
        let u_spec = fft_real(&use_seg(u))?;
        let y_spec = fft_real(&use_seg(y))?;
        for k in 0..=half {
            let one_sided = if k == 0 || k == half { 1.0 } else { 2.0 };
            phi_uu[k] += one_sided * scale * u_spec[k].norm_sqr();
            phi_yu[k] += one_sided * scale * y_spec[k] * u_spec[k].conj();
        }
        n_segments += 1;
        start += hop;
    }
    let inv = 1.0 / n_segments as f64;
    for v in &mut phi_uu {
        *v *= inv;
    }
    for v in &mut phi_yu {
        *v *= inv;
    }
    let df = sample_spec.f_s / n as f64;
    Ok(SpectralEstimate {
        grid: (0..=half).map(|k| k as f64 * df).collect(),
        phi_uu,
        phi_yu,
        n_segments,
    })
}

/// Relative input-energy floor below which a bin is considered unexcited.
pub const ETFE_ENERGY_THRESHOLD: f64 = 1e-8;

/// Empirical transfer function estimate `G = phi_yu / phi_uu`.
///
/// Bins whose input power is below `ETFE_ENERGY_THRESHOLD` times the peak
/// input power are dropped rather than returned; if nothing survives the
/// input carried no excitation energy.
pub fn etfe(estimate: &SpectralEstimate) -> Result<FrequencyResponse> {
    let peak = estimate.phi_uu.iter().cloned().fold(0.0_f64, f64::max);
    if peak <= 0.0 {
        return Err(Error::InvalidInput("no excitation energy in any bin".into()));
    }
    let floor = peak * ETFE_ENERGY_THRESHOLD;
    let mut grid = Vec::new();
    let mut value = Vec::new();
    for k in 0..estimate.grid.len() {
        if estimate.phi_uu[k] > floor {
            grid.push(estimate.grid[k]);
            value.push(estimate.phi_yu[k] / estimate.phi_uu[k]);
        }
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput("all bins below the excitation energy floor".into()));
    }
    FrequencyResponse::new(grid, value)
}
