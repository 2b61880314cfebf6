//! Excitation-signal synthesis, amplitude modulation/demodulation, filtering,
//! and segment-averaged spectral estimation.

pub mod filters;
pub mod spectra;

pub use filters::{filtfilt, Biquad, Filter, IirCascade, OnePole};
pub use spectra::{estimate_spectra, etfe, FrequencyResponse, SpectralEstimate, WindowKind};

use crate::plant::{InversionMode, StaticNonlinearity};
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Sampling contract shared by every time-domain operation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SampleSpec {
    /// Sampling frequency in Hz.
    pub f_s: f64,
}

impl SampleSpec {
    pub fn new(f_s: f64) -> Result<Self> {
        if f_s <= 0.0 {
            return Err(Error::InvalidInput(format!("f_s must be positive, got {f_s}")));
        }
        Ok(SampleSpec { f_s })
    }

    /// Sampling period in seconds.
    pub fn t_s(&self) -> f64 {
        1.0 / self.f_s
    }

    pub fn nyquist(&self) -> f64 {
        self.f_s / 2.0
    }
}

impl Default for SampleSpec {
    /// 50 kHz loop and sampling rate.
    fn default() -> Self {
        SampleSpec { f_s: 50_000.0 }
    }
}

/// Linear chirp `A sin(2 pi (xi t + gamma/2 t^2))`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ChirpSpec {
    /// Amplitude, drive units.
    pub amplitude: f64,
    /// Initial frequency `xi`, Hz.
    pub f_start: f64,
    /// Sweep rate `gamma`, Hz/s (may be negative for a down sweep).
    pub sweep_rate: f64,
    /// Duration, s.
    pub duration: f64,
}

impl ChirpSpec {
    pub fn validate(&self, sample_spec: &SampleSpec) -> Result<()> {
        if self.f_start <= 0.0 {
            return Err(Error::InvalidInput("chirp initial frequency must be positive".into()));
        }
        if self.duration <= 0.0 {
            return Err(Error::InvalidInput("chirp duration must be positive".into()));
        }
        let f_end = self.f_start + self.sweep_rate * self.duration;
        if f_end <= 0.0 || f_end >= sample_spec.nyquist() || self.f_start >= sample_spec.nyquist() {
            return Err(Error::InvalidInput(format!(
                "chirp sweep [{} .. {f_end}] Hz exceeds (0, {}) Hz",
                self.f_start,
                sample_spec.nyquist()
            )));
        }
        Ok(())
    }

    /// Instantaneous frequency at time `t`.
    pub fn instantaneous_frequency(&self, t: f64) -> f64 {
        self.f_start + self.sweep_rate * t
    }
}

/// Stepped sine: piecewise-constant frequency, phase-continuous.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SteppedSineSpec {
    /// Amplitude, drive units.
    pub amplitude: f64,
    /// First step frequency, Hz.
    pub f_start: f64,
    /// Frequency increment per step, Hz.
    pub step: f64,
    /// Dwell per step, s; `dwell * f_s` must be an integer sample count.
    pub dwell: f64,
    /// Number of steps.
    pub n_steps: usize,
}

impl SteppedSineSpec {
    /// Identification protocol default: 10 Hz to 1960 Hz in 30 Hz steps,
    /// 3 s per step.
    pub fn identification_default() -> Self {
        SteppedSineSpec { amplitude: 1.0, f_start: 10.0, step: 30.0, dwell: 3.0, n_steps: 66 }
    }

    pub fn frequency_of_step(&self, index: usize) -> f64 {
        self.f_start + self.step * index as f64
    }

    pub fn final_frequency(&self) -> f64 {
        self.frequency_of_step(self.n_steps.saturating_sub(1))
    }

    pub fn samples_per_step(&self, sample_spec: &SampleSpec) -> Result<usize> {
        let exact = self.dwell * sample_spec.f_s;
        let rounded = exact.round();
        if (exact - rounded).abs() > 1e-6 || rounded < 1.0 {
            return Err(Error::InvalidInput(format!(
                "dwell {} s is not an integer number of samples at {} Hz",
                self.dwell, sample_spec.f_s
            )));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self, sample_spec: &SampleSpec) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidInput("stepped sine needs at least one step".into()));
        }
        if self.f_start <= 0.0 {
            return Err(Error::InvalidInput("stepped sine start frequency must be positive".into()));
        }
        if self.final_frequency() >= sample_spec.nyquist() {
            return Err(Error::InvalidInput(format!(
                "stepped sine final frequency {} Hz reaches the Nyquist limit {}",
                self.final_frequency(),
                sample_spec.nyquist()
            )));
        }
        self.samples_per_step(sample_spec)?;
        Ok(())
    }
}

/// Amplitude-modulation parameters: carrier frequency and carrier offset.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AmSpec {
    /// Carrier frequency, Hz.
    pub f_c: f64,
    /// Carrier offset amplitude `B`, drive units.
    pub offset: f64,
}

impl AmSpec {
    pub fn new(f_c: f64, offset: f64, sample_spec: &SampleSpec) -> Result<Self> {
        if !(f_c > 0.0 && f_c < sample_spec.nyquist()) {
            return Err(Error::InvalidInput(format!(
                "carrier {f_c} Hz outside (0, {}) Hz",
                sample_spec.nyquist()
            )));
        }
        Ok(AmSpec { f_c, offset })
    }
}

impl Default for AmSpec {
    /// 2750 Hz carrier.
    fn default() -> Self {
        AmSpec { f_c: 2750.0, offset: 0.0 }
    }
}

/// Generates a linear chirp; sample `k` is `A sin(2 pi (xi t + gamma/2 t^2))`
/// at `t = k / f_s`.
pub fn gen_chirp(spec: &ChirpSpec, sample_spec: &SampleSpec) -> Result<Vec<f64>> {
    spec.validate(sample_spec)?;
    let n = (spec.duration * sample_spec.f_s).round() as usize;
    let t_s = sample_spec.t_s();
    Ok((0..n)
        .map(|k| {
            let t = k as f64 * t_s;
            spec.amplitude * (TWO_PI * (spec.f_start * t + 0.5 * spec.sweep_rate * t * t)).sin()
        })
        .collect())
}

/// Generates a stepped sine with a continuous phase accumulator across step
/// boundaries, so no spectral splatter is introduced at the transitions.
pub fn gen_stepped_sine(spec: &SteppedSineSpec, sample_spec: &SampleSpec) -> Result<Vec<f64>> {
    spec.validate(sample_spec)?;
    let n_dwell = spec.samples_per_step(sample_spec)?;
    let t_s = sample_spec.t_s();
    let mut out = Vec::with_capacity(n_dwell * spec.n_steps);
    let mut phase_base = 0.0_f64;
    for step in 0..spec.n_steps {
        let f = spec.frequency_of_step(step);
        for i in 0..n_dwell {
            let phase = phase_base + TWO_PI * f * (i as f64 * t_s);
            out.push(spec.amplitude * phase.sin());
        }
        phase_base += TWO_PI * f * (n_dwell as f64 * t_s);
        phase_base %= TWO_PI;
    }
    Ok(out)
}

/// Amplitude-modulates `g_m` onto the carrier through the inverted system
/// nonlinearity: `g_amp(t) = sin(2 pi f_c t) * Finv(g_m(t) + B)`.
///
/// In identification mode an out-of-range `g_m + B` is a hard error; in
/// closed-loop mode it is clamped to the invertible range and flagged.
/// Returns the drive sequence and whether any sample was clamped.
pub fn am_modulate(
    am: &AmSpec,
    g_m: &[f64],
    compensator: &StaticNonlinearity,
    mode: InversionMode,
    sample_spec: &SampleSpec,
) -> Result<(Vec<f64>, bool)> {
    if am.f_c >= sample_spec.nyquist() {
        return Err(Error::InvalidInput("carrier above Nyquist".into()));
    }
    let t_s = sample_spec.t_s();
    let mut clamped_any = false;
    let mut out = Vec::with_capacity(g_m.len());
    for (k, &m) in g_m.iter().enumerate() {
        let (v, clamped) = compensator.invert(m + am.offset, mode)?;
        clamped_any |= clamped;
        let t = k as f64 * t_s;
        out.push((TWO_PI * am.f_c * t).sin() * v);
    }
    Ok((out, clamped_any))
}

/// Demodulates by multiplying with the carrier tone and low-pass filtering.
///
/// A factor-of-two gain normalization is applied so that
/// `demodulate(am_modulate(m))` recovers `m` for slowly varying `m`.
pub fn demodulate(
    signal: &[f64],
    f_c: f64,
    lpf_cutoff: f64,
    sample_spec: &SampleSpec,
) -> Result<Vec<f64>> {
    if lpf_cutoff >= f_c {
        return Err(Error::InvalidInput(format!(
            "lpf cutoff {lpf_cutoff} Hz must be below the carrier {f_c} Hz"
        )));
    }
    let t_s = sample_spec.t_s();
    let mixed: Vec<f64> = signal
        .iter()
        .enumerate()
        .map(|(k, &x)| 2.0 * x * (TWO_PI * f_c * (k as f64 * t_s)).sin())
        .collect();
    let mut lp = IirCascade::butterworth_lowpass(4, lpf_cutoff, sample_spec.f_s)?;
    Ok(lp.apply(&mixed))
}

/// Pointwise arithmetic mean of equally long traces.
pub fn ensemble_average(traces: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = traces
        .first()
        .ok_or_else(|| Error::InvalidInput("ensemble_average needs at least one trace".into()))?;
    let n = first.len();
    if traces.iter().any(|t| t.len() != n) {
        return Err(Error::InvalidInput("ensemble_average length mismatch".into()));
    }
    let mut out = vec![0.0; n];
    for trace in traces {
        for (o, &v) in out.iter_mut().zip(trace.iter()) {
            *o += v;
        }
    }
    let scale = 1.0 / traces.len() as f64;
    for o in &mut out {
        *o *= scale;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::fft_real;

    fn ss() -> SampleSpec {
        SampleSpec::default()
    }

    #[test]
    fn chirp_starts_at_zero() {
        let spec = ChirpSpec { amplitude: 0.07, f_start: 1300.0, sweep_rate: 35.0, duration: 1.0 };
        let x = gen_chirp(&spec, &ss()).unwrap();
        assert_eq!(x[0], 0.0);
    }

    #[test]
    fn chirp_instantaneous_frequency_at_end_of_sweep() {
        // 1.3 kHz start, 35 Hz/s for 100 s -> 4.8 kHz
        let spec = ChirpSpec { amplitude: 1.0, f_start: 1300.0, sweep_rate: 35.0, duration: 100.0 };
        assert!((spec.instantaneous_frequency(100.0) - 4800.0).abs() < 1e-9);
        spec.validate(&ss()).unwrap();
    }

    #[test]
    fn chirp_rejects_sweep_past_nyquist() {
        let spec =
            ChirpSpec { amplitude: 1.0, f_start: 1300.0, sweep_rate: 300.0, duration: 100.0 };
        assert!(gen_chirp(&spec, &ss()).is_err());
    }

    #[test]
    fn zero_rate_chirp_peaks_at_its_bin() {
        // 100 Hz tone; with 2^15 samples the 100 Hz line is not bin-centered,
        // but the peak bin must still be the closest one.
        let spec = ChirpSpec { amplitude: 1.0, f_start: 100.0, sweep_rate: 0.0, duration: 0.65536 };
        let x = gen_chirp(&spec, &ss()).unwrap();
        let n = 32768;
        let spec_fft = fft_real(&x[..n]).unwrap();
        let peak = spec_fft
            .iter()
            .take(n / 2)
            .enumerate()
            .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
            .unwrap()
            .0;
        let bin_hz = 50_000.0 / n as f64;
        let peak_hz = peak as f64 * bin_hz;
        assert!((peak_hz - 100.0).abs() <= bin_hz, "peak at {peak_hz} Hz");
    }

    #[test]
    fn stepped_sine_defaults_match_protocol() {
        let spec = SteppedSineSpec::identification_default();
        assert_eq!(spec.frequency_of_step(0), 10.0);
        assert_eq!(spec.n_steps, 66);
        //.. + 65 * 30 = 1960 Hz
        assert!((spec.final_frequency() - 1960.0).abs() < 1e-12);
        spec.validate(&ss()).unwrap();
    }

    #[test]
    fn stepped_sine_rejects_final_frequency_at_nyquist() {
        let spec = SteppedSineSpec {
            amplitude: 1.0,
            f_start: 10.0,
            step: 30.0,
            dwell: 0.1,
            n_steps: 834, // 10 + 833*30 = 25000
        };
        assert!(gen_stepped_sine(&spec, &ss()).is_err());
    }

    #[test]
    fn degenerate_step_equals_zero_rate_chirp() {
        let stepped = SteppedSineSpec {
            amplitude: 0.5,
            f_start: 220.0,
            step: 0.0,
            dwell: 0.05,
            n_steps: 4,
        };
        let chirp =
            ChirpSpec { amplitude: 0.5, f_start: 220.0, sweep_rate: 0.0, duration: 0.2 };
        let a = gen_stepped_sine(&stepped, &ss()).unwrap();
        let b = gen_chirp(&chirp, &ss()).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn stepped_sine_phase_continuous_at_boundaries() {
        let spec = SteppedSineSpec {
            amplitude: 1.0,
            f_start: 100.0,
            step: 130.0,
            dwell: 0.0173, // 865 samples: boundaries land mid-cycle
            n_steps: 5,
        };
        let x = gen_stepped_sine(&spec, &ss()).unwrap();
        let n_dwell = 865;
        // no jump larger than the largest possible one-sample increment
        let f_max = spec.final_frequency();
        let max_step = 2.0 * std::f64::consts::PI * f_max / 50_000.0;
        for b in 1..spec.n_steps {
            let k = b * n_dwell;
            let delta = (x[k] - x[k - 1]).abs();
            assert!(delta <= max_step * 1.05, "jump {delta} at boundary {b}");
        }
    }

    /// Exact line amplitude by correlation over an integer number of periods
    /// of the common fundamental; leakage-free for multi-tone signals.
    fn line_amplitude(x: &[f64], f: f64, f_s: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, &v) in x.iter().enumerate() {
            let ph = TWO_PI * f * k as f64 / f_s;
            re += v * ph.cos();
            im += v * ph.sin();
        }
        2.0 * (re * re + im * im).sqrt() / x.len() as f64
    }

    #[test]
    fn am_three_line_spectrum() {
        // A = 0.3, B = 0.3, f_m = 100 Hz, identity compensator:
        // lines at 2650/2750/2850 Hz with amplitudes 0.15/0.3/0.15
        let sample = ss();
        let am = AmSpec { f_c: 2750.0, offset: 0.3 };
        let ident = StaticNonlinearity::identity();
        // integer periods of the 50 Hz common fundamental
        let n = 500_000;
        let t_s = sample.t_s();
        let g_m: Vec<f64> =
            (0..n).map(|k| 0.3 * (TWO_PI * 100.0 * (k as f64 * t_s)).sin()).collect();
        let (drive, clamped) =
            am_modulate(&am, &g_m, &ident, InversionMode::Identification, &sample).unwrap();
        assert!(!clamped);
        let fs = sample.f_s;
        assert!((line_amplitude(&drive, 2750.0, fs) - 0.3).abs() < 0.003);
        assert!((line_amplitude(&drive, 2650.0, fs) - 0.15).abs() < 0.0015);
        assert!((line_amplitude(&drive, 2850.0, fs) - 0.15).abs() < 0.0015);
        // no energy anywhere else
        assert!(line_amplitude(&drive, 2550.0, fs) < 1e-6);
        assert!(line_amplitude(&drive, 2950.0, fs) < 1e-6);
    }

    #[test]
    fn am_zero_modulation_is_pure_carrier() {
        let sample = ss();
        let am = AmSpec { f_c: 2750.0, offset: 0.4 };
        let ident = StaticNonlinearity::identity();
        let g_m = vec![0.0; 1000];
        let (drive, _) =
            am_modulate(&am, &g_m, &ident, InversionMode::Identification, &sample).unwrap();
        for (k, &v) in drive.iter().enumerate() {
            let t = k as f64 * sample.t_s();
            assert!((v - 0.4 * (TWO_PI * 2750.0 * t).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn am_square_wave_sidebands_decay_as_one_over_n() {
        // square-wave modulation: sideband pairs at f_c +/- odd harmonics
        // with 1/n amplitude decay (Fourier series of the square wave)
        let sample = ss();
        // positive offset keeps the envelope inside the invertible range and
        // only adds a carrier line, leaving the sidebands untouched
        let am = AmSpec { f_c: 2750.0, offset: 0.3 };
        let ident = StaticNonlinearity::identity();
        let f_m = 50.0;
        let n = 500_000; // integer periods of the 50 Hz fundamental
        let t_s = sample.t_s();
        let g_m: Vec<f64> = (0..n)
            .map(|k| if (TWO_PI * f_m * (k as f64 * t_s)).sin() >= 0.0 { 0.2 } else { -0.2 })
            .collect();
        let (drive, _) =
            am_modulate(&am, &g_m, &ident, InversionMode::Identification, &sample).unwrap();
        // square wave fourier amplitude at harmonic h: 4A/(pi h); AM splits
        // that between the two sidebands: 2A/(pi h) each
        let fs = sample.f_s;
        for h in [1.0, 3.0, 5.0] {
            let expect = 2.0 * 0.2 / (std::f64::consts::PI * h);
            let got = line_amplitude(&drive, 2750.0 + h * f_m, fs);
            assert!((got - expect).abs() < 0.05 * expect, "h={h}: {got} vs {expect}");
            let even = line_amplitude(&drive, 2750.0 + (h + 1.0) * f_m, fs);
            assert!(even < 0.02 * expect, "even harmonic leak {even}");
        }
    }

    #[test]
    fn demodulate_constant_envelope() {
        let sample = ss();
        let n = 20_000;
        let t_s = sample.t_s();
        let x: Vec<f64> = (0..n).map(|k| 0.7 * (TWO_PI * 2750.0 * (k as f64 * t_s)).sin()).collect();
        let y = demodulate(&x, 2750.0, 687.5, &sample).unwrap();
        // after settling the output equals the constant envelope
        for &v in &y[n / 2..] {
            assert!((v - 0.7).abs() < 0.01, "{v}");
        }
    }

    #[test]
    fn demodulate_round_trip_recovers_modulation() {
        let sample = ss();
        let am = AmSpec { f_c: 2750.0, offset: 0.4 };
        let ident = StaticNonlinearity::identity();
        let n = 50_000;
        let t_s = sample.t_s();
        let g_m: Vec<f64> = (0..n).map(|k| 0.2 * (TWO_PI * 50.0 * (k as f64 * t_s)).sin()).collect();
        let (drive, _) =
            am_modulate(&am, &g_m, &ident, InversionMode::Identification, &sample).unwrap();
        let y = demodulate(&drive, 2750.0, 687.5, &sample).unwrap();
        // settled back half: DC offset and modulation amplitude within 2%
        let tail = &y[n / 2..];
        let dc = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!((dc - 0.4).abs() < 0.02 * 0.4, "dc {dc}");
        let amp = line_amplitude(tail, 50.0, sample.f_s);
        assert!((amp - 0.2).abs() < 0.02 * 0.2, "modulation amplitude {amp}");
        // and no residual carrier-band content
        assert!(line_amplitude(tail, 2750.0, sample.f_s) < 1e-3);
    }

    #[test]
    fn demodulate_rejects_out_of_band_tone() {
        let sample = ss();
        let n = 60_000;
        let t_s = sample.t_s();
        let f_c = 2750.0;
        let x: Vec<f64> = (0..n).map(|k| (TWO_PI * f_c / 2.0 * (k as f64 * t_s)).sin()).collect();
        // mixing a tone at f_c/2 with the carrier produces lines at f_c/2 and
        // 3 f_c/2; with the cutoff two octaves below f_c/2 the fourth-order
        // filter pushes both under -40 dB
        let y = demodulate(&x, f_c, f_c / 8.0, &sample).unwrap();
        let peak = y[n / 2..].iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        assert!(peak < 0.01, "leak {peak}"); // < -40 dB of unit input
    }

    #[test]
    fn ensemble_average_identity_and_mismatch() {
        let t1 = vec![1.0, 2.0, 3.0];
        assert_eq!(ensemble_average(&[t1.clone()]).unwrap(), t1);
        assert_eq!(ensemble_average(&[t1.clone(), t1.clone()]).unwrap(), t1);
        assert!(ensemble_average(&[t1.clone(), vec![1.0]]).is_err());
        assert!(ensemble_average(&[]).is_err());
    }

    #[test]
    fn ensemble_average_noise_reduction() {
        use rand::Rng;
        use rand::SeedableRng;
        let n = 4000;
        let members = 50;
        let signal: Vec<f64> = (0..n).map(|k| (k as f64 * 0.01).sin()).collect();
        let traces: Vec<Vec<f64>> = (0..members)
            .map(|m| {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::member_seed(7, m));
                signal
                    .iter()
                    .map(|&s| {
                        // Box-Muller standard normal
                        let u1: f64 = rng.gen_range(1e-12..1.0);
                        let u2: f64 = rng.gen_range(0.0..1.0);
                        let g = (-2.0 * u1.ln()).sqrt() * (TWO_PI * u2).cos();
                        s + 0.5 * g
                    })
                    .collect()
            })
            .collect();
        let avg = ensemble_average(&traces).unwrap();
        let resid_rms = (avg
            .iter()
            .zip(&signal)
            .map(|(a, s)| (a - s) * (a - s))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        let expected = 0.5 / (members as f64).sqrt();
        assert!(
            resid_rms < expected * 1.2 && resid_rms > expected * 0.8,
            "residual {resid_rms} vs expected {expected}"
        );
    }
}
