//! IIR filters: biquad sections, cascades, and the filter designs used by the
//! toolkit (notch, Butterworth-type low-pass, one-pole lag, resonant shaper).

use crate::{Error, Result};

/// Anything that maps samples one at a time with internal state.
pub trait Filter {
    fn process(&mut self, x: f64) -> f64;
    fn reset(&mut self);

    /// Filters a whole sequence, starting from reset state.
    fn apply(&mut self, x: &[f64]) -> Vec<f64>
    where
        Self: Sized,
    {
        self.reset();
        x.iter().map(|&v| self.process(v)).collect()
    }
}

/// Second-order IIR section in transposed direct form II.
#[derive(Debug, Clone)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
    s1: f64,
    s2: f64,
}

impl Biquad {
    pub fn new(b0: f64, b1: f64, b2: f64, a1: f64, a2: f64) -> Self {
        Biquad { b0, b1, b2, a1, a2, s1: 0.0, s2: 0.0 }
    }

    /// Notch at `f_notch` with quality factor `q`; unity gain at DC and
    /// Nyquist, zero on the unit circle at the notch frequency.
    pub fn notch(f_notch: f64, q: f64, f_s: f64) -> Result<Self> {
        if !(f_notch > 0.0 && f_notch < f_s / 2.0) {
            return Err(Error::InvalidInput(format!(
                "notch frequency {f_notch} Hz outside (0, {}) Hz",
                f_s / 2.0
            )));
        }
        if q <= 0.0 {
            return Err(Error::InvalidInput("notch q must be positive".into()));
        }
        let w0 = 2.0 * std::f64::consts::PI * f_notch / f_s;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Ok(Biquad::new(
            1.0 / a0,
            -2.0 * w0.cos() / a0,
            1.0 / a0,
            -2.0 * w0.cos() / a0,
            (1.0 - alpha) / a0,
        ))
    }

    /// Second-order low-pass section with the given quality factor.
    pub fn lowpass(f_c: f64, q: f64, f_s: f64) -> Result<Self> {
        if !(f_c > 0.0 && f_c < f_s / 2.0) {
            return Err(Error::InvalidInput(format!(
                "lowpass cutoff {f_c} Hz outside (0, {}) Hz",
                f_s / 2.0
            )));
        }
        let w0 = 2.0 * std::f64::consts::PI * f_c / f_s;
        let alpha = w0.sin() / (2.0 * q);
        let c = w0.cos();
        let a0 = 1.0 + alpha;
        Ok(Biquad::new(
            (1.0 - c) / 2.0 / a0,
            (1.0 - c) / a0,
            (1.0 - c) / 2.0 / a0,
            -2.0 * c / a0,
            (1.0 - alpha) / a0,
        ))
    }

    /// Two-pole resonator with poles at radius `r` and frequency `f_0`,
    /// normalized to unit white-noise power gain. Used to color sensor noise.
    pub fn resonator(f_0: f64, r: f64, f_s: f64) -> Result<Self> {
        if !(f_0 > 0.0 && f_0 < f_s / 2.0 && r > 0.0 && r < 1.0) {
            return Err(Error::InvalidInput(
                "resonator needs 0 < f_0 < f_s/2 and 0 < r < 1".into(),
            ));
        }
        let w0 = 2.0 * std::f64::consts::PI * f_0 / f_s;
        let mut bq = Biquad::new(1.0, 0.0, 0.0, -2.0 * r * w0.cos(), r * r);
        let g = bq.noise_gain();
        bq.b0 = 1.0 / g;
        Ok(bq)
    }

    /// RMS gain for unit-variance white input, from the impulse-response
    /// energy (truncated once the tail is negligible).
    pub fn noise_gain(&self) -> f64 {
        let mut clone = self.clone();
        clone.reset();
        let mut energy = 0.0;
        let mut h = clone.process(1.0);
        let mut n = 0usize;
        loop {
            energy += h * h;
            h = clone.process(0.0);
            n += 1;
            if n > 64 && (h * h) < 1e-24 * energy {
                break;
            }
            if n > 5_000_000 {
                break;
            }
        }
        energy.sqrt()
    }

    /// Magnitude of the section's frequency response at `f`.
    pub fn magnitude_at(&self, f: f64, f_s: f64) -> f64 {
        use num_complex::Complex64;
        let z1 = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f / f_s);
        let z2 = z1 * z1;
        let num = Complex64::new(self.b0, 0.0) + z1 * self.b1 + z2 * self.b2;
        let den = Complex64::new(1.0, 0.0) + z1 * self.a1 + z2 * self.a2;
        (num / den).norm()
    }
}

impl Filter for Biquad {
    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.s1;
        self.s1 = self.b1 * x - self.a1 * y + self.s2;
        self.s2 = self.b2 * x - self.a2 * y;
        y
    }

    fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
    }
}

/// Cascade of biquad sections.
#[derive(Debug, Clone)]
pub struct IirCascade {
    pub sections: Vec<Biquad>,
}

impl IirCascade {
    /// Butterworth-type low-pass of even order `order` (2 or 4) at cutoff
    /// `f_c`, realized as cascaded second-order sections with Butterworth
    /// quality factors.
    pub fn butterworth_lowpass(order: usize, f_c: f64, f_s: f64) -> Result<Self> {
        if order == 0 || order % 2 != 0 || order > 8 {
            return Err(Error::InvalidInput(format!(
                "butterworth order {order} unsupported (even, <= 8)"
            )));
        }
        let n = order as f64;
        let mut sections = Vec::new();
        for k in 0..order / 2 {
            let theta = std::f64::consts::PI * (2.0 * k as f64 + 1.0) / (2.0 * n);
            let q = 1.0 / (2.0 * theta.sin());
            sections.push(Biquad::lowpass(f_c, q, f_s)?);
        }
        Ok(IirCascade { sections })
    }
}

impl Filter for IirCascade {
    fn process(&mut self, x: f64) -> f64 {
        self.sections.iter_mut().fold(x, |acc, s| s.process(acc))
    }

    fn reset(&mut self) {
        for s in &mut self.sections {
            s.reset();
        }
    }
}

/// One-pole low-pass `y[n] = (1-p) x[n] + p y[n-1]` with pole
/// `p = exp(-2 pi f_c / f_s)`; unity DC gain. Models the first-order
/// anti-alias stage on the sensor path and the per-flow-rate corner lag.
#[derive(Debug, Clone)]
pub struct OnePole {
    pub pole: f64,
    state: f64,
}

impl OnePole {
    pub fn lowpass(f_c: f64, f_s: f64) -> Result<Self> {
        if f_c <= 0.0 || f_s <= 0.0 {
            return Err(Error::InvalidInput("one-pole cutoff must be positive".into()));
        }
        Ok(OnePole { pole: (-2.0 * std::f64::consts::PI * f_c / f_s).exp(), state: 0.0 })
    }
}

impl Filter for OnePole {
    fn process(&mut self, x: f64) -> f64 {
        self.state = self.pole * self.state + (1.0 - self.pole) * x;
        self.state
    }

    fn reset(&mut self) {
        self.state = 0.0;
    }
}

/// Zero-phase filtering: forward pass, backward pass, with edge-replication
/// padding to suppress start-up transients. Used for offline post-processing
/// of ensemble-averaged traces so that timing metrics are not skewed by
/// filter group delay.
pub fn filtfilt<F: Filter + Clone>(filter: &F, x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let pad = 2048.min(x.len());
    let mut padded = Vec::with_capacity(x.len() + 2 * pad);
    padded.extend(std::iter::repeat(x[0]).take(pad));
    padded.extend_from_slice(x);
    padded.extend(std::iter::repeat(*x.last().unwrap()).take(pad));

    let mut f1 = filter.clone();
    let mut fwd = f1.apply(&padded);
    fwd.reverse();
    let mut f2 = filter.clone();
    let mut back = f2.apply(&fwd);
    back.reverse();
    back[pad..pad + x.len()].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 50_000.0;

    fn steady_tone_gain(f: f64, filt: &mut impl Filter) -> f64 {
        let n = (2.0 * FS / 50.0) as usize;
        let mut peak: f64 = 0.0;
        for k in 0..n {
            let t = k as f64 / FS;
            let y = filt.process((2.0 * std::f64::consts::PI * f * t).sin());
            if k > n / 2 {
                peak = peak.max(y.abs());
            }
        }
        peak
    }

    #[test]
    fn notch_unity_dc_gain() {
        let mut nf = Biquad::notch(2750.0, 30.0, FS).unwrap();
        let mut y = 0.0;
        for _ in 0..20_000 {
            y = nf.process(1.0);
        }
        assert!((y - 1.0).abs() < 0.01, "dc gain {y}");
    }

    #[test]
    fn notch_rejects_center_tone() {
        // steady-state amplitude at the notch center below 1% of input
        let mut nf = Biquad::notch(2750.0, 30.0, FS).unwrap();
        let gain = steady_tone_gain(2750.0, &mut nf);
        assert!(gain < 0.01, "center gain {gain}");
    }

    #[test]
    fn notch_40db_rejection_at_q5() {
        let nf = Biquad::notch(1000.0, 5.0, FS).unwrap();
        assert!(nf.magnitude_at(1000.0, FS) < 0.01);
    }

    #[test]
    fn broad_notch_band_attenuation() {
        // broad 650 Hz notch takes the 600-700 Hz band down at least 6 dB
        let nf = Biquad::notch(650.0, 3.0, FS).unwrap();
        for f in [600.0, 625.0, 650.0, 675.0, 700.0] {
            let g = nf.magnitude_at(f, FS);
            assert!(g < 0.501, "gain {g} at {f} Hz");
        }
    }

    #[test]
    fn butterworth_dc_and_attenuation() {
        let mut lp = IirCascade::butterworth_lowpass(4, 687.5, FS).unwrap();
        let mut y = 0.0;
        for _ in 0..50_000 {
            y = lp.process(1.0);
        }
        assert!((y - 1.0).abs() < 1e-6);
        let mut lp2 = lp.clone();
        lp2.reset();
        let g = steady_tone_gain(6875.0, &mut lp2);
        // 4th order, one decade above cutoff: ~80 dB down
        assert!(g < 1e-3, "stopband gain {g}");
    }

    #[test]
    fn resonator_unit_noise_gain() {
        let bq = Biquad::resonator(650.0, 0.985, FS).unwrap();
        assert!((bq.noise_gain() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn filtfilt_preserves_step_position() {
        let nf = Biquad::notch(650.0, 3.0, FS).unwrap();
        let mut x = vec![0.0; 4000];
        for v in x.iter_mut().skip(2000) {
            *v = 1.0;
        }
        let y = filtfilt(&nf, &x);
        // zero phase: the 50% crossing stays at the step
        let cross = y.iter().position(|&v| v > 0.5).unwrap();
        assert!((cross as i64 - 2000).unsigned_abs() < 8, "crossing at {cross}");
        assert!((y[3900] - 1.0).abs() < 1e-6);
    }
}
