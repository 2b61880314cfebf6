//! System identification: delay estimation, frequency-domain rational
//! transfer-function fitting, static-nonlinearity fitting, and the
//! stepped-sine identification campaign on a simulated plant.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::dsp::spectra::FrequencyResponse;
use crate::dsp::{AmSpec, SampleSpec, SteppedSineSpec};
use crate::plant::{
    poly_roots, InversionMode, PlantInstance, QuasiSteadyCurve, StaticNonlinearity,
    TransferFunction,
};
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Result of [`estimate_delay`].
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DelayEstimate {
    /// Estimated transport delay, samples.
    pub delay: usize,
    /// Peak-to-second-peak ratio of the cross-correlation.
    pub confidence: f64,
}

/// Estimates the input-output transport delay.
///
/// The input-output cross-correlation locates the response peak; a
/// least-squares FIR deconvolution over lags up to that peak then refines
/// the estimate to the onset of the impulse response, since a resonant
/// plant peaks well after the transport delay itself.
pub fn estimate_delay(u_raw: &[f64], y_raw: &[f64]) -> Result<DelayEstimate> {
    if u_raw.len() != y_raw.len() || u_raw.is_empty() {
        return Err(Error::InvalidInput("delay estimation needs equal-length sequences".into()));
    }
    // remove operating-point offsets so DC does not bias the correlation
    let center = |x: &[f64]| -> Vec<f64> {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| v - mean).collect()
    };
    let u = &center(u_raw)[..];
    let y = &center(y_raw)[..];
    let n = u.len();
    let max_lag = (n / 4).clamp(1, 512);
    let mut r = vec![0.0; max_lag + 1];
    for (lag, rv) in r.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..n - lag {
            acc += u[k] * y[k + lag];
        }
        *rv = acc;
    }
    let peak_lag = r
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let peak = r[peak_lag].abs();
    let u_energy: f64 = u.iter().map(|v| v * v).sum();
    let y_energy: f64 = y.iter().map(|v| v * v).sum();
    let scale = (u_energy * y_energy).sqrt();
    if scale <= 0.0 || peak < 1e-12 * scale {
        return Err(Error::Numerical("flat cross-correlation; no detectable delay".into()));
    }
    let second = r
        .iter()
        .enumerate()
        .filter(|(i, _)| (*i as i64 - peak_lag as i64).abs() > 2)
        .map(|(_, v)| v.abs())
        .fold(0.0_f64, f64::max);
    let confidence = if second > 0.0 { peak / second } else { f64::INFINITY };

    // refine to the impulse-response onset by exact LS deconvolution; the
    // window must cover the whole response tail or the unexplained energy
    // raises a noise floor that buries the small leading taps
    let l = (peak_lag + 9).clamp(300, 600).min(n / 8);
    let rows = n.min(50_000);
    if rows > 4 * l {
        // normal equations over the common sample range k in [l-1, rows)
        let mut gram = DMatrix::<f64>::zeros(l, l);
        let mut rhs = DVector::<f64>::zeros(l);
        for i in 0..l {
            for j in i..l {
                let mut acc = 0.0;
                for k in l - 1..rows {
                    acc += u[k - i] * u[k - j];
                }
                gram[(i, j)] = acc;
                gram[(j, i)] = acc;
            }
            let mut acc = 0.0;
            for k in l - 1..rows {
                acc += u[k - i] * y[k];
            }
            rhs[i] = acc;
        }
        if let Some(h) = gram.lu().solve(&rhs) {
            let h_max = h.amax();
            if h_max > 0.0 {
                // leading taps double as a noise-floor estimate
                let mut lead: Vec<f64> = (0..16.min(l)).map(|k| h[k].abs()).collect();
                lead.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let floor = lead[lead.len() / 2];
                let threshold = (1e-4 * h_max).max(8.0 * floor);
                let onset = (0..l).find(|&k| h[k].abs() >= threshold);
                if let Some(k) = onset {
                    return Ok(DelayEstimate { delay: k, confidence });
                }
            }
        }
    }
    Ok(DelayEstimate { delay: peak_lag, confidence })
}

/// Delay handling inside [`fit_rational_tf`]. The response passed to the
/// fit is always the measured one, delay phase included.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub enum DelaySpec {
    /// The transport delay is known: its phase is removed before fitting
    /// the rational part, and the returned model carries it.
    Fixed(usize),
    /// Scan an inclusive range of integer delays and keep the best fit.
    Estimate { min: usize, max: usize },
}

/// Configuration for [`fit_rational_tf`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FitSpec {
    /// Numerator order (the numerator has `num_order + 1` coefficients).
    pub num_order: usize,
    /// Denominator order.
    pub den_order: usize,
    pub delay: DelaySpec,
    /// Optional per-bin weights; `1/|G|` when omitted.
    pub weighting: Option<Vec<f64>>,
    pub max_iterations: usize,
    /// Relative coefficient-change tolerance that stops the reweighting.
    pub tolerance: f64,
    /// Reflect unstable denominator roots into the unit circle; off by
    /// default so bad fits stay visible.
    pub force_stable: bool,
}

impl FitSpec {
    pub fn new(num_order: usize, den_order: usize) -> Self {
        FitSpec {
            num_order,
            den_order,
            delay: DelaySpec::Fixed(0),
            weighting: None,
            max_iterations: 50,
            tolerance: 1e-12,
            force_stable: false,
        }
    }
}

/// A fitted transfer function and its fit quality.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub tf: TransferFunction,
    /// Weighted RMS magnitude error over the fitted bins, dB.
    pub residual_db: f64,
    pub converged: bool,
    /// False when the denominator has roots on or outside the unit circle
    /// (and `force_stable` was off).
    pub stable: bool,
}

/// Iterative frequency-domain weighted least squares (Sanathanan–Koerner
/// reweighting) fit of a rational transfer function to a measured response.
pub fn fit_rational_tf(
    resp: &FrequencyResponse,
    spec: &FitSpec,
    sample_spec: &SampleSpec,
) -> Result<FitResult> {
    let n_par = spec.num_order + 1 + spec.den_order;
    if resp.len() < n_par {
        return Err(Error::InvalidInput(format!(
            "need at least {n_par} bins for orders ({}, {})",
            spec.num_order, spec.den_order
        )));
    }
    if let Some(w) = &spec.weighting {
        if w.len() != resp.len() {
            return Err(Error::InvalidInput("weighting length mismatch".into()));
        }
    }
    match &spec.delay {
        DelaySpec::Fixed(d) => fit_with_fixed_delay(resp, spec, sample_spec, *d),
        DelaySpec::Estimate { min, max } => {
            if max < min {
                return Err(Error::InvalidInput("empty delay search range".into()));
            }
            // a one-sample delay deficit is representable by shifting the
            // numerator one tap, so the scan ties over a short delay range;
            // keep the largest tied delay (fully extracted transport delay)
            let mut fits = Vec::with_capacity(max - min + 1);
            for d in *min..=*max {
                fits.push(fit_with_fixed_delay(resp, spec, sample_spec, d)?);
            }
            let best = fits.iter().map(|f| f.residual_db).fold(f64::INFINITY, f64::min);
            let tie = best * (1.0 + 1e-6) + 1e-12;
            let chosen = fits.into_iter().rev().find(|f| f.residual_db <= tie);
            Ok(chosen.expect("nonempty delay range"))
        }
    }
}

fn fit_with_fixed_delay(
    resp: &FrequencyResponse,
    spec: &FitSpec,
    sample_spec: &SampleSpec,
    delay: usize,
) -> Result<FitResult> {
    let t_s = sample_spec.t_s();
    let m = resp.len();
    // rotate the delay phase out of the measured response
    let g: Vec<Complex64> = resp
        .value
        .iter()
        .zip(&resp.grid)
        .map(|(v, &f)| v * Complex64::from_polar(1.0, TWO_PI * f * t_s * delay as f64))
        .collect();
    let z: Vec<Complex64> =
        resp.grid.iter().map(|&f| Complex64::from_polar(1.0, -TWO_PI * f * t_s)).collect();
    let base_w: Vec<f64> = match &spec.weighting {
        Some(w) => w.clone(),
        None => g.iter().map(|v| 1.0 / v.norm().max(1e-30)).collect(),
    };
    let nb = spec.num_order + 1;
    let na = spec.den_order;
    let n_par = nb + na;

    let mut den_prev = vec![Complex64::new(1.0, 0.0); m];
    let mut theta = DVector::<f64>::zeros(n_par);
    let mut converged = false;
    for _iter in 0..spec.max_iterations.max(1) {
        // rows: w_i/|den_prev_i| * (num(z_i) - G_i sum a_k z_i^k) = w G_i
        let mut a_mat = DMatrix::<f64>::zeros(2 * m, n_par);
        let mut rhs = DVector::<f64>::zeros(2 * m);
        for i in 0..m {
            let w = base_w[i] / den_prev[i].norm().max(1e-30);
            let mut zp = Complex64::new(1.0, 0.0);
            for k in 0..nb {
                a_mat[(2 * i, k)] = w * zp.re;
                a_mat[(2 * i + 1, k)] = w * zp.im;
                zp *= z[i];
            }
            let mut zp = z[i];
            for k in 0..na {
                let coef = -g[i] * zp;
                a_mat[(2 * i, nb + k)] = w * coef.re;
                a_mat[(2 * i + 1, nb + k)] = w * coef.im;
                zp *= z[i];
            }
            rhs[2 * i] = w * g[i].re;
            rhs[2 * i + 1] = w * g[i].im;
        }
        let svd = a_mat.svd(true, true);
        let next = svd
            .solve(&rhs, 1e-14)
            .map_err(|e| Error::Numerical(format!("singular normal equations in fit: {e}")))?;
        let delta = (&next - &theta).amax();
        let scale = next.amax().max(1e-30);
        theta = next;
        // refresh the denominator weighting
        for i in 0..m {
            let mut den = Complex64::new(1.0, 0.0);
            let mut zp = z[i];
            for k in 0..na {
                den += theta[nb + k] * zp;
                zp *= z[i];
            }
            den_prev[i] = den;
        }
        if delta < spec.tolerance * scale {
            converged = true;
            break;
        }
    }

    let mut num: Vec<f64> = theta.as_slice()[..nb].to_vec();
    let mut den = vec![1.0];
    den.extend_from_slice(&theta.as_slice()[nb..]);

    // stability check, optional root reflection
    let mut stable = poly_roots(&den).iter().all(|p| p.norm() < 1.0);
    if !stable && spec.force_stable {
        den = reflect_unstable(&den);
        stable = true;
        // refit the numerator against the stabilized denominator
        num = refit_numerator(&g, &z, &base_w, &den, nb)?;
    }

    let tf = TransferFunction::new(num, den, delay, t_s)?;
    // weighted RMS misfit in dB over the fitted bins; the per-bin error is
    // the complex deviation relative to the measurement, so phase errors
    // count (a magnitude-only metric cannot tell a delay mismatch from an
    // all-pass factor)
    let mut acc = 0.0;
    let mut wsum = 0.0;
    for i in 0..m {
        let fit_v = tf.response_at(resp.grid[i]);
        let rel = (fit_v - resp.value[i]).norm() / resp.value[i].norm().max(1e-30);
        let err_db = 20.0 * (1.0 + rel).log10();
        acc += base_w[i] * err_db * err_db;
        wsum += base_w[i];
    }
    let residual_db = (acc / wsum.max(1e-30)).sqrt();
    Ok(FitResult { tf, residual_db, converged, stable })
}

/// Reflects denominator roots outside the unit circle to their conjugate
/// reciprocals, preserving the magnitude response shape.
fn reflect_unstable(den: &[f64]) -> Vec<f64> {
    let roots = poly_roots(den);
    let mut out = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let rr = if r.norm() >= 1.0 { r.conj().inv() } else { r };
        // multiply (1 - rr z^-1) into the polynomial
        let mut next = vec![Complex64::new(0.0, 0.0); out.len() + 1];
        for (k, &c) in out.iter().enumerate() {
            next[k] += c;
            next[k + 1] -= c * rr;
        }
        out = next;
    }
    out.iter().map(|c| c.re).collect()
}

fn refit_numerator(
    g: &[Complex64],
    z: &[Complex64],
    w: &[f64],
    den: &[f64],
    nb: usize,
) -> Result<Vec<f64>> {
    let m = g.len();
    let mut a_mat = DMatrix::<f64>::zeros(2 * m, nb);
    let mut rhs = DVector::<f64>::zeros(2 * m);
    for i in 0..m {
        let den_i = crate::plant::poly_eval(den, z[i]);
        let target = g[i] * den_i;
        let mut zp = Complex64::new(1.0, 0.0);
        for k in 0..nb {
            a_mat[(2 * i, k)] = w[i] * zp.re;
            a_mat[(2 * i + 1, k)] = w[i] * zp.im;
            zp *= z[i];
        }
        rhs[2 * i] = w[i] * target.re;
        rhs[2 * i + 1] = w[i] * target.im;
    }
    let svd = a_mat.svd(true, true);
    let sol = svd
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Numerical(format!("numerator refit failed: {e}")))?;
    Ok(sol.as_slice().to_vec())
}

/// Fits a monotone rational nonlinearity to ramp-response data.
///
/// The input range is cropped at the first monotonicity violation of the
/// response, mirroring the practice of discarding the non-monotone tail of
/// the drive range. Orders are `(p, q)`: numerator `b1 x + .. + bp x^p`
/// (no constant term, so F(0) = 0), denominator `1 + c1 x + .. + cq x^q`.
pub fn fit_nonlinearity(
    ramp_input: &[f64],
    response: &[f64],
    order: (usize, usize),
) -> Result<StaticNonlinearity> {
    if ramp_input.len() != response.len() || ramp_input.is_empty() {
        return Err(Error::InvalidInput("nonlinearity fit needs equal-length data".into()));
    }
    let (p, q) = order;
    if p == 0 {
        return Err(Error::InvalidInput("numerator order must be at least 1".into()));
    }
    // crop at the first monotonicity violation
    let mut cut = ramp_input.len();
    for i in 1..response.len() {
        if response[i] <= response[i - 1] {
            cut = i;
            break;
        }
    }
    let x = &ramp_input[..cut];
    let y = &response[..cut];
    if x.len() < p + q + 1 {
        return Err(Error::InvalidInput(format!(
            "only {} monotone points left; need {}",
            x.len(),
            p + q + 1
        )));
    }
    // Levi linearization with reweighting passes:
    // sum_k b_k x^k - y sum_j c_j x^j = y
    let m = x.len();
    let mut den_prev: Vec<f64> = vec![1.0; m];
    let mut num = vec![0.0; p];
    let mut den = vec![0.0; q];
    for _pass in 0..4 {
        let mut a_mat = DMatrix::<f64>::zeros(m, p + q);
        let mut rhs = DVector::<f64>::zeros(m);
        for i in 0..m {
            let w = 1.0 / den_prev[i].abs().max(1e-12);
            let mut xp = x[i];
            for k in 0..p {
                a_mat[(i, k)] = w * xp;
                xp *= x[i];
            }
            let mut xp = x[i];
            for j in 0..q {
                a_mat[(i, p + j)] = -w * y[i] * xp;
                xp *= x[i];
            }
            rhs[i] = w * y[i];
        }
        let svd = a_mat.svd(true, true);
        let sol = svd
            .solve(&rhs, 1e-14)
            .map_err(|e| Error::Numerical(format!("nonlinearity fit failed: {e}")))?;
        num.copy_from_slice(&sol.as_slice()[..p]);
        den.copy_from_slice(&sol.as_slice()[p..]);
        for i in 0..m {
            let mut d = 1.0;
            let mut xp = x[i];
            for &c in &den {
                d += c * xp;
                xp *= x[i];
            }
            den_prev[i] = d;
        }
    }
    let mut num_full = vec![0.0];
    num_full.extend_from_slice(&num);
    let mut den_full = vec![1.0];
    den_full.extend_from_slice(&den);
    StaticNonlinearity::from_rational(num_full, den_full, *x.last().unwrap())
}

/// Options for [`run_identification_campaign`].
#[derive(Debug, Clone)]
pub struct CampaignOptions {
    /// Settling time discarded at the start of each dwell, s.
    pub settle: f64,
    /// Divide the measured response by the known anti-alias instrument
    /// model.
    pub aa_correction: bool,
    /// Scale the modulation amplitude by `1/psi_D(f)` per dwell (the
    /// compensated protocol).
    pub psi_compensation: Option<QuasiSteadyCurve>,
    /// Deliberately construct the plant as `psi(f) * G` by scaling the
    /// effective modulation seen by the plant per dwell.
    pub quasi_steady_plant: Option<QuasiSteadyCurve>,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        CampaignOptions {
            settle: 0.5,
            aa_correction: true,
            psi_compensation: None,
            quasi_steady_plant: None,
        }
    }
}

/// Drives the plant with the compensated amplitude-modulated stepped sine
/// and returns the empirical transfer function estimate at the excited
/// frequencies only.
///
/// The loop runs in the envelope domain: each dwell applies
/// `Finv(B + g_m(t))` to the plant, which applies `F` internally, so the
/// estimate relates the modulation `g_m` to the measured pressure. Each
/// dwell's auto- and cross-spectra are taken over the settled portion by a
/// single-frequency least-squares projection, which is exact at the excited
/// bin.
pub fn run_identification_campaign(
    plant: &mut PlantInstance,
    protocol: &SteppedSineSpec,
    am: &AmSpec,
    options: &CampaignOptions,
) -> Result<FrequencyResponse> {
    let sample_spec = plant.sample_spec();
    protocol.validate(&sample_spec)?;
    if protocol.amplitude <= 0.0 {
        return Err(Error::InvalidInput("no excitation energy: zero modulation amplitude".into()));
    }
    let n_dwell = protocol.samples_per_step(&sample_spec)?;
    let n_settle = (options.settle * sample_spec.f_s).round() as usize;
    if n_settle + 16 >= n_dwell {
        return Err(Error::InvalidInput("dwell too short for the settle window".into()));
    }
    let t_s = sample_spec.t_s();
    let mut grid = Vec::with_capacity(protocol.n_steps);
    let mut value = Vec::with_capacity(protocol.n_steps);
    let mut y_buf = vec![0.0; n_dwell];
    let mut u_buf = vec![0.0; n_dwell];
    for step in 0..protocol.n_steps {
        let f_k = protocol.frequency_of_step(step);
        let comp_gain = match &options.psi_compensation {
            Some(psi) => 1.0 / psi.interp(f_k)?,
            None => 1.0,
        };
        let qs_gain = match &options.quasi_steady_plant {
            Some(psi) => psi.interp(f_k)?,
            None => 1.0,
        };
        let amp = protocol.amplitude * comp_gain;
        for i in 0..n_dwell {
            // the identified input is the reference modulation; the envelope
            // applied to the plant carries the compensation and any
            // quasi-steady construction gain
            let g_m = amp * (TWO_PI * f_k * (i as f64 * t_s)).sin();
            let envelope = am.offset + qs_gain * g_m;
            let (volts, _) = plant.nonlinearity.invert(envelope, InversionMode::Identification)?;
            let y = plant.step(volts)?;
            u_buf[i] = protocol.amplitude * (TWO_PI * f_k * (i as f64 * t_s)).sin();
            y_buf[i] = y;
        }
        let u_tail = &u_buf[n_settle..];
        let y_tail = &y_buf[n_settle..];
        let u_phasor = single_tone_projection(u_tail, f_k, n_settle, t_s)?;
        let y_phasor = single_tone_projection(y_tail, f_k, n_settle, t_s)?;
        let mut g = y_phasor / u_phasor;
        if options.aa_correction {
            g /= plant.aa_response_at(f_k);
        }
        grid.push(f_k);
        value.push(g);
    }
    FrequencyResponse::new(grid, value)
}

/// Least-squares projection of a settled record onto `cos/sin/DC` at one
/// frequency; returns the complex amplitude with the phase convention
/// `x(t) = Re{X e^{j w t}}`.
fn single_tone_projection(x: &[f64], f: f64, k0: usize, t_s: f64) -> Result<Complex64> {
    let n = x.len();
    let mut m = nalgebra::Matrix3::<f64>::zeros();
    let mut b = nalgebra::Vector3::<f64>::zeros();
    for (i, &v) in x.iter().enumerate() {
        let ph = TWO_PI * f * ((k0 + i) as f64 * t_s);
        let row = [ph.cos(), ph.sin(), 1.0];
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] += row[r] * row[c];
            }
            b[r] += row[r] * v;
        }
    }
    let sol = m
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical(format!("degenerate tone projection at {f} Hz (n={n})")))?;
    // a cos + b sin = Re{(a - jb) e^{jwt}}
    Ok(Complex64::new(sol[0], -sol[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::design_model;
    use rand::Rng;
    use rand::SeedableRng;

    fn ss() -> SampleSpec {
        SampleSpec::default()
    }

    fn white(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u1: f64 = rng.gen_range(1e-300..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (TWO_PI * u2).cos()
            })
            .collect()
    }

    #[test]
    fn delay_zero_for_identical_signals() {
        let u = white(1, 20_000);
        let est = estimate_delay(&u, &u).unwrap();
        assert_eq!(est.delay, 0);
        assert!(est.confidence > 3.0);
    }

    #[test]
    fn delay_exact_for_pure_shift() {
        let u = white(2, 20_000);
        let mut y = vec![0.0; u.len()];
        for k in 36..u.len() {
            y[k] = u[k - 36];
        }
        let est = estimate_delay(&u, &y).unwrap();
        assert_eq!(est.delay, 36);
    }

    #[test]
    fn delay_within_one_sample_for_default_plant() {
        // drive the noise-free plant with a white envelope; the onset of the
        // deconvolved impulse response sits one sample after the transport
        // delay (the model numerator starts at z^-1)
        let mut plant = PlantInstance::design_default(3).unwrap();
        let n = 30_000;
        let u = white(3, n);
        let (lo, hi) = plant.nonlinearity.output_range();
        let mid = 0.5 * (lo + hi);
        let scale = 0.2 * (hi - lo);
        let mut y = Vec::with_capacity(n);
        let mut u_used = Vec::with_capacity(n);
        for &v in &u {
            let env = mid + scale * v.clamp(-2.0, 2.0);
            let (volts, _) =
                plant.nonlinearity.invert(env, InversionMode::Identification).unwrap();
            y.push(plant.step(volts).unwrap());
            u_used.push(env - mid);
        }
        let est = estimate_delay(&u_used, &y).unwrap();
        assert!(
            (est.delay as i64 - 36).abs() <= 1,
            "estimated delay {} (expected 36 +/- 1)",
            est.delay
        );
    }

    #[test]
    fn delay_errors_on_flat_correlation() {
        let u = vec![0.0; 1000];
        let y = vec![0.0; 1000];
        assert!(estimate_delay(&u, &y).is_err());
    }

    #[test]
    fn fit_recovers_design_model_coefficients() {
        // analytic response of the design model (delay removed), orders (1,4)
        let tf = design_model();
        let grid: Vec<f64> = (1..=65).map(|k| 30.0 * k as f64).collect();
        let delay_free = TransferFunction { delay: 0, ..tf.clone() };
        let resp = delay_free.frequency_response(&grid).unwrap();
        let fit = fit_rational_tf(&resp, &FitSpec::new(1, 4), &ss()).unwrap();
        assert!(fit.converged);
        assert!(fit.stable);
        for (k, &d) in tf.den.iter().enumerate() {
            assert!(
                (fit.tf.den[k] - d).abs() < 1e-3 * d.abs().max(1e-3),
                "den[{k}] {} vs {d}",
                fit.tf.den[k]
            );
        }
        assert!((fit.tf.num[1] - tf.num[1]).abs() < 1e-6 * tf.num[1].abs());
        assert!(fit.tf.num[0].abs() < 1e-12);
        assert!(fit.residual_db < 1e-6);
    }

    #[test]
    fn fit_constant_response_zero_order() {
        let grid: Vec<f64> = (1..=20).map(|k| 100.0 * k as f64).collect();
        let resp =
            FrequencyResponse::new(grid.clone(), vec![Complex64::new(2.5, 0.0); grid.len()])
                .unwrap();
        let fit = fit_rational_tf(&resp, &FitSpec::new(0, 0), &ss()).unwrap();
        assert!((fit.tf.num[0] - 2.5).abs() < 1e-9);
        assert_eq!(fit.tf.den, vec![1.0]);
    }

    #[test]
    fn fit_first_order_with_multiplicative_noise() {
        let a = 0.992;
        let tf = TransferFunction::new(vec![0.0, 1.0 - a], vec![1.0, -a], 0, 2e-5).unwrap();
        let grid: Vec<f64> = (1..=60).map(|k| 20.0 * k as f64).collect();
        let clean = tf.frequency_response(&grid).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let noisy = FrequencyResponse::new(
            grid.clone(),
            clean
                .value
                .iter()
                .map(|v| {
                    let eps: f64 = rng.gen_range(-0.01..0.01);
                    v * (1.0 + eps)
                })
                .collect(),
        )
        .unwrap();
        let fit = fit_rational_tf(&noisy, &FitSpec::new(1, 1), &ss()).unwrap();
        let pole = fit.tf.poles()[0].re;
        assert!((pole - a).abs() < 0.02 * a, "pole {pole} vs {a}");
    }

    #[test]
    fn fit_idempotence() {
        let tf = design_model();
        let delay_free = TransferFunction { delay: 0, ..tf };
        let grid: Vec<f64> = (1..=65).map(|k| 30.0 * k as f64).collect();
        let resp = delay_free.frequency_response(&grid).unwrap();
        let fit1 = fit_rational_tf(&resp, &FitSpec::new(1, 4), &ss()).unwrap();
        let resp2 = TransferFunction { delay: 0, ..fit1.tf.clone() }
            .frequency_response(&grid)
            .unwrap();
        let fit2 = fit_rational_tf(&resp2, &FitSpec::new(1, 4), &ss()).unwrap();
        for k in 0..5 {
            assert!(
                (fit1.tf.den[k] - fit2.tf.den[k]).abs() < 1e-9,
                "den[{k}] drifted: {} vs {}",
                fit1.tf.den[k],
                fit2.tf.den[k]
            );
        }
    }

    #[test]
    fn fit_delay_scan_recovers_true_delay() {
        let tf = design_model();
        let grid: Vec<f64> = (1..=65).map(|k| 30.0 * k as f64).collect();
        let resp = tf.frequency_response(&grid).unwrap(); // delay included
        let mut spec = FitSpec::new(1, 4);
        spec.delay = DelaySpec::Estimate { min: 30, max: 42 };
        let fit = fit_rational_tf(&resp, &spec, &ss()).unwrap();
        assert_eq!(fit.tf.delay, 36);
        for (k, &d) in tf.den.iter().enumerate() {
            assert!((fit.tf.den[k] - d).abs() < 1e-6 * d.abs().max(1e-6));
        }
    }

    #[test]
    fn delay_and_fit_separate_equals_joint() {
        // delay-removed fit equals the delay-scan fit for noise-free data
        let tf = design_model();
        let grid: Vec<f64> = (1..=65).map(|k| 30.0 * k as f64).collect();
        let with_delay = tf.frequency_response(&grid).unwrap();
        let mut scan_spec = FitSpec::new(1, 4);
        scan_spec.delay = DelaySpec::Estimate { min: 34, max: 38 };
        let joint = fit_rational_tf(&with_delay, &scan_spec, &ss()).unwrap();

        // separate route: estimate the delay first, then fit the same
        // measured response with it held fixed
        let mut fixed_spec = FitSpec::new(1, 4);
        fixed_spec.delay = DelaySpec::Fixed(36);
        let separate = fit_rational_tf(&with_delay, &fixed_spec, &ss()).unwrap();
        for k in 0..5 {
            assert!(
                (joint.tf.den[k] - separate.tf.den[k]).abs() < 1e-6,
                "den[{k}] {} vs {}",
                joint.tf.den[k],
                separate.tf.den[k]
            );
        }
    }

    #[test]
    fn nonlinearity_fit_self_consistency() {
        let truth = StaticNonlinearity::default_curve();
        let x: Vec<f64> = (0..=200).map(|i| 0.8 * i as f64 / 200.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| truth.eval(v).unwrap()).collect();
        let fit = fit_nonlinearity(&x, &y, (2, 2)).unwrap();
        for (k, &c) in truth.num.iter().enumerate().skip(1) {
            assert!((fit.num[k] - c).abs() < 0.01 * c.abs(), "num[{k}] {} vs {c}", fit.num[k]);
        }
        for (k, &c) in truth.den.iter().enumerate().skip(1) {
            assert!((fit.den[k] - c).abs() < 0.01 * c.abs(), "den[{k}] {} vs {c}", fit.den[k]);
        }
    }

    #[test]
    fn nonlinearity_fit_linear_data_stays_linear() {
        let x: Vec<f64> = (0..=50).map(|i| 0.8 * i as f64 / 50.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| 3.0 * v).collect();
        let fit = fit_nonlinearity(&x, &y, (2, 2)).unwrap();
        assert!((fit.num[1] - 3.0).abs() < 1e-6);
        assert!(fit.num[2].abs() < 1e-6);
        assert!(fit.den[1].abs() < 1e-6);
        assert!(fit.den[2].abs() < 1e-6);
    }

    #[test]
    fn nonlinearity_fit_crops_non_monotone_tail() {
        let truth = StaticNonlinearity::default_curve();
        let mut x: Vec<f64> = (0..=100).map(|i| 0.8 * i as f64 / 100.0).collect();
        let mut y: Vec<f64> = x.iter().map(|&v| truth.eval(v).unwrap()).collect();
        // extend past 0.8 V with a forced non-monotone tail
        for i in 1..=20 {
            let v = 0.8 + 0.01 * i as f64;
            x.push(v);
            y.push(truth.eval(0.8).unwrap() - 0.5 * i as f64);
        }
        let fit = fit_nonlinearity(&x, &y, (2, 2)).unwrap();
        assert!((fit.x_max - 0.8).abs() < 1e-9, "domain cropped at {}", fit.x_max);
    }

    #[test]
    fn campaign_errors_on_zero_amplitude() {
        let mut plant = PlantInstance::design_default(0).unwrap();
        let mut proto = SteppedSineSpec::identification_default();
        proto.amplitude = 0.0;
        let am = AmSpec { f_c: 2750.0, offset: 200.0 };
        assert!(run_identification_campaign(
            &mut plant,
            &proto,
            &am,
            &CampaignOptions::default()
        )
        .is_err());
    }

    #[test]
    fn campaign_noise_free_matches_design_response() {
        // short campaign (8 dwells) against the analytic response
        let mut plant = PlantInstance::design_default(0).unwrap();
        let proto = SteppedSineSpec {
            amplitude: 60.0,
            f_start: 100.0,
            step: 250.0,
            dwell: 1.0,
            n_steps: 8,
        };
        let am = AmSpec { f_c: 2750.0, offset: 200.0 };
        let resp =
            run_identification_campaign(&mut plant, &proto, &am, &CampaignOptions::default())
                .unwrap();
        let truth = design_model();
        for (k, &f) in resp.grid.iter().enumerate() {
            let expect = truth.response_at(f);
            let got = resp.value[k];
            let mag_err_db = (20.0 * (got.norm() / expect.norm()).log10()).abs();
            let mut ph_err = (got.arg() - expect.arg()).abs();
            if ph_err > std::f64::consts::PI {
                ph_err = TWO_PI - ph_err;
            }
            assert!(mag_err_db < 0.5, "magnitude error {mag_err_db} dB at {f} Hz");
            assert!(
                ph_err.to_degrees() < 3.0,
                "phase error {} deg at {f} Hz",
                ph_err.to_degrees()
            );
        }
    }
}
