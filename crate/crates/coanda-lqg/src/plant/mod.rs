//! Simulated Hammerstein plant: static input nonlinearity, deflection-curve
//! physics, quasi-steady response, identified LTI dynamics with transport
//! delay, and seeded turbulence noise.

pub mod tf;

pub use tf::{poly_eval, poly_roots, TfState, TransferFunction};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::filters::{Biquad, Filter, IirCascade, OnePole};
use crate::dsp::SampleSpec;
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Loop and sampling rate used by the default models, Hz.
pub const DESIGN_FS: f64 = 50_000.0;
/// Transport delay of the design plant, samples.
pub const DESIGN_DELAY: usize = 36;
/// Numerator coefficient of the design plant (on `z^-1`).
pub const DESIGN_B1: f64 = 4.86e-6;

/// Design-plant denominator, ascending powers of `z^-1`.
///
/// Constructed from two complex pole pairs `(z^2 - s z + m)`: radius 0.9788
/// at 864 Hz and radius 0.9687 at 171 Hz. Expanding the pairs keeps the
/// model stable by construction; defining the denominator directly by its
/// three-significant-figure coefficient form does not (those digits round
/// the same way but put a pole pair at radius 1.205).
pub fn design_denominator() -> [f64; 5] {
    let (s1, m1) = (1.94601_f64, 0.958_f64);
    let (s2, m2) = (1.93699_f64, 0.899_f64 / 0.958_f64);
    [
        1.0,
        -(s1 + s2),
        m1 + m2 + s1 * s2,
        -(s1 * m2 + s2 * m1),
        m1 * m2,
    ]
}

/// The 40 lpm design-point plant model: fourth-order dynamics behind a
/// 36-sample transport delay at 50 kHz sampling.
pub fn design_model() -> TransferFunction {
    TransferFunction {
        num: vec![0.0, DESIGN_B1],
        den: design_denominator().to_vec(),
        delay: DESIGN_DELAY,
        t_s: 1.0 / DESIGN_FS,
    }
}

/// Inversion behaviour when a requested output leaves the invertible range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversionMode {
    /// Out-of-range values are a hard error (open-loop identification).
    Identification,
    /// Out-of-range values saturate to the range edge and raise a flag.
    ClosedLoop,
}

/// Nozzle geometry for the steady deflection relation.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct JetGeometry {
    /// Inlet mass flow, kg/s.
    pub m_dot: f64,
    /// Air density, kg/m^3.
    pub rho: f64,
    /// Nozzle width, m.
    pub b: f64,
    /// Nozzle height, m.
    pub d: f64,
}

/// Density used for the slpm -> kg/s conversion, kg/m^3.
pub const RHO_STANDARD: f64 = 1.2;

impl JetGeometry {
    /// Geometry with the mass flow given in standard litres per minute.
    pub fn from_slpm(slpm: f64) -> Result<Self> {
        let geom = JetGeometry {
            m_dot: slpm / 60_000.0 * RHO_STANDARD,
            rho: RHO_STANDARD,
            b: 1.6e-3,
            d: 4.8e-3,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_dot <= 0.0 || self.rho <= 0.0 || self.b <= 0.0 || self.d <= 0.0 {
            return Err(Error::InvalidInput("jet geometry fields must be positive".into()));
        }
        Ok(())
    }
}

/// Pressure difference across a curved jet attached with radius `r_attach`:
/// `dP = (m_dot^2 / (rho b d^2)) / R`.
pub fn jet_pressure_difference(geom: &JetGeometry, r_attach: f64) -> Result<f64> {
    geom.validate()?;
    if r_attach <= 0.0 {
        return Err(Error::InvalidInput("attachment radius must be positive".into()));
    }
    Ok((geom.m_dot * geom.m_dot / (geom.rho * geom.b * geom.d * geom.d)) / r_attach)
}

/// Monotone static input nonlinearity `F(x)` with a tabulated inverse.
///
/// `F` is a rational function `(p1 x + p2 x^2 + ...)/(1 + q1 x + ...)` with
/// `F(0) = 0`, strictly increasing on `[0, x_max]`. The inverse is a linear
/// interpolation LUT on a dense grid of `(F(x), x)` pairs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StaticNonlinearity {
    /// Numerator coefficients, ascending powers, constant term included.
    pub num: Vec<f64>,
    /// Denominator coefficients, ascending powers; first entry 1.
    pub den: Vec<f64>,
    /// Upper edge of the input domain, V.
    pub x_max: f64,
    lut_x: Vec<f64>,
    lut_y: Vec<f64>,
}

/// LUT size for the tabulated inverse.
const NL_LUT_POINTS: usize = 4097;

impl StaticNonlinearity {
    pub fn from_rational(num: Vec<f64>, den: Vec<f64>, x_max: f64) -> Result<Self> {
        if x_max <= 0.0 {
            return Err(Error::InvalidInput("x_max must be positive".into()));
        }
        if den.first() != Some(&1.0) {
            return Err(Error::InvalidInput("nonlinearity denominator must start with 1".into()));
        }
        let mut nl = StaticNonlinearity { num, den, x_max, lut_x: Vec::new(), lut_y: Vec::new() };
        if nl.eval_raw(0.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("nonlinearity must satisfy F(0) = 0".into()));
        }
        let mut lut_x = Vec::with_capacity(NL_LUT_POINTS);
        let mut lut_y = Vec::with_capacity(NL_LUT_POINTS);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..NL_LUT_POINTS {
            let x = x_max * i as f64 / (NL_LUT_POINTS - 1) as f64;
            let y = nl.eval_raw(x);
            if y <= prev {
                return Err(Error::InvalidInput(format!(
                    "nonlinearity is not strictly increasing near x = {x:.4}"
                )));
            }
            prev = y;
            lut_x.push(x);
            lut_y.push(y);
        }
        nl.lut_x = lut_x;
        nl.lut_y = lut_y;
        Ok(nl)
    }

    /// Identity map on a wide domain; used as the trivial compensator.
    pub fn identity() -> Self {
        StaticNonlinearity::from_rational(vec![0.0, 1.0], vec![1.0], 1e9).unwrap()
    }

    /// Default drive-to-deflection curve: saturating growth on [0, 0.8] V,
    /// scaled so the full-scale deflection drive reaches about 500 units.
    pub fn default_curve() -> Self {
        StaticNonlinearity::from_rational(
            vec![0.0, 1200.0, 660.0],
            vec![1.0, 1.5, 0.9],
            0.8,
        )
        .unwrap()
    }

    fn eval_raw(&self, x: f64) -> f64 {
        let num = self.num.iter().rev().fold(0.0, |acc, &c| acc * x + c);
        let den = self.den.iter().rev().fold(0.0, |acc, &c| acc * x + c);
        num / den
    }

    /// `F(x)`; `x` must lie in the domain.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(0.0..=self.x_max * (1.0 + 1e-12)).contains(&x) {
            return Err(Error::InvalidInput(format!(
                "nonlinearity input {x} outside [0, {}]",
                self.x_max
            )));
        }
        Ok(self.eval_raw(x.min(self.x_max)))
    }

    /// Range of `F` over the domain: `[F(0), F(x_max)] = [0, F(x_max)]`.
    pub fn output_range(&self) -> (f64, f64) {
        (self.lut_y[0], *self.lut_y.last().unwrap())
    }

    /// `F^-1(y)` via the LUT. Returns the drive and whether clamping was
    /// applied; out-of-range `y` is an error in identification mode.
    pub fn invert(&self, y: f64, mode: InversionMode) -> Result<(f64, bool)> {
        let (lo, hi) = self.output_range();
        if y < lo || y > hi {
            match mode {
                InversionMode::Identification => {
                    return Err(Error::InvalidInput(format!(
                        "inverse input {y} outside F range [{lo}, {hi}]"
                    )))
                }
                InversionMode::ClosedLoop => {
                    return Ok((if y < lo { self.lut_x[0] } else { self.x_max }, true))
                }
            }
        }
        // binary search on the monotone LUT
        let idx = match self.lut_y.binary_search_by(|v| v.partial_cmp(&y).unwrap()) {
            Ok(i) => return Ok((self.lut_x[i], false)),
            Err(i) => i,
        };
        let (i0, i1) = (idx - 1, idx);
        let t = (y - self.lut_y[i0]) / (self.lut_y[i1] - self.lut_y[i0]);
        Ok((self.lut_x[i0] + t * (self.lut_x[i1] - self.lut_x[i0]), false))
    }
}

/// Steady-state deflection versus excitation tone frequency at one flow rate.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DeflectionCurve {
    /// Excitation tone frequency, Hz.
    pub grid: Vec<f64>,
    /// Steady-state deflection pressure, Pa.
    pub deflection: Vec<f64>,
    /// Flow-rate label, lpm.
    pub flow_rate_lpm: f64,
}

impl DeflectionCurve {
    pub fn new(grid: Vec<f64>, deflection: Vec<f64>, flow_rate_lpm: f64) -> Result<Self> {
        if grid.len() != deflection.len() || grid.len() < 2 {
            return Err(Error::InvalidInput("deflection curve needs matching grids".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("deflection grid must be strictly increasing".into()));
        }
        if !(grid[0] <= 1300.0 && *grid.last().unwrap() >= 4800.0) {
            return Err(Error::InvalidInput(
                "deflection grid must cover [1300, 4800] Hz".into(),
            ));
        }
        if deflection.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("deflection values must be finite".into()));
        }
        Ok(DeflectionCurve { grid, deflection, flow_rate_lpm })
    }

    /// Synthetic default: smooth band curve peaked near 2.2 kHz spanning the
    /// excitable band.
    pub fn default_synthetic(flow_rate_lpm: f64) -> Self {
        let grid: Vec<f64> = (0..=144).map(|i| 1250.0 + 25.0 * i as f64).collect();
        let deflection = grid
            .iter()
            .map(|&f| 60.0 * (0.35 + 0.65 * (-((f - 2200.0) / 900.0).powi(2)).exp()))
            .collect();
        DeflectionCurve { grid, deflection, flow_rate_lpm }
    }

    /// Linear interpolation; errors outside the grid.
    pub fn interp(&self, f: f64) -> Result<f64> {
        interp_checked(&self.grid, &self.deflection, f)
            .ok_or_else(|| Error::InvalidInput(format!("frequency {f} Hz outside curve grid")))
    }
}

/// Magnitude-only quasi-steady response on a modulation-frequency grid.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct QuasiSteadyCurve {
    /// Modulation frequency, Hz.
    pub grid: Vec<f64>,
    /// Effective magnitude, dimensionless (1 at low frequency).
    pub psi: Vec<f64>,
}

impl QuasiSteadyCurve {
    pub fn new(grid: Vec<f64>, psi: Vec<f64>) -> Result<Self> {
        if grid.len() != psi.len() || grid.len() < 2 {
            return Err(Error::InvalidInput("quasi-steady curve needs matching grids".into()));
        }
        if psi.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput("psi must be finite and positive".into()));
        }
        Ok(QuasiSteadyCurve { grid, psi })
    }

    pub fn interp(&self, f: f64) -> Result<f64> {
        interp_checked(&self.grid, &self.psi, f)
            .ok_or_else(|| Error::InvalidInput(format!("frequency {f} Hz outside psi grid")))
    }

    pub fn psi_db(&self) -> Vec<f64> {
        self.psi.iter().map(|v| 20.0 * v.log10()).collect()
    }
}

fn interp_checked(grid: &[f64], values: &[f64], x: f64) -> Option<f64> {
    if x < grid[0] || x > *grid.last().unwrap() {
        return None;
    }
    let idx = match grid.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
        Ok(i) => return Some(values[i]),
        Err(i) => i,
    };
    let (i0, i1) = (idx - 1, idx);
    let t = (x - grid[i0]) / (grid[i1] - grid[i0]);
    Some(values[i0] + t * (values[i1] - values[i0]))
}

/// Settings for [`simulate_quasi_steady`].
#[derive(Debug, Clone, Copy)]
pub struct QuasiSteadyOptions {
    /// Demodulation low-pass cutoff, Hz. Must sit well above `f_max` so the
    /// passband stays flat over the output band, while rejecting the
    /// double-carrier images enough that they do not alias into it.
    pub lpf_cutoff: f64,
    /// Demodulation low-pass order (even).
    pub lpf_order: usize,
    /// Decimation factor before the periodogram.
    pub decimate: usize,
    /// Output grid upper edge, Hz.
    pub f_max: f64,
    /// Output grid spacing, Hz.
    pub f_step: f64,
    /// PSD smoothing half-width, Hz; averages over the chirp's Fresnel
    /// ripple.
    pub smooth_hz: f64,
    /// Normalization reference frequency, Hz (psi = 1 there).
    pub f_ref: f64,
}

impl Default for QuasiSteadyOptions {
    fn default() -> Self {
        QuasiSteadyOptions {
            lpf_cutoff: 2250.0,
            lpf_order: 8,
            decimate: 16,
            f_max: 1350.0,
            f_step: 1.0,
            smooth_hz: 4.0,
            f_ref: 30.0,
        }
    }
}

/// Derives the quasi-steady response from a static deflection curve.
///
/// Two tones start at the carrier frequency out of phase and sweep apart at
/// `sweep_rate`; their amplitudes track the deflection curve, the sum is
/// demodulated by the carrier, and the PSD of the baseband signal gives the
/// effective magnitude at each modulation frequency. The curve is normalized
/// to 1 at `f_ref`.
pub fn simulate_quasi_steady(
    curve: &DeflectionCurve,
    f_c: f64,
    sweep_rate: f64,
    duration: f64,
    sample_spec: &SampleSpec,
    opts: &QuasiSteadyOptions,
) -> Result<QuasiSteadyCurve> {
    let rate = sweep_rate.abs();
    if rate <= 0.0 || duration <= 0.0 {
        return Err(Error::InvalidInput("sweep rate and duration must be positive".into()));
    }
    let span = rate * duration;
    if f_c - span < curve.grid[0] || f_c + span > *curve.grid.last().unwrap() {
        return Err(Error::InvalidInput(format!(
            "sweep [{}, {}] Hz exits the deflection grid [{}, {}] Hz",
            f_c - span,
            f_c + span,
            curve.grid[0],
            curve.grid.last().unwrap()
        )));
    }
    if opts.f_max > span {
        return Err(Error::InvalidInput(format!(
            "psi grid edge {} Hz beyond swept span {} Hz",
            opts.f_max, span
        )));
    }
    let t_s = sample_spec.t_s();
    let n = (duration * sample_spec.f_s).round() as usize;

    // counter-sweeping tone pair, out of phase, amplitudes off the curve
    let mut signal = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * t_s;
        let f_dn = f_c - rate * t;
        let f_up = f_c + rate * t;
        let a_dn = curve.interp(f_dn)?;
        let a_up = curve.interp(f_up)?;
        let ph_dn = TWO_PI * (f_c * t - 0.5 * rate * t * t);
        let ph_up = TWO_PI * (f_c * t + 0.5 * rate * t * t);
        signal.push(a_dn * ph_dn.cos() - a_up * ph_up.cos());
    }

    // demodulate on the carrier and decimate to the baseband rate
    let mixed: Vec<f64> = signal
        .iter()
        .enumerate()
        .map(|(k, &x)| 2.0 * x * (TWO_PI * f_c * (k as f64 * t_s)).sin())
        .collect();
    if opts.f_max >= opts.lpf_cutoff {
        return Err(Error::InvalidInput("psi grid edge must sit below the lpf cutoff".into()));
    }
    let mut lp = IirCascade::butterworth_lowpass(opts.lpf_order, opts.lpf_cutoff, sample_spec.f_s)?;
    let base = lp.apply(&mixed);
    let dec: Vec<f64> = base.iter().step_by(opts.decimate).cloned().collect();
    let fs_dec = sample_spec.f_s / opts.decimate as f64;
    if opts.f_max >= fs_dec / 2.0 {
        return Err(Error::InvalidInput("decimated rate too low for the psi grid".into()));
    }

    // zero-padded periodogram
    let n_fft = dec.len().next_power_of_two();
    let mut padded = dec;
    padded.resize(n_fft, 0.0);
    let spec = fft_psd(&padded)?;
    let df = fs_dec / n_fft as f64;

    // average the raw periodogram over each output cell: the smoothing
    // window spans the chirp's Fresnel ripple so the envelope survives
    let n_out = (opts.f_max / opts.f_step).round() as usize + 1;
    let mut grid = Vec::with_capacity(n_out);
    let mut power = Vec::with_capacity(n_out);
    let half_cell = opts.smooth_hz.max(opts.f_step / 2.0);
    for i in 0..n_out {
        let f = i as f64 * opts.f_step;
        let b0 = (((f - half_cell) / df).floor().max(0.0)) as usize;
        let b1 = (((f + half_cell) / df).ceil() as usize).min(n_fft / 2);
        let mean = spec[b0..=b1].iter().sum::<f64>() / (b1 - b0 + 1) as f64;
        grid.push(f);
        power.push(mean);
    }
    let p_ref = interp_checked(&grid, &power, opts.f_ref)
        .ok_or_else(|| Error::InvalidInput("psi reference frequency outside grid".into()))?;
    if p_ref <= 0.0 {
        return Err(Error::Numerical("no energy at the psi reference frequency".into()));
    }
    QuasiSteadyCurve::new(grid, power.iter().map(|p| (p / p_ref).sqrt().max(1e-9)).collect())
}

fn fft_psd(x: &[f64]) -> Result<Vec<f64>> {
    let spec = crate::fft::fft_real(x)?;
    Ok(spec[..=x.len() / 2].iter().map(|c| c.norm_sqr()).collect())
}

/// Noise configuration for a simulated plant.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of the process noise entering at the plant input
    /// (drive units).
    pub process_sigma: f64,
    /// Standard deviation of the colored sensor noise, Pa.
    pub sensor_sigma: f64,
    /// Sensor-noise coloring resonance, Hz.
    pub shaping_peak_hz: f64,
    /// Coloring pole radius (0..1); larger is narrower-band.
    pub shaping_radius: f64,
    /// RNG seed.
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless(seed: u64) -> Self {
        NoiseSpec {
            process_sigma: 0.0,
            sensor_sigma: 0.0,
            shaping_peak_hz: 650.0,
            shaping_radius: 0.985,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.process_sigma < 0.0 || self.sensor_sigma < 0.0 {
            return Err(Error::InvalidInput("noise sigmas must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.shaping_radius) {
            return Err(Error::InvalidInput("shaping radius must be in [0, 1)".into()));
        }
        Ok(())
    }
}

impl Default for NoiseSpec {
    /// Jet turbulence defaults: colored sensor noise peaked near 650 Hz.
    fn default() -> Self {
        NoiseSpec {
            process_sigma: 0.6,
            sensor_sigma: 0.8,
            shaping_peak_hz: 650.0,
            shaping_radius: 0.985,
            seed: 0,
        }
    }
}

/// One simulated Hammerstein plant: static nonlinearity, transport-delay
/// FIFO, LTI difference equation, noise injection, anti-alias model, and the
/// unforced DC level.
#[derive(Debug, Clone)]
pub struct PlantInstance {
    pub nonlinearity: StaticNonlinearity,
    pub dynamics: TransferFunction,
    pub noise: NoiseSpec,
    /// Sensor DC level with no excitation, Pa.
    pub x_unforced: f64,
    /// Flow-rate label, lpm.
    pub flow_rate_lpm: f64,
    /// Optional extra first-order corner on the drive path (off-design flow
    /// rates); unity DC gain.
    corner: Option<OnePole>,
    state: TfState,
    aa_filter: OnePole,
    shaper: Biquad,
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl PlantInstance {
    pub fn new(
        nonlinearity: StaticNonlinearity,
        dynamics: TransferFunction,
        noise: NoiseSpec,
        x_unforced: f64,
        flow_rate_lpm: f64,
        corner_hz: Option<f64>,
    ) -> Result<Self> {
        noise.validate()?;
        let fs = 1.0 / dynamics.t_s;
        let state = TfState::new(&dynamics);
        let aa_filter = OnePole::lowpass(fs / 2.0, fs)?;
        let shaper = Biquad::resonator(noise.shaping_peak_hz, noise.shaping_radius, fs)?;
        let corner = corner_hz.map(|f| OnePole::lowpass(f, fs)).transpose()?;
        let rng = ChaCha8Rng::seed_from_u64(noise.seed);
        Ok(PlantInstance {
            nonlinearity,
            dynamics,
            noise,
            x_unforced,
            flow_rate_lpm,
            corner,
            state,
            aa_filter,
            shaper,
            rng,
            normal: Normal::new(0.0, 1.0).map_err(|e| Error::Numerical(e.to_string()))?,
        })
    }

    /// The default 40 lpm plant, noise-free.
    pub fn design_default(seed: u64) -> Result<Self> {
        PlantInstance::new(
            StaticNonlinearity::default_curve(),
            design_model(),
            NoiseSpec::noiseless(seed),
            0.0,
            40.0,
            None,
        )
    }

    /// Resets dynamic state and reseeds the noise stream.
    pub fn reset(&mut self, seed: u64) {
        self.state.reset();
        self.aa_filter.reset();
        self.shaper.reset();
        if let Some(c) = &mut self.corner {
            c.reset();
        }
        self.noise.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Sampling spec of this plant.
    pub fn sample_spec(&self) -> SampleSpec {
        SampleSpec { f_s: 1.0 / self.dynamics.t_s }
    }

    /// Anti-alias measurement-model response at `f` (known instrument model;
    /// identification campaigns divide it back out).
    pub fn aa_response_at(&self, f: f64) -> num_complex::Complex64 {
        let p = self.aa_filter.pole;
        let z1 =
            num_complex::Complex64::from_polar(1.0, -TWO_PI * f * self.dynamics.t_s);
        num_complex::Complex64::new(1.0 - p, 0.0) / (num_complex::Complex64::new(1.0, 0.0) - z1 * p)
    }

    /// Advances the plant one sample.
    ///
    /// The drive envelope (volts) passes through `F`, the transport-delay
    /// FIFO and the LTI difference equation; process noise enters at the
    /// dynamics input, colored sensor noise adds at the output, the
    /// anti-alias model filters the sum, and the unforced DC level shifts it.
    pub fn step(&mut self, envelope_volts: f64) -> Result<f64> {
        let mut drive = self.nonlinearity.eval(envelope_volts)?;
        if let Some(c) = &mut self.corner {
            drive = c.process(drive);
        }
        let w = if self.noise.process_sigma > 0.0 {
            self.noise.process_sigma * self.normal.sample(&mut self.rng)
        } else {
            0.0
        };
        let y = self.state.step_with_disturbance(drive, w);
        let v = if self.noise.sensor_sigma > 0.0 {
            self.noise.sensor_sigma * self.shaper.process(self.normal.sample(&mut self.rng))
        } else {
            0.0
        };
        Ok(self.aa_filter.process(y + v) + self.x_unforced)
    }
}

/// One entry of a plant-bank configuration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BankEntry {
    pub flow_rate_lpm: f64,
    /// DC-gain multiplier relative to the design model.
    pub gain_scale: f64,
    /// Optional extra first-order corner, Hz.
    pub corner_hz: Option<f64>,
}

/// Configuration for [`make_plant_bank`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BankConfig {
    pub entries: Vec<BankEntry>,
    pub noise: NoiseSpec,
    pub x_unforced: f64,
}

impl BankConfig {
    /// The flow-rate sweep bank: broad DC-gain maximum near 31.5 lpm and a
    /// drive-path corner that slows with falling flow rate. The 40 lpm entry
    /// is exactly the design model.
    pub fn default_sweep() -> Self {
        let rates = [19.0, 24.0, 28.0, 31.5, 35.0, 40.0, 45.0, 50.0, 54.0];
        let raw = |r: f64| 1.0 + 0.5 * (-((r - 31.5) / 10.0).powi(2)).exp();
        let entries = rates
            .iter()
            .map(|&r| BankEntry {
                flow_rate_lpm: r,
                gain_scale: raw(r) / raw(40.0),
                corner_hz: if r == 40.0 { None } else { Some(600.0 * (r / 40.0).powf(1.5)) },
            })
            .collect();
        BankConfig { entries, noise: NoiseSpec::default(), x_unforced: 0.0 }
    }
}

/// Builds the flow-rate plant bank. The 40 lpm design entry must be present
/// (gain 1, no extra corner) and is the exact design model.
pub fn make_plant_bank(config: &BankConfig) -> Result<Vec<PlantInstance>> {
    let has_design = config.entries.iter().any(|e| {
        (e.flow_rate_lpm - 40.0).abs() < 1e-9 && (e.gain_scale - 1.0).abs() < 1e-12
    });
    if !has_design {
        return Err(Error::InvalidInput(
            "plant bank must contain the 40 lpm design entry with unit gain".into(),
        ));
    }
    let mut bank = Vec::with_capacity(config.entries.len());
    for entry in &config.entries {
        let mut tf = design_model();
        for b in &mut tf.num {
            *b *= entry.gain_scale;
        }
        bank.push(PlantInstance::new(
            StaticNonlinearity::default_curve(),
            tf,
            config.noise.clone(),
            config.x_unforced,
            entry.flow_rate_lpm,
            entry.corner_hz,
        )?);
    }
    bank.sort_by(|a, b| a.flow_rate_lpm.partial_cmp(&b.flow_rate_lpm).unwrap());
    Ok(bank)
}
