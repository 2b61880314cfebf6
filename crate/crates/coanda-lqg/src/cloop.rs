//! Closed-loop runtime and experiment harness: observer plus state feedback
//! with feed-forward, saturation, and anti-windup; step, input-disturbance,
//! and flow-rate-sweep experiments with response metrics.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::control::AugmentedModel;
use crate::dsp::filters::{filtfilt, Biquad};
use crate::plant::{InversionMode, PlantInstance};
use crate::{member_seed, Error, Result};

/// Observer update form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ObserverForm {
    /// One-step predictor: `xhat+ = A xhat + B du + K_f (y' - C xhat)`.
    Predictor,
    /// Current estimator: predict, then correct with the fresh measurement.
    Current,
}

/// Everything the control law needs at run time.
#[derive(Debug, Clone)]
pub struct ControlLawConfig {
    /// State-feedback gain on the augmented state estimate.
    pub k_lqr: DVector<f64>,
    /// Observer gain, (n+1) x 2 (predictor form).
    pub k_f: DMatrix<f64>,
    /// Current-estimator gain, used when `observer` is `Current`.
    pub l_f: DMatrix<f64>,
    /// Feed-forward gain.
    pub alpha: f64,
    /// Model DC gain, output units per drive unit.
    pub k_dc: f64,
    /// Unforced sensor DC level, Pa.
    pub x_unforced: f64,
    /// Reference deflection, Pa.
    pub reference: f64,
    /// Drive saturation limits, V.
    pub sat_lo_v: f64,
    pub sat_hi_v: f64,
    /// Anti-windup gain.
    pub k_aw: f64,
    pub observer: ObserverForm,
}

impl ControlLawConfig {
    /// Builds the runtime config from a synthesized design with the standard
    /// defaults: unit feed-forward, 0 to 0.8 V saturation, anti-windup gain
    /// 1e-5, predictor observer.
    pub fn from_design(design: &crate::control::DefaultDesign, reference: f64) -> Self {
        ControlLawConfig {
            k_lqr: design.lqr.k_lqr.clone(),
            k_f: design.kalman.k_f.clone(),
            l_f: design.kalman.l_f.clone(),
            alpha: 1.0,
            k_dc: design.plant_tf.dc_gain(),
            x_unforced: 0.0,
            reference,
            sat_lo_v: 0.0,
            sat_hi_v: 0.8,
            k_aw: 1e-5,
            observer: ObserverForm::Predictor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sat_lo_v >= self.sat_hi_v {
            return Err(Error::InvalidInput("saturation limits must satisfy lo < hi".into()));
        }
        if self.k_aw < 0.0 {
            return Err(Error::InvalidInput("anti-windup gain must be nonnegative".into()));
        }
        if self.k_dc == 0.0 {
            return Err(Error::InvalidInput("model DC gain must be nonzero".into()));
        }
        Ok(())
    }
}

/// Controller state carried between samples.
#[derive(Debug, Clone)]
pub struct LoopState {
    /// Augmented state estimate (plant deviations plus integrator estimate).
    pub x_hat: DVector<f64>,
    /// Internal integrator of the noisy measurement (the observer's second
    /// channel and the anti-windup target).
    pub z: f64,
    /// Last applied drive, V.
    pub u_prev: f64,
    pub saturation_active: bool,
}

impl LoopState {
    pub fn new(n_aug: usize) -> Self {
        LoopState { x_hat: DVector::zeros(n_aug), z: 0.0, u_prev: 0.0, saturation_active: false }
    }

    /// Integrator estimate inside the observer.
    pub fn z_hat(&self) -> f64 {
        self.x_hat[self.x_hat.len() - 1]
    }
}

/// One control-law update.
#[derive(Debug, Clone, Copy)]
pub struct ControlStepOutput {
    /// Feedback term `g_m`.
    pub g_m: f64,
    /// Pre-saturation control input `g_m'`.
    pub g_m_prime: f64,
    /// Saturated command in drive units, ready for inversion.
    pub command: f64,
    pub saturated: bool,
}

/// Advances the control law one sample.
///
/// Order of operations per sample: feedback from the current estimate, add
/// feed-forward, saturate, update the observer with the innovation on both
/// channels, advance the internal integrator with the anti-windup
/// correction.
pub fn control_step(
    state: &mut LoopState,
    dy_meas: f64,
    u_ff: f64,
    sat_lo: f64,
    sat_hi: f64,
    u_equilibrium: f64,
    cfg: &ControlLawConfig,
    aug: &AugmentedModel,
) -> ControlStepOutput {
    let g_m = -cfg.k_lqr.dot(&state.x_hat);
    let g_m_prime = g_m + u_ff;
    let command = g_m_prime.clamp(sat_lo, sat_hi);
    let saturated = command != g_m_prime;
    let du = command - u_equilibrium;

    match cfg.observer {
        ObserverForm::Predictor => {
            let innov = DVector::from_vec(vec![
                dy_meas - aug.c_aug.row(0).transpose().dot(&state.x_hat),
                state.z - state.x_hat[aug.n_plant],
            ]);
            state.x_hat = &aug.a_aug * &state.x_hat + &aug.b_aug * du + &cfg.k_f * innov;
        }
        ObserverForm::Current => {
            let pred = &aug.a_aug * &state.x_hat + &aug.b_aug * du;
            let innov = DVector::from_vec(vec![
                dy_meas - aug.c_aug.row(0).transpose().dot(&pred),
                state.z - pred[aug.n_plant],
            ]);
            state.x_hat = &pred + &cfg.l_f * innov;
        }
    }
    // internal measurement integrator with anti-windup relief; the command
    // excess enters with the sign that opposes accumulation through the
    // negated state-feedback path (z falls while the command sits above the
    // cap, and vice versa)
    state.z += dy_meas + cfg.k_aw * (g_m_prime - command);
    state.saturation_active = saturated;
    ControlStepOutput { g_m, g_m_prime, command, saturated }
}

/// Time-aligned record of one closed-loop run (or an ensemble average).
#[derive(Debug, Clone)]
pub struct LoopTrace {
    /// Sample period, s.
    pub dt: f64,
    pub r: Vec<f64>,
    /// Measured output deviation from the reference.
    pub dy_meas: Vec<f64>,
    /// Absolute measured output, Pa (post-filtered for averaged traces).
    pub y_meas: Vec<f64>,
    pub g_m: Vec<f64>,
    pub g_m_prime: Vec<f64>,
    /// Applied drive, V.
    pub drive: Vec<f64>,
    /// Fraction of ensemble members saturated at each sample (0/1 for a
    /// single run).
    pub sat_frac: Vec<f64>,
    pub z_hat: Vec<f64>,
    /// Averaged augmented state estimate per sample.
    pub x_hat: Vec<[f64; 4]>,
}

impl LoopTrace {
    fn zeros(n: usize, dt: f64) -> Self {
        LoopTrace {
            dt,
            r: vec![0.0; n],
            dy_meas: vec![0.0; n],
            y_meas: vec![0.0; n],
            g_m: vec![0.0; n],
            g_m_prime: vec![0.0; n],
            drive: vec![0.0; n],
            sat_frac: vec![0.0; n],
            z_hat: vec![0.0; n],
            x_hat: vec![[0.0; 4]; n],
        }
    }

    fn add_scaled(&mut self, other: &LoopTrace, w: f64) {
        let n = self.r.len();
        for k in 0..n {
            self.r[k] += w * other.r[k];
            self.dy_meas[k] += w * other.dy_meas[k];
            self.y_meas[k] += w * other.y_meas[k];
            self.g_m[k] += w * other.g_m[k];
            self.g_m_prime[k] += w * other.g_m_prime[k];
            self.drive[k] += w * other.drive[k];
            self.sat_frac[k] += w * other.sat_frac[k];
            self.z_hat[k] += w * other.z_hat[k];
            for j in 0..4 {
                self.x_hat[k][j] += w * other.x_hat[k][j];
            }
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| k as f64 * self.dt).collect()
    }
}

/// Response metrics of an experiment trace.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ExperimentMetrics {
    /// 10-90% rise time, s.
    pub rise_time_s: Option<f64>,
    /// First entry into the +/-5% band that persists 10 ms, s.
    pub recovery_time_s: Option<f64>,
    /// Mean absolute error over the final 20% of the trace, Pa.
    pub steady_state_error_pa: Option<f64>,
    /// Spread of response times across a condition sweep, (max-min)/mean.
    pub response_time_variation: Option<f64>,
}

/// Persistence window required inside the recovery band.
pub const RECOVERY_PERSISTENCE_S: f64 = 0.010;
/// Recovery band half-width as a fraction of the commanded span.
pub const RECOVERY_BAND_FRACTION: f64 = 0.05;

/// Computes rise/recovery/steady-state metrics from a trace.
///
/// `event_time` is when the step or disturbance was applied; `target` the
/// commanded final level and `span` the commanded transition magnitude that
/// scales the 10-90% thresholds and the +/-5% band.
pub fn compute_metrics(
    y: &[f64],
    dt: f64,
    target: f64,
    span: f64,
    event_time: f64,
) -> Result<ExperimentMetrics> {
    if y.is_empty() || dt <= 0.0 {
        return Err(Error::InvalidInput("metrics need samples and a positive sample period".into()));
    }
    let k0 = (event_time / dt).round() as usize;
    if k0 >= y.len() {
        return Err(Error::InvalidInput("event time beyond the trace".into()));
    }
    if span == 0.0 {
        // no commanded transition: rise and recovery are undefined
        let tail_start = y.len() - (y.len() - k0) / 5;
        let tail = &y[tail_start.min(y.len() - 1)..];
        let sse = (tail.iter().sum::<f64>() / tail.len() as f64 - target).abs();
        return Ok(ExperimentMetrics {
            rise_time_s: None,
            recovery_time_s: None,
            steady_state_error_pa: Some(sse),
            response_time_variation: None,
        });
    }
    let baseline = target - span;
    let crossing = |level: f64| -> Option<f64> {
        let rising = span > 0.0;
        for k in k0..y.len() - 1 {
            let (a, b) = (y[k], y[k + 1]);
            let hit = if rising { a < level && b >= level } else { a > level && b <= level };
            if hit {
                let t = (level - a) / (b - a);
                return Some((k as f64 + t) * dt - event_time);
            }
            if k == k0 && (rising && a >= level || !rising && a <= level) {
                return Some(0.0);
            }
        }
        None
    };
    let t10 = crossing(baseline + 0.10 * span);
    let t90 = crossing(baseline + 0.90 * span);
    let rise_time_s = match (t10, t90) {
        (Some(a), Some(b)) if b >= a => Some((b - a).max(dt)),
        _ => None,
    };

    // recovery: first entry into the band around the target that persists
    let band = RECOVERY_BAND_FRACTION * span.abs();
    let persist = (RECOVERY_PERSISTENCE_S / dt).round() as usize;
    let mut recovery_time_s = None;
    let mut k = k0;
    while k < y.len() {
        if (y[k] - target).abs() <= band {
            let mut j = k;
            while j < y.len() && (y[j] - target).abs() <= band {
                j += 1;
            }
            if j - k >= persist || j == y.len() && j - k >= persist.min(y.len() - k0) {
                recovery_time_s = Some((k - k0) as f64 * dt);
                break;
            }
            k = j;
        } else {
            k += 1;
        }
    }

    let tail_start = y.len() - (y.len() - k0) / 5;
    let tail = &y[tail_start..];
    let steady_state_error_pa = if tail.is_empty() {
        None
    } else {
        Some((tail.iter().sum::<f64>() / tail.len() as f64 - target).abs())
    };
    Ok(ExperimentMetrics {
        rise_time_s,
        recovery_time_s,
        steady_state_error_pa,
        response_time_variation: None,
    })
}

/// Options shared by the closed-loop experiments.
#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    /// Total simulated time, s.
    pub duration: f64,
    /// Reference step time, s.
    pub t_step: f64,
    /// Ensemble size.
    pub n_ensemble: usize,
    /// Base RNG seed.
    pub seed: u64,
    /// Post-processing notch filters (center Hz, Q), applied zero-phase to
    /// the ensemble-averaged output.
    pub notches: Vec<(f64, f64)>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            duration: 0.12,
            t_step: 0.02,
            n_ensemble: 50,
            seed: 1,
            notches: vec![(2750.0, 30.0), (650.0, 3.0)],
        }
    }
}

/// What the reference and feed-forward do over time.
#[derive(Debug, Clone, Copy)]
enum Protocol {
    /// r jumps from 0 to the configured reference at `t_step`.
    Step,
    /// r held at the reference; feed-forward removed at `t_step`.
    FeedForwardRemoval,
    /// r held; feed-forward removed at `t_step`; feedback disabled.
    OpenLoopRemoval,
}

fn run_single(
    plant: &mut PlantInstance,
    cfg: &ControlLawConfig,
    aug: &AugmentedModel,
    protocol: Protocol,
    opts: &ExperimentOptions,
    seed: u64,
) -> Result<LoopTrace> {
    cfg.validate()?;
    plant.reset(seed);
    let dt = plant.dynamics.t_s;
    let n = (opts.duration / dt).round() as usize;
    let mut trace = LoopTrace::zeros(n, dt);
    let mut state = LoopState::new(aug.a_aug.nrows());
    let sat_lo = plant.nonlinearity.eval(cfg.sat_lo_v)?;
    let sat_hi = plant.nonlinearity.eval(cfg.sat_hi_v)?;
    let mut y_meas = plant.x_unforced;
    for k in 0..n {
        let t = k as f64 * dt;
        let (r, ff_on, feedback_on) = match protocol {
            Protocol::Step => (if t >= opts.t_step { cfg.reference } else { 0.0 }, true, true),
            Protocol::FeedForwardRemoval => (cfg.reference, t < opts.t_step, true),
            Protocol::OpenLoopRemoval => (cfg.reference, t < opts.t_step, false),
        };
        let u_eq = (r - cfg.x_unforced) / cfg.k_dc;
        let u_ff = if ff_on { cfg.alpha * (r - cfg.x_unforced) / cfg.k_dc } else { 0.0 };
        let dy = y_meas - r;
        let out = if feedback_on {
            control_step(&mut state, dy, u_ff, sat_lo, sat_hi, u_eq, cfg, aug)
        } else {
            let command = u_ff.clamp(sat_lo, sat_hi);
            ControlStepOutput {
                g_m: 0.0,
                g_m_prime: u_ff,
                command,
                saturated: command != u_ff,
            }
        };
        let (drive_v, _) = plant.nonlinearity.invert(out.command, InversionMode::ClosedLoop)?;
        y_meas = plant.step(drive_v)?;

        trace.r[k] = r;
        trace.dy_meas[k] = dy;
        trace.y_meas[k] = y_meas;
        trace.g_m[k] = out.g_m;
        trace.g_m_prime[k] = out.g_m_prime;
        trace.drive[k] = drive_v;
        trace.sat_frac[k] = out.saturated as u8 as f64;
        trace.z_hat[k] = state.z_hat();
        for j in 0..4.min(aug.n_plant) {
            trace.x_hat[k][j] = state.x_hat[j];
        }
        state.u_prev = drive_v;
    }
    Ok(trace)
}

/// Deterministic ensemble average: members run in parallel chunks but are
/// accumulated in index order, so the result is bitwise independent of the
/// thread count.
fn run_ensemble(
    plant: &PlantInstance,
    cfg: &ControlLawConfig,
    aug: &AugmentedModel,
    protocol: Protocol,
    opts: &ExperimentOptions,
    seed_offset: u64,
) -> Result<LoopTrace> {
    if opts.n_ensemble == 0 {
        return Err(Error::InvalidInput("ensemble size must be at least 1".into()));
    }
    let n = (opts.duration / plant.dynamics.t_s).round() as usize;
    let mut avg = LoopTrace::zeros(n, plant.dynamics.t_s);
    let w = 1.0 / opts.n_ensemble as f64;
    let chunk = rayon::current_num_threads().max(1);
    let mut index = 0usize;
    while index < opts.n_ensemble {
        let hi = (index + chunk).min(opts.n_ensemble);
        let members: Vec<Result<LoopTrace>> = (index..hi)
            .into_par_iter()
            .map(|i| {
                let mut p = plant.clone();
                run_single(
                    &mut p,
                    cfg,
                    aug,
                    protocol,
                    opts,
                    member_seed(opts.seed, seed_offset + i as u64),
                )
            })
            .collect();
        for m in members {
            avg.add_scaled(&m?, w);
        }
        index = hi;
    }
    Ok(avg)
}

fn apply_notches(y: &[f64], notches: &[(f64, f64)], f_s: f64) -> Result<Vec<f64>> {
    let mut out = y.to_vec();
    for &(f0, q) in notches {
        let nf = Biquad::notch(f0, q, f_s)?;
        out = filtfilt(&nf, &out);
    }
    Ok(out)
}

/// Result of a step or disturbance experiment.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Ensemble-averaged trace; `y_meas` carries the notch-filtered output.
    pub trace: LoopTrace,
    pub metrics: ExperimentMetrics,
}

/// Reference-step experiment: seeded ensemble, averaged, notch-filtered,
/// metrics on the filtered average.
pub fn run_step_experiment(
    plant: &PlantInstance,
    cfg: &ControlLawConfig,
    aug: &AugmentedModel,
    opts: &ExperimentOptions,
) -> Result<ExperimentResult> {
    let mut trace = run_ensemble(plant, cfg, aug, Protocol::Step, opts, 0)?;
    let f_s = 1.0 / trace.dt;
    trace.y_meas = apply_notches(&trace.y_meas, &opts.notches, f_s)?;
    let metrics = compute_metrics(
        &trace.y_meas,
        trace.dt,
        cfg.reference,
        cfg.reference - cfg.x_unforced,
        opts.t_step,
    )?;
    Ok(ExperimentResult { trace, metrics })
}

/// Result of the input-disturbance experiment.
#[derive(Debug, Clone)]
pub struct DisturbanceResult {
    pub closed: ExperimentResult,
    pub open: ExperimentResult,
    /// Ensemble-averaged control input over all closed-loop runs, unfiltered.
    pub input_avg: Vec<f64>,
}

/// Input-disturbance experiment: the controller settles on the reference,
/// the feed-forward term is zeroed at `t_step`, and the recovery of the
/// closed loop is measured; an open-loop companion run (feedback disabled)
/// shows no recovery. `repeats` adds a second ensemble-averaging stage.
pub fn run_input_disturbance(
    plant: &PlantInstance,
    cfg: &ControlLawConfig,
    aug: &AugmentedModel,
    opts: &ExperimentOptions,
    repeats: usize,
) -> Result<DisturbanceResult> {
    if repeats == 0 {
        return Err(Error::InvalidInput("repeats must be at least 1".into()));
    }
    let n = (opts.duration / plant.dynamics.t_s).round() as usize;
    let mut closed_avg = LoopTrace::zeros(n, plant.dynamics.t_s);
    let mut open_avg = LoopTrace::zeros(n, plant.dynamics.t_s);
    let w = 1.0 / repeats as f64;
    for rep in 0..repeats {
        let offset = (rep * opts.n_ensemble) as u64;
        let c = run_ensemble(plant, cfg, aug, Protocol::FeedForwardRemoval, opts, offset)?;
        let o = run_ensemble(plant, cfg, aug, Protocol::OpenLoopRemoval, opts, offset)?;
        closed_avg.add_scaled(&c, w);
        open_avg.add_scaled(&o, w);
    }
    let f_s = 1.0 / closed_avg.dt;
    let input_avg = closed_avg.g_m_prime.clone();
    let closed_filt = apply_notches(&closed_avg.y_meas, &opts.notches, f_s)?;
    let open_filt = apply_notches(&open_avg.y_meas, &opts.notches, f_s)?;
    closed_avg.y_meas = closed_filt;
    open_avg.y_meas = open_filt;
    let span = cfg.reference - cfg.x_unforced;
    let closed_metrics =
        compute_metrics(&closed_avg.y_meas, closed_avg.dt, cfg.reference, span, opts.t_step)?;
    // the open loop settles at the unforced level, never back at r
    let open_metrics_vs_ref =
        compute_metrics(&open_avg.y_meas, open_avg.dt, cfg.reference, span, opts.t_step)?;
    Ok(DisturbanceResult {
        closed: ExperimentResult { trace: closed_avg, metrics: closed_metrics },
        open: ExperimentResult { trace: open_avg, metrics: open_metrics_vs_ref },
        input_avg,
    })
}

/// One flow rate in the sweep.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FlowPoint {
    pub flow_rate_lpm: f64,
    /// Mean steady drive, V.
    pub mean_drive_v: Option<f64>,
    /// Reference reachable within the drive limits.
    pub reachable: bool,
    /// Closed-loop disturbance recovery, s.
    pub cl_recovery_s: Option<f64>,
    /// Open-loop settle back to the natural level, s.
    pub ol_recovery_s: Option<f64>,
    /// Recovery times normalized to the design flow rate.
    pub cl_normalized: Option<f64>,
    pub ol_normalized: Option<f64>,
}

/// Result of [`run_flowrate_sweep`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FlowSweepResult {
    pub points: Vec<FlowPoint>,
    /// (max-min)/mean of normalized closed-loop recovery times.
    pub cl_variation: Option<f64>,
    /// Same for the open-loop settle times.
    pub ol_variation: Option<f64>,
}

/// Flow-rate sweep: per plant, the mean steady control input that holds the
/// reference, plus closed- and open-loop disturbance response times
/// normalized to the 40 lpm case. Plants that cannot reach the reference
/// inside the drive limits are marked unreachable and excluded.
pub fn run_flowrate_sweep(
    bank: &[PlantInstance],
    cfg: &ControlLawConfig,
    aug: &AugmentedModel,
    opts: &ExperimentOptions,
) -> Result<FlowSweepResult> {
    if bank.is_empty() {
        return Err(Error::InvalidInput("empty plant bank".into()));
    }
    let mut points = Vec::with_capacity(bank.len());
    for plant in bank {
        // reachability: steady drive at full saturation against the actual
        // plant gain
        let max_steady =
            plant.nonlinearity.eval(cfg.sat_hi_v)? * plant.dynamics.dc_gain() + plant.x_unforced;
        let reachable = cfg.reference <= 0.97 * max_steady;
        if !reachable {
            points.push(FlowPoint {
                flow_rate_lpm: plant.flow_rate_lpm,
                mean_drive_v: None,
                reachable: false,
                cl_recovery_s: None,
                ol_recovery_s: None,
                cl_normalized: None,
                ol_normalized: None,
            });
            continue;
        }
        let mut quiet = plant.clone();
        quiet.noise.process_sigma = 0.0;
        quiet.noise.sensor_sigma = 0.0;
        // disturbance protocol doubles as the steady-state probe: the first
        // segment tracks r, then the feed-forward is removed
        let single = ExperimentOptions { n_ensemble: 1, notches: vec![], ..opts.clone() };
        let closed =
            run_ensemble(&quiet, cfg, aug, Protocol::FeedForwardRemoval, &single, 0)?;
        let open = run_ensemble(&quiet, cfg, aug, Protocol::OpenLoopRemoval, &single, 0)?;
        // mean drive over the settled pre-disturbance window
        let k_dist = (opts.t_step / closed.dt).round() as usize;
        let k_lo = k_dist / 2;
        let mean_drive =
            closed.drive[k_lo..k_dist].iter().sum::<f64>() / (k_dist - k_lo) as f64;
        let span = cfg.reference - cfg.x_unforced;
        let cl_m = compute_metrics(&closed.y_meas, closed.dt, cfg.reference, span, opts.t_step)?;
        // open loop: time to settle at the natural (unforced) level
        let ol_m = compute_metrics(&open.y_meas, open.dt, plant.x_unforced, -span, opts.t_step)?;
        points.push(FlowPoint {
            flow_rate_lpm: plant.flow_rate_lpm,
            mean_drive_v: Some(mean_drive),
            reachable: true,
            cl_recovery_s: cl_m.recovery_time_s,
            ol_recovery_s: ol_m.recovery_time_s,
            cl_normalized: None,
            ol_normalized: None,
        });
    }
    // normalize to the 40 lpm entry
    let design = points
        .iter()
        .find(|p| (p.flow_rate_lpm - 40.0).abs() < 1e-9)
        .ok_or_else(|| Error::InvalidInput("sweep bank lacks the 40 lpm design entry".into()))?;
    let cl_ref = design.cl_recovery_s;
    let ol_ref = design.ol_recovery_s;
    for p in &mut points {
        p.cl_normalized = match (p.cl_recovery_s, cl_ref) {
            (Some(t), Some(r)) if r > 0.0 => Some(t / r),
            _ => None,
        };
        p.ol_normalized = match (p.ol_recovery_s, ol_ref) {
            (Some(t), Some(r)) if r > 0.0 => Some(t / r),
            _ => None,
        };
    }
    let variation = |values: Vec<f64>| -> Option<f64> {
        if values.len() < 2 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let max = values.iter().cloned().fold(f64::MIN, f64::max);
        let min = values.iter().cloned().fold(f64::MAX, f64::min);
        Some((max - min) / mean)
    };
    let cl_variation = variation(points.iter().filter_map(|p| p.cl_normalized).collect());
    let ol_variation = variation(points.iter().filter_map(|p| p.ol_normalized).collect());
    Ok(FlowSweepResult { points, cl_variation, ol_variation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::default_design;
    use crate::plant::PlantInstance;

    fn quiet_plant(seed: u64) -> PlantInstance {
        PlantInstance::design_default(seed).unwrap()
    }

    #[test]
    fn null_problem_produces_zero_drive() {
        // reference at the unforced level, no noise, zero initial state
        let design = default_design().unwrap();
        let cfg = ControlLawConfig::from_design(&design, 0.0);
        let plant = quiet_plant(0);
        let opts = ExperimentOptions {
            duration: 0.02,
            t_step: 0.0,
            n_ensemble: 1,
            seed: 0,
            notches: vec![],
        };
        let out = run_step_experiment(&plant, &cfg, &design.aug, &opts).unwrap();
        for k in 0..out.trace.len() {
            assert_eq!(out.trace.drive[k], 0.0, "drive nonzero at {k}");
            assert_eq!(out.trace.y_meas[k], 0.0);
        }
    }

    #[test]
    fn saturation_clamps_and_anti_windup_slows_integrator() {
        let design = default_design().unwrap();
        let mut cfg = ControlLawConfig::from_design(&design, 74.0);
        cfg.k_aw = 1e-2;
        let plant = quiet_plant(0);
        let sat_lo = plant.nonlinearity.eval(cfg.sat_lo_v).unwrap();
        let sat_hi = plant.nonlinearity.eval(0.2).unwrap(); // tight cap
        let u_eq = (cfg.reference - cfg.x_unforced) / cfg.k_dc;
        let mut with_aw = LoopState::new(5);
        let mut no_aw = LoopState::new(5);
        let mut cfg0 = cfg.clone();
        cfg0.k_aw = 0.0;
        // drive both controllers with a persistent negative error so g_m'
        // sits above the cap
        for _ in 0..2000 {
            let out_a = control_step(&mut with_aw, -50.0, u_eq, sat_lo, sat_hi, u_eq, &cfg, &design.aug);
            let out_b =
                control_step(&mut no_aw, -50.0, u_eq, sat_lo, sat_hi, u_eq, &cfg0, &design.aug);
            assert_eq!(out_a.command, sat_hi);
            assert!(out_a.saturated && out_b.saturated);
        }
        assert!(
            with_aw.z.abs() < no_aw.z.abs(),
            "anti-windup did not slow the integrator: {} vs {}",
            with_aw.z,
            no_aw.z
        );
    }

    #[test]
    fn feedback_only_converges_with_zero_steady_state_error() {
        // alpha = 0: integral action alone drives the output to r
        let design = default_design().unwrap();
        let mut cfg = ControlLawConfig::from_design(&design, 74.0);
        cfg.alpha = 0.0;
        let plant = quiet_plant(0);
        let opts = ExperimentOptions {
            duration: 1.0,
            t_step: 0.0,
            n_ensemble: 1,
            seed: 0,
            notches: vec![],
        };
        let out = run_step_experiment(&plant, &cfg, &design.aug, &opts).unwrap();
        let sse = out.metrics.steady_state_error_pa.unwrap();
        assert!(sse < 0.001 * 74.0, "steady-state error {sse} Pa");
    }

    #[test]
    fn feed_forward_shortens_rise_time() {
        let design = default_design().unwrap();
        let plant = quiet_plant(0);
        let opts = ExperimentOptions {
            duration: 0.10,
            t_step: 0.02,
            n_ensemble: 1,
            seed: 0,
            notches: vec![],
        };
        let cfg1 = ControlLawConfig::from_design(&design, 74.0);
        let mut cfg0 = cfg1.clone();
        cfg0.alpha = 0.0;
        let with_ff = run_step_experiment(&plant, &cfg1, &design.aug, &opts).unwrap();
        let without = run_step_experiment(&plant, &cfg0, &design.aug, &opts).unwrap();
        let r1 = with_ff.metrics.rise_time_s.unwrap();
        let r0 = without.metrics.rise_time_s.unwrap();
        assert!(r1 < r0, "feed-forward rise {r1} not faster than {r0}");
        assert!(r1 <= 2e-3, "rise time {r1}");
    }

    #[test]
    fn feed_forward_neutral_at_dc() {
        // alpha changes the transient, not the noise-free steady state
        let design = default_design().unwrap();
        let plant = quiet_plant(0);
        let opts = ExperimentOptions {
            duration: 0.8,
            t_step: 0.0,
            n_ensemble: 1,
            seed: 0,
            notches: vec![],
        };
        let mut finals = Vec::new();
        for alpha in [0.0, 0.5, 1.0] {
            let mut cfg = ControlLawConfig::from_design(&design, 60.0);
            cfg.alpha = alpha;
            let out = run_step_experiment(&plant, &cfg, &design.aug, &opts).unwrap();
            finals.push(*out.trace.y_meas.last().unwrap());
        }
        for w in finals.windows(2) {
            assert!((w[0] - w[1]).abs() < 0.001 * 60.0, "steady states differ: {finals:?}");
        }
    }

    #[test]
    fn step_experiment_is_deterministic_and_noise_free_collapses() {
        let design = default_design().unwrap();
        let cfg = ControlLawConfig::from_design(&design, 74.0);
        let plant = quiet_plant(0);
        let base = ExperimentOptions {
            duration: 0.05,
            t_step: 0.01,
            n_ensemble: 1,
            seed: 7,
            notches: vec![(2750.0, 30.0), (650.0, 3.0)],
        };
        let one = run_step_experiment(&plant, &cfg, &design.aug, &base).unwrap();
        let again = run_step_experiment(&plant, &cfg, &design.aug, &base).unwrap();
        for k in 0..one.trace.len() {
            assert_eq!(one.trace.y_meas[k].to_bits(), again.trace.y_meas[k].to_bits());
        }
        // zero noise: n = 1 equals n = 50 exactly
        let fifty = run_step_experiment(
            &plant,
            &cfg,
            &design.aug,
            &ExperimentOptions { n_ensemble: 50, ..base },
        )
        .unwrap();
        for k in 0..one.trace.len() {
            assert!((one.trace.y_meas[k] - fifty.trace.y_meas[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn drive_stays_inside_limits() {
        let design = default_design().unwrap();
        let cfg = ControlLawConfig::from_design(&design, 120.0);
        let mut plant = quiet_plant(3);
        plant.noise = crate::plant::NoiseSpec { seed: 3, ..Default::default() };
        let opts = ExperimentOptions {
            duration: 0.2,
            t_step: 0.01,
            n_ensemble: 4,
            seed: 3,
            notches: vec![],
        };
        let out = run_step_experiment(&plant, &cfg, &design.aug, &opts).unwrap();
        for (k, &d) in out.trace.drive.iter().enumerate() {
            assert!((0.0..=0.8).contains(&d), "drive {d} outside [0, 0.8] at {k}");
        }
    }

    #[test]
    fn disturbance_closed_recovers_open_does_not() {
        let design = default_design().unwrap();
        let cfg = ControlLawConfig::from_design(&design, 50.0);
        let plant = quiet_plant(0);
        let opts = ExperimentOptions {
            duration: 0.8,
            t_step: 0.4,
            n_ensemble: 1,
            seed: 0,
            notches: vec![],
        };
        let result = run_input_disturbance(&plant, &cfg, &design.aug, &opts, 1).unwrap();
        let rec = result.closed.metrics.recovery_time_s.expect("closed loop recovers");
        assert!(rec > 0.0 && rec < 0.1, "recovery {rec}");
        // the open loop settles at the unforced level: never back in band
        assert!(result.open.metrics.recovery_time_s.is_none());
        let open_final = *result.open.trace.y_meas.last().unwrap();
        assert!(open_final.abs() < 0.5, "open loop settles near zero, got {open_final}");
    }

    #[test]
    fn metrics_ideal_step_and_exponential() {
        let dt = 2e-5;
        // ideal instantaneous step: rise time floors at one sample
        let mut y = vec![0.0; 2000];
        for v in y.iter_mut().skip(1000) {
            *v = 1.0;
        }
        let m = compute_metrics(&y, dt, 1.0, 1.0, 1000.0 * dt).unwrap();
        assert_eq!(m.rise_time_s, Some(dt));
        // first-order exponential: rise = ln(9) tau
        let tau = 5e-3;
        let y: Vec<f64> =
            (0..40_000).map(|k| 1.0 - (-(k as f64) * dt / tau).exp()).collect();
        let m = compute_metrics(&y, dt, 1.0, 1.0, 0.0).unwrap();
        let expect = tau * 9.0_f64.ln();
        let got = m.rise_time_s.unwrap();
        assert!((got - expect).abs() < 0.02 * expect, "rise {got} vs {expect}");
        // oscillating forever outside the band: recovery absent
        let y: Vec<f64> = (0..20_000)
            .map(|k| 1.0 + 0.2 * ((k as f64) * 0.01).sin())
            .collect();
        let m = compute_metrics(&y, dt, 1.0, 1.0, 0.0).unwrap();
        assert!(m.recovery_time_s.is_none());
    }

    #[test]
    fn anti_windup_bounded_for_reachable_references() {
        // 10 s runs at the band edges: the integrator estimate stays bounded
        let design = default_design().unwrap();
        let plant = quiet_plant(1);
        let opts = ExperimentOptions {
            duration: 10.0,
            t_step: 0.0,
            n_ensemble: 1,
            seed: 1,
            notches: vec![],
        };
        for r in [0.0, 60.0, 120.0] {
            let cfg = ControlLawConfig::from_design(&design, r);
            let out = run_step_experiment(&plant, &cfg, &design.aug, &opts).unwrap();
            let n = out.trace.len();
            let half_max = out.trace.z_hat[n / 2..]
                .iter()
                .fold(0.0_f64, |a, &v| a.max(v.abs()));
            let q3 = out.trace.z_hat[3 * n / 4..]
                .iter()
                .fold(0.0_f64, |a, &v| a.max(v.abs()));
            // no monotone divergence across the final half
            assert!(
                q3 <= half_max * 1.01 + 1e-9,
                "integrator grows at r = {r}: {half_max} -> {q3}"
            );
        }
    }

    #[test]
    fn flow_sweep_single_entry_normalizes_to_one() {
        let design = default_design().unwrap();
        let cfg = ControlLawConfig::from_design(&design, 50.0);
        let config = crate::plant::BankConfig {
            entries: vec![crate::plant::BankEntry {
                flow_rate_lpm: 40.0,
                gain_scale: 1.0,
                corner_hz: None,
            }],
            noise: crate::plant::NoiseSpec::noiseless(0),
            x_unforced: 0.0,
        };
        let bank = crate::plant::make_plant_bank(&config).unwrap();
        let opts = ExperimentOptions {
            duration: 0.8,
            t_step: 0.4,
            n_ensemble: 1,
            seed: 0,
            notches: vec![],
        };
        let sweep = run_flowrate_sweep(&bank, &cfg, &design.aug, &opts).unwrap();
        assert_eq!(sweep.points.len(), 1);
        assert_eq!(sweep.points[0].cl_normalized, Some(1.0));
        assert!(sweep.points[0].reachable);
    }
}
