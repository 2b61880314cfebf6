//! Experiment configuration: JSON with strict schema validation (unknown
//! keys rejected) and runnable defaults for every experiment kind.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Experiment kind; mirrors the CLI subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Identify,
    Synthesize,
    SimulateStep,
    Disturbance,
    FlowSweep,
    QuasiSteady,
    LtrSweep,
}

/// Where the plant model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlantSource {
    /// Built-in design-point model with the default nonlinearity.
    Default,
    /// Tabulated curves: nonlinearity `x_volts,f_of_x` CSV, and optionally a
    /// deflection curve `f_hz,value` CSV for quasi-steady work.
    Csv {
        nonlinearity: PathBuf,
        #[serde(default)]
        deflection: Option<PathBuf>,
    },
    /// Dynamics taken from a fit artifact produced by `identify`.
    Fitted { fit: PathBuf },
}

impl Default for PlantSource {
    fn default() -> Self {
        PlantSource::Default
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub process_sigma: f64,
    pub sensor_sigma: f64,
    pub shaping_peak_hz: f64,
    pub shaping_radius: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let d = coanda_lqg::plant::NoiseSpec::default();
        NoiseConfig {
            enabled: true,
            process_sigma: d.process_sigma,
            sensor_sigma: d.sensor_sigma,
            shaping_peak_hz: d.shaping_peak_hz,
            shaping_radius: d.shaping_radius,
        }
    }
}

impl NoiseConfig {
    pub fn to_spec(&self, seed: u64) -> coanda_lqg::plant::NoiseSpec {
        if self.enabled {
            coanda_lqg::plant::NoiseSpec {
                process_sigma: self.process_sigma,
                sensor_sigma: self.sensor_sigma,
                shaping_peak_hz: self.shaping_peak_hz,
                shaping_radius: self.shaping_radius,
                seed,
            }
        } else {
            coanda_lqg::plant::NoiseSpec::noiseless(seed)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifyConfig {
    /// Modulation amplitude, drive units.
    pub amplitude: f64,
    pub f_start_hz: f64,
    pub step_hz: f64,
    pub dwell_s: f64,
    pub n_steps: usize,
    pub carrier_hz: f64,
    /// Carrier offset `B`, drive units.
    pub offset: f64,
    /// Settle time discarded per dwell, s.
    pub settle_s: f64,
    pub num_order: usize,
    pub den_order: usize,
    pub delay_scan_min: usize,
    pub delay_scan_max: usize,
    /// Compensate the modulation amplitude by the quasi-steady curve.
    pub psi_compensation: bool,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        IdentifyConfig {
            amplitude: 120.0,
            f_start_hz: 10.0,
            step_hz: 30.0,
            dwell_s: 3.0,
            n_steps: 66,
            carrier_hz: 2750.0,
            offset: 240.0,
            settle_s: 0.5,
            num_order: 1,
            den_order: 4,
            delay_scan_min: 28,
            delay_scan_max: 44,
            psi_compensation: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesizeConfig {
    /// Process-to-sensor noise ratio of the shipped design point.
    pub wv_ratio: f64,
    /// Ratio ladder for the recovery sweep.
    pub ltr_ratios: Vec<f64>,
    /// Control cost.
    pub r_cost: f64,
    /// Integrator cost entry of Q.
    pub integrator_cost: f64,
}

impl Default for SynthesizeConfig {
    fn default() -> Self {
        SynthesizeConfig {
            wv_ratio: 10.0,
            ltr_ratios: vec![1e-2, 1e-1, 1.0, 1e1, 1e2, 1e4],
            r_cost: 1e6,
            integrator_cost: 1e3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Reference deflection, Pa.
    pub reference_pa: f64,
    pub alpha: f64,
    pub duration_s: f64,
    /// Step (or disturbance) time, s.
    pub event_s: f64,
    pub n_ensemble: usize,
    /// Second-stage averaging repeats (disturbance experiment).
    pub repeats: usize,
    pub k_aw: f64,
    pub sat_lo_v: f64,
    pub sat_hi_v: f64,
    /// Post-processing notches (center Hz, Q).
    pub notches: Vec<(f64, f64)>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            reference_pa: 74.0,
            alpha: 1.0,
            duration_s: 0.12,
            event_s: 0.02,
            n_ensemble: 50,
            repeats: 6,
            k_aw: 1e-5,
            sat_lo_v: 0.0,
            sat_hi_v: 0.8,
            notches: vec![(2750.0, 30.0), (650.0, 3.0)],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuasiSteadyConfig {
    pub carrier_hz: f64,
    pub sweep_rate_hz_per_s: f64,
    pub duration_s: f64,
    pub f_max_hz: f64,
}

impl Default for QuasiSteadyConfig {
    fn default() -> Self {
        QuasiSteadyConfig {
            carrier_hz: 2750.0,
            sweep_rate_hz_per_s: 28.0,
            duration_s: 50.0,
            f_max_hz: 1350.0,
        }
    }
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Optional; when present it must match the invoked subcommand.
    pub experiment: Option<ExperimentKind>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub plant: PlantSource,
    pub noise: NoiseConfig,
    /// Unforced sensor DC level, Pa.
    pub x_unforced_pa: f64,
    pub identify: IdentifyConfig,
    pub synthesize: SynthesizeConfig,
    pub simulate: SimulateConfig,
    pub quasi_steady: QuasiSteadyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            seed: 1,
            out_dir: PathBuf::from("out"),
            plant: PlantSource::Default,
            noise: NoiseConfig::default(),
            x_unforced_pa: 0.0,
            identify: IdentifyConfig::default(),
            synthesize: SynthesizeConfig::default(),
            simulate: SimulateConfig::default(),
            quasi_steady: QuasiSteadyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Loads and validates a config file; unknown keys are rejected.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| format!("invalid config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.identify.amplitude < 0.0 {
            return Err("identify.amplitude must be nonnegative".into());
        }
        if self.synthesize.r_cost <= 0.0 {
            return Err("synthesize.r_cost must be positive".into());
        }
        if self.simulate.n_ensemble == 0 || self.simulate.repeats == 0 {
            return Err("simulate.n_ensemble and simulate.repeats must be at least 1".into());
        }
        if self.simulate.sat_lo_v >= self.simulate.sat_hi_v {
            return Err("simulate saturation limits must satisfy lo < hi".into());
        }
        if !self.synthesize.ltr_ratios.windows(2).all(|w| w[1] > w[0])
            || self.synthesize.ltr_ratios.first().is_some_and(|&r| r <= 0.0)
        {
            return Err("synthesize.ltr_ratios must be positive ascending".into());
        }
        Ok(())
    }
}

/// JSON Schema describing [`ExperimentConfig`]; also shipped as
/// `docs/config.schema.json`.
pub const CONFIG_SCHEMA: &str = include_str!("../../../docs/config.schema.json");
