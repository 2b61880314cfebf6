//! Experiment implementations behind the CLI subcommands: each builds its
//! inputs from the validated config, runs the library pipeline, and emits
//! CSV/JSON/SVG artifacts atomically.

use std::path::{Path, PathBuf};

use coanda_lqg::cloop::{
    run_flowrate_sweep, run_input_disturbance, run_step_experiment, ControlLawConfig,
    ExperimentOptions,
};
use coanda_lqg::control::{
    augment, compensator_tf, default_design, design_kalman, design_lqr, ltr_sweep, margin_grid,
    margins, realize, sensitivity, DesignParameters, MarginReport,
};
use coanda_lqg::dsp::spectra::FrequencyResponse;
use coanda_lqg::dsp::{AmSpec, SteppedSineSpec};
use coanda_lqg::io;
use coanda_lqg::plant::{
    design_model, make_plant_bank, simulate_quasi_steady, BankConfig, DeflectionCurve,
    PlantInstance, QuasiSteadyOptions, StaticNonlinearity, TransferFunction,
};
use coanda_lqg::sysid::{
    fit_nonlinearity, fit_rational_tf, run_identification_campaign, CampaignOptions, DelaySpec,
    FitSpec,
};
use coanda_lqg::Error as LibError;

use crate::config::{ExperimentConfig, PlantSource};
use crate::svg::{render, PlotSpec, Series};

/// CLI failure with the exit-code class attached.
#[derive(Debug)]
pub struct CmdError {
    pub kind: &'static str,
    pub message: String,
}

impl CmdError {
    pub fn config(msg: impl Into<String>) -> Self {
        CmdError { kind: "config", message: msg.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            "config" => 2,
            "numerical" => 3,
            _ => 4,
        }
    }
}

impl From<LibError> for CmdError {
    fn from(e: LibError) -> Self {
        let kind = match &e {
            LibError::InvalidInput(_) => "config",
            LibError::Numerical(_) => "numerical",
            LibError::Io(_) => "io",
        };
        CmdError { kind, message: e.to_string() }
    }
}

pub type CmdResult = Result<Vec<PathBuf>, CmdError>;

fn write(path: &Path, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<(), CmdError> {
    io::atomic_write(path, bytes).map_err(|e| CmdError { kind: "io", message: e.to_string() })?;
    written.push(path.to_path_buf());
    Ok(())
}

fn load_plant(cfg: &ExperimentConfig) -> Result<PlantInstance, CmdError> {
    let noise = cfg.noise.to_spec(cfg.seed);
    let (nonlinearity, dynamics) = match &cfg.plant {
        PlantSource::Default => (StaticNonlinearity::default_curve(), design_model()),
        PlantSource::Csv { nonlinearity, .. } => {
            let text = std::fs::read_to_string(nonlinearity).map_err(|e| {
                CmdError::config(format!("cannot read {}: {e}", nonlinearity.display()))
            })?;
            let (x, y) = io::nonlinearity_from_csv(&text)?;
            let fitted = fit_nonlinearity(&x, &y, (2, 2))?;
            (fitted, design_model())
        }
        PlantSource::Fitted { fit } => {
            let text = std::fs::read_to_string(fit)
                .map_err(|e| CmdError::config(format!("cannot read {}: {e}", fit.display())))?;
            let artifact: FitArtifact = serde_json::from_str(&text)
                .map_err(|e| CmdError::config(format!("invalid fit artifact: {e}")))?;
            let tf = TransferFunction::new(
                artifact.numerator,
                artifact.denominator,
                artifact.delay_samples,
                1.0 / artifact.sample_rate_hz,
            )?;
            (StaticNonlinearity::default_curve(), tf)
        }
    };
    Ok(PlantInstance::new(nonlinearity, dynamics, noise, cfg.x_unforced_pa, 40.0, None)?)
}

fn load_deflection(cfg: &ExperimentConfig) -> Result<DeflectionCurve, CmdError> {
    match &cfg.plant {
        PlantSource::Csv { deflection: Some(path), .. } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CmdError::config(format!("cannot read {}: {e}", path.display())))?;
            let (grid, values) = io::curve_from_csv(&text)?;
            Ok(DeflectionCurve::new(grid, values, 40.0)?)
        }
        _ => Ok(DeflectionCurve::default_synthetic(40.0)),
    }
}

/// Serialized fit artifact (`fit.json`).
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct FitArtifact {
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    pub delay_samples: usize,
    pub sample_rate_hz: f64,
    pub residual_db: f64,
    pub converged: bool,
    pub stable: bool,
}

pub fn cmd_identify(cfg: &ExperimentConfig, quiet: bool) -> CmdResult {
    let mut written = Vec::new();
    let mut plant = load_plant(cfg)?;
    let id = &cfg.identify;
    let protocol = SteppedSineSpec {
        amplitude: id.amplitude,
        f_start: id.f_start_hz,
        step: id.step_hz,
        dwell: id.dwell_s,
        n_steps: id.n_steps,
    };
    let am = AmSpec { f_c: id.carrier_hz, offset: id.offset };
    let mut options = CampaignOptions { settle: id.settle_s, ..CampaignOptions::default() };
    if id.psi_compensation {
        let curve = load_deflection(cfg)?;
        let psi = simulate_quasi_steady(
            &curve,
            id.carrier_hz,
            28.0,
            50.0,
            &plant.sample_spec(),
            &QuasiSteadyOptions::default(),
        )?;
        options.psi_compensation = Some(psi);
    }
    let resp = run_identification_campaign(&mut plant, &protocol, &am, &options)?;

    let mut fit_spec = FitSpec::new(id.num_order, id.den_order);
    fit_spec.delay = DelaySpec::Estimate { min: id.delay_scan_min, max: id.delay_scan_max };
    let fit = fit_rational_tf(&resp, &fit_spec, &plant.sample_spec())?;
    let artifact = FitArtifact {
        numerator: fit.tf.num.clone(),
        denominator: fit.tf.den.clone(),
        delay_samples: fit.tf.delay,
        sample_rate_hz: plant.sample_spec().f_s,
        residual_db: fit.residual_db,
        converged: fit.converged,
        stable: fit.stable,
    };

    write(&cfg.out_dir.join("etfe.csv"), io::frequency_response_to_csv(&resp).as_bytes(), &mut written)?;
    write(
        &cfg.out_dir.join("fit.json"),
        serde_json::to_string_pretty(&artifact).unwrap().as_bytes(),
        &mut written,
    )?;

    // Bode magnitude plot: measured estimate and fitted model
    let fit_resp = fit.tf.frequency_response(&resp.grid)?;
    let to_db = |r: &FrequencyResponse| -> Vec<(f64, f64)> {
        r.grid.iter().zip(r.magnitude_db()).map(|(&f, m)| (f, m)).collect()
    };
    let svg = render(&PlotSpec {
        title: "Open-loop response: estimate and fitted model",
        x_label: "frequency (Hz)",
        y_label: "magnitude (dB)",
        log_x: true,
        series: vec![
            Series { label: "estimate", color: "#1f6feb", points: to_db(&resp) },
            Series { label: "fit", color: "#d73a49", points: to_db(&fit_resp) },
        ],
    });
    write(&cfg.out_dir.join("bode.svg"), svg.as_bytes(), &mut written)?;
    if !quiet {
        println!(
            "identify: {} bins, delay {} samples, residual {:.3e} dB, converged {}",
            resp.len(),
            fit.tf.delay,
            fit.residual_db,
            fit.converged
        );
    }
    Ok(written)
}

/// Serialized synthesis artifact (`design.json`).
#[derive(Debug, serde::Serialize)]
struct DesignArtifact {
    a_matrix_row_major: Vec<f64>,
    b_vector: Vec<f64>,
    c_vector: Vec<f64>,
    d_scalar: f64,
    a_aug_row_major: Vec<f64>,
    k_lqr: Vec<f64>,
    k_f_row_major: Vec<f64>,
    q_diagonal: Vec<f64>,
    r_cost: f64,
    w_process: f64,
    v_diagonal: Vec<f64>,
    riccati_residual_lqr: f64,
    riccati_residual_kalman: f64,
    margins: MarginReport,
    closed_loop_stable: bool,
    closed_loop_spectral_radius: f64,
    crossover_hz: Option<f64>,
}

pub fn cmd_synthesize(cfg: &ExperimentConfig, quiet: bool) -> CmdResult {
    let mut written = Vec::new();
    let plant = load_plant(cfg)?;
    let syn = &cfg.synthesize;
    let model = realize(&plant.dynamics)?;
    let aug = augment(&model)?;
    let mut params = DesignParameters::default_for(model.order());
    params.r = syn.r_cost;
    params.q[(model.order(), model.order())] = syn.integrator_cost;
    let lqr = design_lqr(&aug, &params.q, params.r)?;
    let kalman = design_kalman(&aug, syn.wv_ratio * params.v[(0, 0)], &params.v)?;
    let comp = compensator_tf(&aug, &lqr.k_lqr, &kalman.k_f)?;
    let grid = margin_grid(plant.sample_spec().f_s);
    let loop_resp = FrequencyResponse::new(
        grid.clone(),
        grid.iter().map(|&f| comp.response_at(f) * plant.dynamics.response_at(f)).collect(),
    )?;
    let report = margins(&loop_resp)?;
    let sens = sensitivity(&comp, &plant.dynamics, &grid)?;
    let spectrum =
        coanda_lqg::control::closed_loop_eigenvalues(&aug, &lqr.k_lqr, &kalman.k_f);
    let rho = spectrum.iter().map(|e| e.norm()).fold(0.0_f64, f64::max);

    let artifact = DesignArtifact {
        a_matrix_row_major: model.a.transpose().as_slice().to_vec(),
        b_vector: model.b.as_slice().to_vec(),
        c_vector: model.c.as_slice().to_vec(),
        d_scalar: model.d,
        a_aug_row_major: aug.a_aug.transpose().as_slice().to_vec(),
        k_lqr: lqr.k_lqr.as_slice().to_vec(),
        k_f_row_major: kalman.k_f.transpose().as_slice().to_vec(),
        q_diagonal: (0..params.q.nrows()).map(|i| params.q[(i, i)]).collect(),
        r_cost: params.r,
        w_process: syn.wv_ratio * params.v[(0, 0)],
        v_diagonal: vec![params.v[(0, 0)], params.v[(1, 1)]],
        riccati_residual_lqr: lqr.residual,
        riccati_residual_kalman: kalman.residual,
        margins: report.clone(),
        closed_loop_stable: rho < 1.0,
        closed_loop_spectral_radius: rho,
        crossover_hz: report.crossover_hz,
    };
    write(
        &cfg.out_dir.join("design.json"),
        serde_json::to_string_pretty(&artifact).unwrap().as_bytes(),
        &mut written,
    )?;
    write(
        &cfg.out_dir.join("sensitivity.csv"),
        io::frequency_response_to_csv(&sens).as_bytes(),
        &mut written,
    )?;

    // LTR sweep artifact and plot
    let sweep = ltr_sweep(&aug, &lqr, &plant.dynamics, &params.v, &syn.ltr_ratios)?;
    let mut gap_rows = String::from("ratio,gap_db,gain_margin_db,phase_margin_deg,crossover_hz\n");
    let mut series = Vec::new();
    let palette = ["#1f6feb", "#9147d8", "#d73a49", "#e36209", "#22863a", "#6a737d"];
    for (k, entry) in sweep.entries.iter().enumerate() {
        gap_rows.push_str(&format!(
            "{:e},{:e},{},{},{}\n",
            entry.ratio,
            entry.gap_db,
            entry.margins.gain_margin_db.map_or("".into(), |v| format!("{v:e}")),
            entry.margins.phase_margin_deg.map_or("".into(), |v| format!("{v:e}")),
            entry.margins.crossover_hz.map_or("".into(), |v| format!("{v:e}")),
        ));
        series.push((format!("W/V = {:.0e}", entry.ratio), palette[k % palette.len()], entry));
    }
    write(&cfg.out_dir.join("ltr_gaps.csv"), gap_rows.as_bytes(), &mut written)?;
    let mut plot_series: Vec<Series> = series
        .iter()
        .map(|(label, color, entry)| Series {
            label,
            color,
            points: entry
                .sensitivity
                .grid
                .iter()
                .zip(entry.sensitivity.magnitude_db())
                .map(|(&f, m)| (f, m))
                .collect(),
        })
        .collect();
    let lqr_pts: Vec<(f64, f64)> = sweep
        .lqr_sensitivity
        .grid
        .iter()
        .zip(sweep.lqr_sensitivity.magnitude_db())
        .map(|(&f, m)| (f, m))
        .collect();
    plot_series.push(Series { label: "full state", color: "#000000", points: lqr_pts });
    let svg = render(&PlotSpec {
        title: "Sensitivity functions over the noise-ratio ladder",
        x_label: "frequency (Hz)",
        y_label: "|S| (dB)",
        log_x: true,
        series: plot_series,
    });
    write(&cfg.out_dir.join("ltr.svg"), svg.as_bytes(), &mut written)?;
    if !quiet {
        println!(
            "synthesize: crossover {:?} Hz, GM {:?} dB, PM {:?} deg, stable {}",
            report.crossover_hz, report.gain_margin_db, report.phase_margin_deg, rho < 1.0
        );
    }
    Ok(written)
}

fn control_config(
    cfg: &ExperimentConfig,
    design: &coanda_lqg::control::DefaultDesign,
    plant: &PlantInstance,
) -> ControlLawConfig {
    let sim = &cfg.simulate;
    ControlLawConfig {
        alpha: sim.alpha,
        k_dc: plant.dynamics.dc_gain(),
        x_unforced: cfg.x_unforced_pa,
        reference: sim.reference_pa,
        sat_lo_v: sim.sat_lo_v,
        sat_hi_v: sim.sat_hi_v,
        k_aw: sim.k_aw,
        ..ControlLawConfig::from_design(design, sim.reference_pa)
    }
}

fn experiment_options(cfg: &ExperimentConfig) -> ExperimentOptions {
    let sim = &cfg.simulate;
    ExperimentOptions {
        duration: sim.duration_s,
        t_step: sim.event_s,
        n_ensemble: sim.n_ensemble,
        seed: cfg.seed,
        notches: sim.notches.clone(),
    }
}

pub fn cmd_simulate_step(cfg: &ExperimentConfig, quiet: bool) -> CmdResult {
    let mut written = Vec::new();
    let plant = load_plant(cfg)?;
    let design = default_design()?;
    let law = control_config(cfg, &design, &plant);
    let opts = experiment_options(cfg);
    let result = run_step_experiment(&plant, &law, &design.aug, &opts)?;
    write(
        &cfg.out_dir.join("trace.csv"),
        io::loop_trace_to_csv(&result.trace).as_bytes(),
        &mut written,
    )?;
    write(
        &cfg.out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&result.metrics).unwrap().as_bytes(),
        &mut written,
    )?;
    let t = result.trace.times();
    let svg = render(&PlotSpec {
        title: "Ensemble-averaged, filtered step response",
        x_label: "time (s)",
        y_label: "deflection (Pa)",
        log_x: false,
        series: vec![
            Series {
                label: "output",
                color: "#1f6feb",
                points: t.iter().cloned().zip(result.trace.y_meas.iter().cloned()).collect(),
            },
            Series {
                label: "reference",
                color: "#6a737d",
                points: t.iter().cloned().zip(result.trace.r.iter().cloned()).collect(),
            },
        ],
    });
    write(&cfg.out_dir.join("step.svg"), svg.as_bytes(), &mut written)?;
    if !quiet {
        println!(
            "simulate-step: rise {:?} s, steady-state error {:?} Pa",
            result.metrics.rise_time_s, result.metrics.steady_state_error_pa
        );
    }
    Ok(written)
}

pub fn cmd_disturbance(cfg: &ExperimentConfig, quiet: bool) -> CmdResult {
    let mut written = Vec::new();
    let plant = load_plant(cfg)?;
    let design = default_design()?;
    let law = control_config(cfg, &design, &plant);
    let opts = experiment_options(cfg);
    let result = run_input_disturbance(&plant, &law, &design.aug, &opts, cfg.simulate.repeats)?;
    write(
        &cfg.out_dir.join("closed_trace.csv"),
        io::loop_trace_to_csv(&result.closed.trace).as_bytes(),
        &mut written,
    )?;
    write(
        &cfg.out_dir.join("open_trace.csv"),
        io::loop_trace_to_csv(&result.open.trace).as_bytes(),
        &mut written,
    )?;
    #[derive(serde::Serialize)]
    struct Both<'a> {
        closed: &'a coanda_lqg::cloop::ExperimentMetrics,
        open: &'a coanda_lqg::cloop::ExperimentMetrics,
    }
    write(
        &cfg.out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&Both {
            closed: &result.closed.metrics,
            open: &result.open.metrics,
        })
        .unwrap()
        .as_bytes(),
        &mut written,
    )?;
    let t = result.closed.trace.times();
    let svg = render(&PlotSpec {
        title: "Input-disturbance response",
        x_label: "time (s)",
        y_label: "deflection (Pa)",
        log_x: false,
        series: vec![
            Series {
                label: "closed loop",
                color: "#1f6feb",
                points: t.iter().cloned().zip(result.closed.trace.y_meas.iter().cloned()).collect(),
            },
            Series {
                label: "open loop",
                color: "#e36209",
                points: t.iter().cloned().zip(result.open.trace.y_meas.iter().cloned()).collect(),
            },
        ],
    });
    write(&cfg.out_dir.join("disturbance.svg"), svg.as_bytes(), &mut written)?;
    if !quiet {
        println!(
            "disturbance: closed-loop recovery {:?} s, open-loop recovery {:?}",
            result.closed.metrics.recovery_time_s, result.open.metrics.recovery_time_s
        );
    }
    Ok(written)
}

pub fn cmd_flow_sweep(cfg: &ExperimentConfig, quiet: bool) -> CmdResult {
    let mut written = Vec::new();
    let design = default_design()?;
    let mut bank_config = BankConfig::default_sweep();
    bank_config.noise = cfg.noise.to_spec(cfg.seed);
    bank_config.x_unforced = cfg.x_unforced_pa;
    let bank = make_plant_bank(&bank_config)?;
    let reference = if cfg.simulate.reference_pa == 74.0 { 50.0 } else { cfg.simulate.reference_pa };
    let mut sim = cfg.clone();
    sim.simulate.reference_pa = reference;
    if sim.simulate.duration_s < 2.0 * sim.simulate.event_s {
        sim.simulate.duration_s = 0.8;
        sim.simulate.event_s = 0.4;
    }
    let law = control_config(&sim, &design, &bank[0]);
    let opts = experiment_options(&sim);
    let sweep = run_flowrate_sweep(&bank, &law, &design.aug, &opts)?;
    write(
        &cfg.out_dir.join("flow_sweep.json"),
        serde_json::to_string_pretty(&sweep).unwrap().as_bytes(),
        &mut written,
    )?;
    let mut rows = String::from(
        "flow_lpm,mean_drive_v,reachable,cl_recovery_s,ol_recovery_s,cl_normalized,ol_normalized\n",
    );
    let fmt_opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
    for p in &sweep.points {
        rows.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.flow_rate_lpm,
            fmt_opt(p.mean_drive_v),
            p.reachable,
            fmt_opt(p.cl_recovery_s),
            fmt_opt(p.ol_recovery_s),
            fmt_opt(p.cl_normalized),
            fmt_opt(p.ol_normalized),
        ));
    }
    write(&cfg.out_dir.join("flow_sweep.csv"), rows.as_bytes(), &mut written)?;
    let pts: Vec<(f64, f64)> = sweep
        .points
        .iter()
        .filter_map(|p| p.mean_drive_v.map(|v| (p.flow_rate_lpm, v)))
        .collect();
    let svg = render(&PlotSpec {
        title: "Mean control input to hold the reference deflection",
        x_label: "flow rate (lpm)",
        y_label: "mean drive (V)",
        log_x: false,
        series: vec![Series { label: "mean drive", color: "#1f6feb", points: pts }],
    });
    write(&cfg.out_dir.join("flow_sweep.svg"), svg.as_bytes(), &mut written)?;
    if !quiet {
        println!(
            "flow-sweep: {} points, variation closed {:?} / open {:?}",
            sweep.points.len(),
            sweep.cl_variation,
            sweep.ol_variation
        );
    }
    Ok(written)
}

pub fn cmd_quasi_steady(cfg: &ExperimentConfig, quiet: bool) -> CmdResult {
    let mut written = Vec::new();
    let curve = load_deflection(cfg)?;
    let qs = &cfg.quasi_steady;
    let opts = QuasiSteadyOptions { f_max: qs.f_max_hz, ..QuasiSteadyOptions::default() };
    let psi = simulate_quasi_steady(
        &curve,
        qs.carrier_hz,
        qs.sweep_rate_hz_per_s,
        qs.duration_s,
        &coanda_lqg::dsp::SampleSpec::default(),
        &opts,
    )?;
    write(
        &cfg.out_dir.join("psi.csv"),
        io::curve_to_csv(&psi.grid, &psi.psi).as_bytes(),
        &mut written,
    )?;
    let pts: Vec<(f64, f64)> = psi.grid.iter().cloned().zip(psi.psi_db()).collect();
    let svg = render(&PlotSpec {
        title: "Quasi-steady jet response",
        x_label: "modulation frequency (Hz)",
        y_label: "psi (dB)",
        log_x: false,
        series: vec![Series { label: "psi", color: "#1f6feb", points: pts }],
    });
    write(&cfg.out_dir.join("psi.svg"), svg.as_bytes(), &mut written)?;
    if !quiet {
        println!("quasi-steady: {} grid points", psi.grid.len());
    }
    Ok(written)
}

pub fn cmd_ltr_sweep(cfg: &ExperimentConfig, quiet: bool) -> CmdResult {
    let mut written = Vec::new();
    let plant = load_plant(cfg)?;
    let syn = &cfg.synthesize;
    let model = realize(&plant.dynamics)?;
    let aug = augment(&model)?;
    let mut params = DesignParameters::default_for(model.order());
    params.r = syn.r_cost;
    params.q[(model.order(), model.order())] = syn.integrator_cost;
    let lqr = design_lqr(&aug, &params.q, params.r)?;
    let sweep = ltr_sweep(&aug, &lqr, &plant.dynamics, &params.v, &syn.ltr_ratios)?;
    let mut rows = String::from("ratio,gap_db,gain_margin_db,phase_margin_deg,crossover_hz\n");
    for entry in &sweep.entries {
        rows.push_str(&format!(
            "{:e},{:e},{},{},{}\n",
            entry.ratio,
            entry.gap_db,
            entry.margins.gain_margin_db.map_or(String::new(), |v| format!("{v:e}")),
            entry.margins.phase_margin_deg.map_or(String::new(), |v| format!("{v:e}")),
            entry.margins.crossover_hz.map_or(String::new(), |v| format!("{v:e}")),
        ));
        write(
            &cfg.out_dir.join(format!("sensitivity_ratio_{:.0e}.csv", entry.ratio)),
            io::frequency_response_to_csv(&entry.sensitivity).as_bytes(),
            &mut written,
        )?;
    }
    write(&cfg.out_dir.join("ltr_gaps.csv"), rows.as_bytes(), &mut written)?;
    if !quiet {
        let gaps: Vec<f64> = sweep.entries.iter().map(|e| e.gap_db).collect();
        println!("ltr-sweep: gaps {gaps:?} dB");
    }
    Ok(written)
}
