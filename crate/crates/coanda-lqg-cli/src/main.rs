//! Command-line front end: experiment configs, campaign orchestration, and
//! CSV/JSON/SVG artifact emission.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{CmdError, CmdResult};
use config::{ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(
    name = "coanda-lqg",
    about = "Closed-loop control toolkit for an acoustically deflected fluidic jet",
    version
)]
struct Cli {
    /// Experiment configuration file (JSON); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Stepped-sine identification campaign: ETFE, fitted model, Bode plot.
    Identify,
    /// Controller synthesis: design matrices, sensitivity, margins, LTR plot.
    Synthesize,
    /// Closed-loop reference step with ensemble averaging and metrics.
    SimulateStep,
    /// Feed-forward-removal disturbance experiment, closed and open loop.
    Disturbance,
    /// Flow-rate sweep: mean drive curve and normalized response times.
    FlowSweep,
    /// Quasi-steady response derived from the static deflection curve.
    QuasiSteady,
    /// Loop-transfer-recovery sweep over the noise-ratio ladder.
    LtrSweep,
    /// Print the configuration JSON schema.
    Schema,
}

impl Command {
    fn kind(self) -> Option<ExperimentKind> {
        match self {
            Command::Identify => Some(ExperimentKind::Identify),
            Command::Synthesize => Some(ExperimentKind::Synthesize),
            Command::SimulateStep => Some(ExperimentKind::SimulateStep),
            Command::Disturbance => Some(ExperimentKind::Disturbance),
            Command::FlowSweep => Some(ExperimentKind::FlowSweep),
            Command::QuasiSteady => Some(ExperimentKind::QuasiSteady),
            Command::LtrSweep => Some(ExperimentKind::LtrSweep),
            Command::Schema => None,
        }
    }
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("COANDA_LQG_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(CmdError::config)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let kind = cli.command.kind();
    if let (Some(declared), Some(invoked)) = (cfg.experiment, kind) {
        if declared != invoked {
            return Err(CmdError::config(format!(
                "config declares experiment {declared:?} but {invoked:?} was invoked"
            )));
        }
    }
    match cli.command {
        Command::Identify => commands::cmd_identify(&cfg, cli.quiet),
        Command::Synthesize => commands::cmd_synthesize(&cfg, cli.quiet),
        Command::SimulateStep => commands::cmd_simulate_step(&cfg, cli.quiet),
        Command::Disturbance => commands::cmd_disturbance(&cfg, cli.quiet),
        Command::FlowSweep => commands::cmd_flow_sweep(&cfg, cli.quiet),
        Command::QuasiSteady => commands::cmd_quasi_steady(&cfg, cli.quiet),
        Command::LtrSweep => commands::cmd_ltr_sweep(&cfg, cli.quiet),
        Command::Schema => {
            println!("{}", config::CONFIG_SCHEMA.trim_end());
            Ok(Vec::new())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    init_thread_pool();
    match run(&cli) {
        Ok(files) => {
            if !cli.quiet {
                for f in files {
                    println!("wrote {}", f.display());
                }
            }
        }
        Err(e) => {
            let payload = serde_json::json!({
                "error": { "kind": e.kind, "message": e.message }
            });
            eprintln!("{payload}");
            std::process::exit(e.exit_code());
        }
    }
}
