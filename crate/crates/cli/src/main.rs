//! `slicerecon`: synth → train → reconstruct → score → evaluate.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use slicerecon::config::RunConfig;
use slicerecon::data::PhantomSpec;
use slicerecon::losses::Objective;
use slicerecon::{pipeline, Error, Result};

/// Environment variable selecting the compute device.
const DEVICE_VAR: &str = "SLICERECON_DEVICE";

#[derive(Parser)]
#[command(
    name = "slicerecon",
    version,
    about = "Adjacent-slice reconstruction anomaly scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in desk defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for phantom generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory holding every stage's outputs.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Replace existing stage outputs.
    #[arg(long, global = true)]
    overwrite: bool,
    /// Override any config field, e.g. `--set train.steps=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Start from the full-size profile instead of the desk profile.
    #[arg(long, global = true)]
    paper_profile: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded phantom dataset and its manifest.
    Synth(PhantomFlags),
    /// Train the reconstructor on the training split.
    Train {
        /// dice, wgan_gp or wgan_gp_l1.
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Write predicted stacks and montages for one split.
    Reconstruct,
    /// Write per-scan score tables.
    Score,
    /// Select the score on validation and evaluate it on test.
    Evaluate,
}

#[derive(Args)]
struct PhantomFlags {
    #[arg(long)]
    n_healthy: Option<usize>,
    #[arg(long)]
    n_anomalous: Option<usize>,
    #[arg(long)]
    slices_per_volume: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    severity: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    validation_healthy: Option<usize>,
    #[arg(long)]
    test_healthy: Option<usize>,
    #[arg(long)]
    validation_anomalous: Option<usize>,
}

impl PhantomFlags {
    fn apply(&self, spec: &mut PhantomSpec) {
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut spec.n_healthy, self.n_healthy);
        set(&mut spec.n_anomalous, self.n_anomalous);
        set(&mut spec.slices_per_volume, self.slices_per_volume);
        set(&mut spec.slice_size.0, self.height);
        set(&mut spec.slice_size.1, self.width);
        set(&mut spec.validation_healthy, self.validation_healthy);
        set(&mut spec.test_healthy, self.test_healthy);
        set(&mut spec.validation_anomalous, self.validation_anomalous);
        if let Some(v) = self.severity {
            spec.severity = v;
        }
        if let Some(v) = self.noise_sigma {
            spec.noise_sigma = v;
        }
    }
}

fn parse_objective(s: &str) -> Result<Objective> {
    match s {
        "dice" => Ok(Objective::Dice),
        "wgan_gp" => Ok(Objective::WganGp),
        "wgan_gp_l1" => Ok(Objective::WganGpL1),
        other => Err(Error::Config(format!(
            "unknown objective {other:?}; expected dice, wgan_gp or wgan_gp_l1"
        ))),
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None if c.paper_profile => RunConfig::paper(),
        None => RunConfig::desk(),
    };
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    match &cli.command {
        Command::Synth(flags) => flags.apply(&mut cfg.phantom),
        Command::Train { objective, steps } => {
            if let Some(o) = objective {
                cfg.set_objective(parse_objective(o)?);
            }
            if let Some(s) = steps {
                cfg.train.steps = *s;
            }
        }
        _ => {}
    }
    cfg.apply_overrides(&c.overrides)?;
    Ok(cfg)
}

fn check_device() -> Result<()> {
    match std::env::var(DEVICE_VAR) {
        Ok(d) if !d.eq_ignore_ascii_case("cpu") => Err(Error::Config(format!(
            "{DEVICE_VAR}={d:?} is not available; this build supports cpu only"
        ))),
        _ => Ok(()),
    }
}

fn run(cli: &Cli) -> Result<()> {
    check_device()?;
    let cfg = resolve_config(cli)?;
    let (out, overwrite) = (&cli.common.out, cli.common.overwrite);
    match cli.command {
        Command::Synth(_) => {
            let m = pipeline::synth(&cfg, out, overwrite)?;
            info!("synth: {} scans", m.entries.len());
        }
        Command::Train { .. } => {
            let ckpt = pipeline::train_stage(&cfg, out, overwrite)?;
            info!("train: finished at step {}", ckpt.step);
        }
        Command::Reconstruct => {
            let files = pipeline::reconstruct(&cfg, out, overwrite)?;
            info!("reconstruct: {} scans written", files.len());
        }
        Command::Score => {
            for path in pipeline::score(&cfg, out, overwrite)? {
                info!("score: wrote {}", path.display());
            }
        }
        Command::Evaluate => {
            let report = pipeline::evaluate(&cfg, out, overwrite)?;
            println!(
                "selected {} {} (validation AUC {:.4})",
                report.selection.metric,
                report.selection.aggregation,
                report.selection.validation_auc
            );
            for c in &report.comparisons {
                println!(
                    "{:<16} AUC {:.4}  ({} neg / {} pos)",
                    c.name, c.auc, c.n_neg, c.n_pos
                );
            }
        }
    }
    Ok(())
}

/// Distinct exit status per error category.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::MissingInput(_) => 4,
        Error::Regime(_) => 5,
        Error::Data(_) | Error::Format(_) | Error::Dimension(_) | Error::Bounds(_) => 6,
        Error::Divergence { .. } => 7,
        Error::OutputExists(_) => 8,
        _ => 1,
    }
}

fn category(e: &Error) -> &'static str {
    match exit_code(e) {
        3 => "config",
        4 => "missing-input",
        5 => "regime",
        6 => "data",
        7 => "divergence",
        8 => "output-exists",
        _ => "error",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", category(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
