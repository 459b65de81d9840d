//! Command-line front end: reads a run configuration, executes one
//! experiment and writes CSV tables, SVG renderings and a JSON summary.
//!
//! Output files are named `<subcommand>-<hash>` where the hash covers the
//! subcommand, the fully resolved configuration and any input dataset, so
//! identical runs always land on (and rewrite byte-identically) the same files.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::commands::{CsvBody, Outputs};
use crate::config::{load_config, FitSection, LzSection, RunConfig};
use crate::error::CliError;
use crate::output::write_atomic;

/// Environment variable naming the default output directory.
pub const OUTPUT_ENV: &str = "FLUXLAB_OUT";
pub const DEFAULT_OUTPUT_DIR: &str = "fluxlab-out";

#[derive(Debug, Parser)]
#[command(
    name = "fluxlab",
    version,
    about = "Fluxonium erasure-qubit numerical lab"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML, or JSON including a previous run summary).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the shot / trajectory count of the selected experiment.
    #[arg(long, global = true)]
    pub shots: Option<usize>,
    /// Output directory; defaults to `output_dir`, then $FLUXLAB_OUT, then ./fluxlab-out.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lowest levels and charge matrix elements.
    Spectrum,
    /// Transition frequencies and matrix elements versus external flux.
    FluxSweep,
    /// Two-photon |0⟩→|2⟩ chevron over drive amplitude and detuning.
    Chevron,
    /// Population relaxation, exact and by Gillespie sampling.
    Decay,
    /// Landau–Zener error of the flux ramp.
    Lz(LzArgs),
    /// Repeated erasure checks: survival curves and logical lifetimes.
    ErasureSim,
    /// Postselected logical lifetime versus the check interval.
    LifetimeVsTec,
    /// Normalized survival after a QND check train over drive power and frequency.
    QndMap,
    /// Measurement-induced dephasing over drive power and frequency.
    DephasingMap,
    /// Logical Ramsey fringes.
    Ramsey,
    /// Joint fit of the relaxation rates to population decay data.
    FitRates(DataArgs),
    /// Fit of residual dephasing and bare resonator frequency to a dephasing map.
    FitDephasing(DataArgs),
}

#[derive(Debug, Args)]
pub struct LzArgs {
    /// Avoided-crossing gap, e.g. "48e6 two_pi_hz".
    #[arg(long)]
    pub gap: Option<String>,
    /// Detuning span of the ramp, e.g. "8.6e6 two_pi_hz".
    #[arg(long)]
    pub span: Option<String>,
    /// Ramp duration in seconds.
    #[arg(long)]
    pub ramp: Option<f64>,
    /// Sweep rate in units of span / ramp duration (default 1).
    #[arg(long)]
    pub sweep_factor: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV dataset; overrides `fit.data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::FluxSweep => "flux-sweep",
            Command::Chevron => "chevron",
            Command::Decay => "decay",
            Command::Lz(_) => "lz",
            Command::ErasureSim => "erasure-sim",
            Command::LifetimeVsTec => "lifetime-vs-tec",
            Command::QndMap => "qnd-map",
            Command::DephasingMap => "dephasing-map",
            Command::Ramsey => "ramsey",
            Command::FitRates(_) => "fit-rates",
            Command::FitDephasing(_) => "fit-dephasing",
        }
    }
}

/// Files written by a successful run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub hash: String,
    pub files: Vec<PathBuf>,
    pub summary: PathBuf,
}

fn parse_flag<T: std::str::FromStr>(flag: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("{flag}: {e}")))
}

/// Config with all command-line overrides applied.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match (&cli.config, &cli.command) {
        (Some(path), _) => load_config(path)?,
        (None, Command::Lz(args))
            if args.gap.is_some() && args.span.is_some() && args.ramp.is_some() =>
        {
            RunConfig {
                master_seed: 0,
                output_dir: None,
                circuit: None,
                rates: None,
                readout: None,
                confusion: None,
                experiment: None,
                qnd: None,
                dephasing: None,
                ramsey: None,
                chevron: None,
                flux_sweep: None,
                decay: None,
                lz: None,
                fit: None,
            }
        }
        (None, command) => {
            return Err(CliError::Usage(format!(
                "--config is required for `{}`",
                command.name()
            )));
        }
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(shots) = cli.shots {
        if shots == 0 {
            return Err(CliError::Config("--shots: must be >= 1".into()));
        }
        match cli.command {
            Command::ErasureSim | Command::LifetimeVsTec => {
                if let Some(e) = cfg.experiment.as_mut() {
                    e.shots = shots;
                }
            }
            Command::QndMap => {
                if let Some(q) = cfg.qnd.as_mut() {
                    q.shots = shots;
                }
            }
            Command::Decay => {
                if let Some(d) = cfg.decay.as_mut() {
                    d.trajectories = shots;
                }
            }
            Command::Ramsey => {
                if let Some(r) = cfg.ramsey.as_mut() {
                    r.shots = shots;
                }
            }
            _ => {}
        }
    }
    match &cli.command {
        Command::Lz(args) => {
            let gap = args
                .gap
                .as_deref()
                .map(|v| parse_flag("--gap", v))
                .transpose()?;
            let span = args
                .span
                .as_deref()
                .map(|v| parse_flag("--span", v))
                .transpose()?;
            match cfg.lz.as_mut() {
                Some(lz) => {
                    lz.gap = gap.unwrap_or(lz.gap);
                    lz.span = span.unwrap_or(lz.span);
                    lz.ramp_duration = args.ramp.unwrap_or(lz.ramp_duration);
                    lz.sweep_factor = args.sweep_factor.unwrap_or(lz.sweep_factor);
                }
                None => {
                    if let (Some(gap), Some(span), Some(ramp)) = (gap, span, args.ramp) {
                        cfg.lz = Some(LzSection {
                            gap,
                            span,
                            ramp_duration: ramp,
                            sweep_factor: args.sweep_factor.unwrap_or(1.0),
                        });
                    }
                }
            }
        }
        Command::FitRates(args) | Command::FitDephasing(args) => {
            let base = cli
                .config
                .as_deref()
                .and_then(Path::parent)
                .unwrap_or(Path::new(""));
            if let (None, Some(data)) = (&cfg.fit, &args.data) {
                cfg.fit = Some(FitSection::for_data(data.clone()));
            }
            if let Some(fit) = cfg.fit.as_mut() {
                // Command-line paths are relative to the working directory,
                // config paths to the config file.
                let path = match &args.data {
                    Some(p) => p.clone(),
                    None => base.join(&fit.data),
                };
                fit.data = std::path::absolute(&path).map_err(|e| {
                    CliError::Config(format!("`fit.data` ({}): {e}", path.display()))
                })?;
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn output_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

/// Config as embedded in summaries and hashed: without the output location.
fn embedded(cfg: &RunConfig) -> RunConfig {
    RunConfig {
        output_dir: None,
        ..cfg.clone()
    }
}

pub fn config_hash(command: &str, cfg: &RunConfig) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    hasher.update(command.as_bytes());
    hasher.update(b"\n");
    let text =
        serde_json::to_string(&embedded(cfg)).map_err(|e| CliError::Numerical(e.to_string()))?;
    hasher.update(text.as_bytes());
    if let Some(fit) = &cfg.fit {
        if matches!(command, "fit-rates" | "fit-dephasing") {
            let data = std::fs::read(&fit.data).map_err(|e| {
                CliError::Config(format!("`fit.data` ({}): {e}", fit.data.display()))
            })?;
            hasher.update(b"\n");
            hasher.update(&data);
        }
    }
    let digest = hasher.finalize();
    Ok(digest.iter().take(6).map(|b| format!("{b:02x}")).collect())
}

fn execute(command: &Command, cfg: &RunConfig) -> Result<Outputs, CliError> {
    use crate::commands as c;
    match command {
        Command::Spectrum => c::spectrum(cfg),
        Command::FluxSweep => c::flux_sweep(cfg),
        Command::Chevron => c::chevron(cfg),
        Command::Decay => c::decay(cfg),
        Command::Lz(_) => c::lz(cfg),
        Command::ErasureSim => c::erasure_sim(cfg),
        Command::LifetimeVsTec => c::lifetime_vs_tec_cmd(cfg),
        Command::QndMap => c::qnd_map(cfg),
        Command::DephasingMap => c::dephasing_map(cfg),
        Command::Ramsey => c::ramsey(cfg),
        Command::FitRates(_) => c::fit_rates_cmd(cfg),
        Command::FitDephasing(_) => c::fit_dephasing_cmd(cfg),
    }
}

pub fn run(cli: &Cli) -> Result<RunReport, CliError> {
    let cfg = resolve_config(cli)?;
    let name = cli.command.name();
    let hash = config_hash(name, &cfg)?;
    let dir = output_dir(cli, &cfg);
    let outputs = match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads: must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?
            .install(|| execute(&cli.command, &cfg))?,
        None => execute(&cli.command, &cfg)?,
    };
    let stem = format!("{name}-{hash}");
    let mut files = Vec::new();
    for (suffix, body) in &outputs.csv {
        let text = match body {
            CsvBody::Table(t) => t.to_csv(name, &hash),
            CsvBody::Matrix(m) => m.to_csv(name, &hash),
        };
        files.push(write_atomic(
            &dir,
            &format!("{stem}{suffix}.csv"),
            text.as_bytes(),
        )?);
    }
    for (suffix, svg) in &outputs.svg {
        files.push(write_atomic(
            &dir,
            &format!("{stem}{suffix}.svg"),
            svg.as_bytes(),
        )?);
    }
    let names: Vec<String> = files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let summary = json!({
        "subcommand": name,
        "config_hash": hash,
        "config": embedded(&cfg),
        "files": names,
        "results": outputs.results,
    });
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Numerical(e.to_string()))?
        + "\n";
    let summary = write_atomic(&dir, &format!("{stem}.json"), text.as_bytes())?;
    Ok(RunReport {
        hash,
        files,
        summary,
    })
}

/// Parses `argv`, runs, reports, and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(report) => {
            for f in &report.files {
                println!("{}", f.display());
            }
            println!("{}", report.summary.display());
            0
        }
        Err(e) => {
            eprintln!("fluxlab: {e}");
            e.exit_code()
        }
    }
}
