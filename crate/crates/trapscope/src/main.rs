//! Command-line front end. Every stage subcommand loads a JSON run
//! configuration, applies any flag overrides, and executes exactly that
//! stage (prerequisites run implicitly); `run` executes the config's own
//! stage list, and `compare` aligns several finished configurations into
//! one table. `TRAPSCOPE_SEED` overrides the configured seed.
//!
//! Failures exit nonzero and print a machine-readable report to stderr:
//! `{"error": "...", "stage": "..."}` with `stage` null for validation
//! and i/o problems outside any stage.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use trapscope::error::Error;
use trapscope::pipeline::{
    compare_countries, config_hash, run_pipeline, write_compare, BinningConfig, DimensionConfig,
    InterveneConfig, MetricParams, RunConfig, Stage,
};
use trapscope::synth::{KernelSpec, SynthSpec};

/// Environment variable that overrides the configured seed.
const SEED_ENV: &str = "TRAPSCOPE_SEED";

#[derive(Parser)]
#[command(
    name = "trapscope",
    version,
    about = "Markov mobility analysis: landscapes, trap metrics, shocks, and interventions from longitudinal panels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides shared by every stage subcommand.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// JSON run configuration.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output root; artifacts land in OUT/<country>/.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Country key naming the output subdirectory.
    #[arg(long)]
    country: Option<String>,
    /// Panel CSV path (replaces the configured input).
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Seed override; the TRAPSCOPE_SEED variable wins over both.
    #[arg(long)]
    seed: Option<u64>,
    /// Markov order of the estimated chain.
    #[arg(long)]
    order: Option<usize>,
}

#[derive(Args, Clone)]
struct SynthArgs {
    /// JSON run configuration; optional when the kernel flags below
    /// describe the whole panel.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Kernel family: double-well, random, interaction, or momentum.
    /// Factorized and explicit kernels need a config file.
    #[arg(long)]
    kernel: Option<String>,
    /// Bins per dimension for the flag-built kernel.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Barrier height of the double-well kernel.
    #[arg(long, default_value_t = 2.0)]
    depth: f64,
    /// Coupling strength of the interaction kernel.
    #[arg(long, default_value_t = 0.5)]
    strength: f64,
    /// Directional persistence of the momentum kernel.
    #[arg(long, default_value_t = 0.5)]
    momentum: f64,
    #[arg(long, default_value_t = 1000)]
    households: usize,
    #[arg(long, default_value_t = 20)]
    waves: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "xx")]
    country: String,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct IntervenArgs {
    #[command(flatten)]
    common: Overrides,
    /// Income percentile the treatment arms start from.
    #[arg(long)]
    percentile: Option<f64>,
    /// Policy horizon in waves.
    #[arg(long)]
    horizon: Option<usize>,
    /// Boost sizes in percentile points, comma separated (e.g. 5,10,20,40).
    #[arg(long, value_delimiter = ',')]
    boosts: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the panel, writing the ingest summary.
    Ingest(Overrides),
    /// Fit the per-dimension binning and write the state space.
    Bins(Overrides),
    /// Estimate the transition model (plus bootstrap and diagnostics).
    Estimate(Overrides),
    /// Stationary distribution, potential, fixed points, basins, curl.
    Landscape(Overrides),
    /// Mixing time, MFPT matrix, Shorrocks, entropy rate, Kemeny.
    Metrics(Overrides),
    /// First-passage analysis out of the poverty region.
    Escape(Overrides),
    /// Pre/shock comparison: recovery time, trap ratio, net mobility.
    Shock(Overrides),
    /// Counterfactual income/health arms and retention curves.
    Intervene(IntervenArgs),
    /// Generate a synthetic panel (and its ground truth) as a stage.
    Synth(SynthArgs),
    /// Execute the stage list configured in the file.
    Run(Overrides),
    /// Align several countries' headline numbers into one table.
    Compare(CompareArgs),
}

#[derive(Args, Clone)]
struct CompareArgs {
    /// One JSON run configuration per country (repeat the flag).
    #[arg(long = "config", value_name = "FILE", required = true)]
    configs: Vec<PathBuf>,
    /// JSON object mapping country keys to an external deprivation rate.
    #[arg(long, value_name = "FILE")]
    deprivation: Option<PathBuf>,
    /// Directory the comparison table is written into.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn load_config(path: &PathBuf) -> Result<RunConfig, Error> {
    let text = fs::read_to_string(path)?;
    let cfg: RunConfig = serde_json::from_str(&text)?;
    Ok(cfg)
}

fn apply_env_seed(cfg: &mut RunConfig) -> Result<(), Error> {
    if let Ok(raw) = std::env::var(SEED_ENV) {
        let seed = raw
            .parse::<u64>()
            .map_err(|_| Error::Param(format!("{SEED_ENV} must be an integer, got '{raw}'")))?;
        cfg.seed = seed;
    }
    Ok(())
}

fn apply_overrides(cfg: &mut RunConfig, ov: &Overrides) -> Result<(), Error> {
    if let Some(out) = &ov.out {
        cfg.out = out.clone();
    }
    if let Some(country) = &ov.country {
        cfg.country = country.clone();
    }
    if let Some(input) = &ov.input {
        cfg.input = Some(input.clone());
        cfg.synth = None;
    }
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    if let Some(order) = ov.order {
        cfg.order = order;
    }
    apply_env_seed(cfg)
}

/// Run one forced stage with the shared overrides applied.
fn stage_command(stage: Stage, ov: &Overrides) -> Result<(), Error> {
    let mut cfg = load_config(&ov.config)?;
    apply_overrides(&mut cfg, ov)?;
    cfg.stages = vec![stage];
    report_bundle(run_pipeline(&cfg)?)
}

fn report_bundle(bundle: trapscope::pipeline::RunBundle) -> Result<(), Error> {
    for path in &bundle.written {
        println!("{}", path.display());
    }
    eprintln!("config {}", bundle.config_hash);
    Ok(())
}

fn intervene_command(args: &IntervenArgs) -> Result<(), Error> {
    let mut cfg = load_config(&args.common.config)?;
    apply_overrides(&mut cfg, &args.common)?;
    if let Some(h) = args.horizon {
        cfg.params.horizon = h;
    }
    {
        let spec = cfg.intervene.get_or_insert_with(|| InterveneConfig {
            income: "income".into(),
            health: "health".into(),
            percentile: 0.25,
            boosts: vec![0.05, 0.10, 0.20, 0.40],
        });
        if let Some(p) = args.percentile {
            spec.percentile = p;
        }
        if let Some(boosts) = &args.boosts {
            // Flags give percentile points; the model works in fractions.
            spec.boosts = boosts.iter().map(|b| b / 100.0).collect();
        }
    }
    cfg.stages = vec![Stage::Intervene];
    report_bundle(run_pipeline(&cfg)?)
}

fn kernel_from_flags(args: &SynthArgs) -> Result<KernelSpec, Error> {
    let name = args.kernel.as_deref().unwrap_or("double-well");
    match name {
        "double-well" => Ok(KernelSpec::DoubleWell {
            bins: args.k,
            depth: args.depth,
        }),
        "random" => Ok(KernelSpec::RandomStochastic { states: args.k }),
        "interaction" => Ok(KernelSpec::Interaction {
            income_bins: args.k,
            health_bins: 5,
            strength: args.strength,
        }),
        "momentum" => Ok(KernelSpec::Momentum {
            bins: args.k,
            momentum: args.momentum,
        }),
        other => Err(Error::Param(format!(
            "unknown kernel '{other}'; flag-built kernels are double-well, random, interaction, momentum"
        ))),
    }
}

fn synth_command(args: &SynthArgs) -> Result<(), Error> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => {
            let kernel = kernel_from_flags(args)?;
            let out = args.out.clone().ok_or_else(|| {
                Error::Param("synth without a config file needs --out".into())
            })?;
            let dimensions = kernel
                .dim_names()
                .iter()
                .map(|name| DimensionConfig {
                    name: name.clone(),
                    binning: BinningConfig::Equidistant { k: args.k },
                })
                .collect();
            RunConfig {
                country: args.country.clone(),
                stages: vec![Stage::Synth],
                input: None,
                synth: Some(SynthSpec {
                    kernel,
                    households: args.households,
                    waves: args.waves,
                    seed: args.seed,
                    missingness: 0.0,
                    jitter: 0.25,
                    start_wave: 0,
                    shock: None,
                }),
                schema: Default::default(),
                dimensions,
                period_boundaries: vec![],
                params: MetricParams::default(),
                order: 1,
                bootstrap: None,
                homogeneity_interval: None,
                memory_orders: vec![],
                poverty: Default::default(),
                escape_horizon: trapscope::pipeline::DEFAULT_ESCAPE_HORIZON,
                shock: None,
                intervene: None,
                seed: args.seed,
                out,
            }
        }
    };
    if args.config.is_some() {
        if let Some(out) = &args.out {
            cfg.out = out.clone();
        }
        cfg.seed = args.seed;
    }
    apply_env_seed(&mut cfg)?;
    cfg.stages = vec![Stage::Synth];
    report_bundle(run_pipeline(&cfg)?)
}

fn run_command(ov: &Overrides) -> Result<(), Error> {
    let mut cfg = load_config(&ov.config)?;
    apply_overrides(&mut cfg, ov)?;
    report_bundle(run_pipeline(&cfg)?)
}

fn compare_command(args: &CompareArgs) -> Result<(), Error> {
    let mut configs = Vec::with_capacity(args.configs.len());
    for path in &args.configs {
        let mut cfg = load_config(path)?;
        apply_env_seed(&mut cfg)?;
        configs.push(cfg);
    }
    let deprivation: Option<BTreeMap<String, f64>> = match &args.deprivation {
        Some(path) => Some(serde_json::from_str(&fs::read_to_string(path)?)?),
        None => None,
    };
    let table = compare_countries(&configs, deprivation.as_ref())?;
    for path in write_compare(&args.out, &table)? {
        println!("{}", path.display());
    }
    for cfg in &configs {
        eprintln!("config {} {}", cfg.country, config_hash(cfg)?);
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Ingest(ov) => stage_command(Stage::Ingest, &ov),
        Command::Bins(ov) => stage_command(Stage::Bins, &ov),
        Command::Estimate(ov) => stage_command(Stage::Estimate, &ov),
        Command::Landscape(ov) => stage_command(Stage::Landscape, &ov),
        Command::Metrics(ov) => stage_command(Stage::Metrics, &ov),
        Command::Escape(ov) => stage_command(Stage::Escape, &ov),
        Command::Shock(ov) => stage_command(Stage::Shock, &ov),
        Command::Intervene(args) => intervene_command(&args),
        Command::Synth(args) => synth_command(&args),
        Command::Run(ov) => run_command(&ov),
        Command::Compare(args) => compare_command(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stage = match &e {
                Error::Stage { stage, .. } => Some(*stage),
                _ => None,
            };
            let report = json!({ "error": e.to_string(), "stage": stage });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
