//! Batch commands for fitting, combining and evaluating EPP models.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "epimix", version, about = "Fit, combine and evaluate EPP epidemic models across areas")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate ANC data for a country from a synthesis spec.
    Synth(SynthArgs),
    /// Fit each area independently with IMIS.
    Fit(FitArgs),
    /// Reweight per-area samples into a joint mixture posterior.
    Combine(CombineArgs),
    /// Estimate mixture weights and correlations from point estimates.
    Hyperfit(HyperfitArgs),
    /// Hold-out prediction error of independent and mixture posteriors.
    Evaluate(EvaluateArgs),
    /// Project one parameter set.
    Project(ProjectArgs),
    /// Cross-area posterior correlations per year.
    Correlate(CorrelateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScenarioArg {
    Last3,
    Mid6,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON or TOML synthesis spec.
    #[arg(long)]
    pub spec: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Fit or evaluate against a hold-out split.
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    /// Under mid6, cut only this area.
    #[arg(long)]
    pub low_quality_area: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// ANC CSV with columns area,clinic,year,pos,tested.
    #[arg(long)]
    pub anc: PathBuf,
    /// Survey CSV with columns area,year,prevalence,se_probit.
    #[arg(long)]
    pub surveys: Option<PathBuf>,
    /// Restrict to these areas.
    #[arg(long = "area")]
    pub areas: Vec<String>,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct CombineArgs {
    /// Per-area sample CSVs, or directories containing them.
    #[arg(long, num_args = 1.., required = true)]
    pub samples: Vec<PathBuf>,
    /// Hyper JSON; overrides the config.
    #[arg(long)]
    pub hyper: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HyperfitArgs {
    /// CSV with columns country,area,t0,t1,log_r0,beta0..beta4 and optional years,surveys.
    #[arg(long)]
    pub estimates: PathBuf,
    /// Keep countries that fail the data-quality screen.
    #[arg(long)]
    pub no_screen: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub anc: PathBuf,
    /// Per-area sample CSVs or directories.
    #[arg(long, num_args = 1.., required = true)]
    pub samples: Vec<PathBuf>,
    /// Joint CSV from `combine`.
    #[arg(long)]
    pub joint: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Theta JSON with keys t0,t1,log_r0,beta0..beta4.
    #[arg(long)]
    pub theta: PathBuf,
    #[arg(long, default_value_t = 1970)]
    pub start: i32,
    #[arg(long, default_value_t = 2015)]
    pub end: i32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum QuantityArg {
    Prevalence,
    Incidence,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub joint: PathBuf,
    #[arg(long, value_enum, default_value = "prevalence")]
    pub quantity: QuantityArg,
    #[arg(long, default_value_t = 2015)]
    pub end_year: i32,
}

/// Resolve configuration and run the chosen command.
pub fn run(cli: &Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    match &cli.command {
        Command::Synth(a) => commands::synth(&cfg, a),
        Command::Fit(a) => commands::fit(&cfg, a),
        Command::Combine(a) => commands::combine(&cfg, a),
        Command::Hyperfit(a) => commands::hyperfit(&cfg, a),
        Command::Evaluate(a) => commands::evaluate(&cfg, a),
        Command::Project(a) => commands::project(&cfg, a),
        Command::Correlate(a) => commands::correlate(&cfg, a),
    }
}
