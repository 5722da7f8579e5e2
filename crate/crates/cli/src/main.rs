use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod provenance;

/// Exit 1: the inputs were well-formed but the work failed. Exit 2: the
/// invocation itself was wrong.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(osdiag::Error),
}

impl From<osdiag::Error> for CliError {
    fn from(e: osdiag::Error) -> Self {
        match e {
            osdiag::Error::Usage(m) | osdiag::Error::Config(m) => CliError::Usage(m),
            other => CliError::Domain(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "osdiag",
    version,
    about = "Open-set fault diagnosis for vibration records"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for mission sweeps. Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Print progress and the effective configuration to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic six-class dataset.
    Gen(GenArgs),
    /// Train an encoder-classifier on the known classes of a dataset.
    Train(TrainArgs),
    /// Fit the EVT and entropy discriminators for a trained model.
    Calibrate(CalibrateArgs),
    /// Score a calibrated model on the test split.
    Eval(EvalArgs),
    /// Train, calibrate and score a list of missions under several policies.
    Sweep(SweepArgs),
    /// Compare analytic and finite-difference gradients of the training loss.
    Gradcheck(GradcheckArgs),
    /// Summarize a sweep or eval report.
    Report(ReportArgs),
    /// Print the effective configuration.
    Config,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Bin,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "K")]
    pub records_per_class: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Known class ids, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub known: Vec<u32>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Training history report; defaults to the checkpoint path with `.history.toml`.
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Percent of validation samples above each threshold.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fraction of the largest training distances used for the Weibull fit.
    #[arg(long)]
    pub tail: Option<f64>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub calibration: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// evt, entropy or gated.
    #[arg(long, default_value = "evt")]
    pub policy: String,
    #[arg(long)]
    pub gate: Option<f64>,
    /// Report file; printed to stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// `benchmark` or a comma-separated subset of its mission ids.
    #[arg(long, default_value = "benchmark")]
    pub missions: String,
    #[arg(long, value_delimiter = ',', default_value = "evt,entropy")]
    pub policies: Vec<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tail: Option<f64>,
    #[arg(long)]
    pub gate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output directory for report.toml, table.csv and plot.svg.
    #[arg(long, value_name = "DIR")]
    pub report: PathBuf,
    /// Skip the SVG plot.
    #[arg(long)]
    pub no_plot: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Entries probed per parameter tensor.
    #[arg(long, default_value_t = 50)]
    pub probes: usize,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A report.toml written by `sweep` or `eval`.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(CliError::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
