use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod domain;
mod error;
mod report;

use report::Format;

/// Certified local Lipschitz bounds for ReLU networks.
#[derive(Debug, Parser)]
#[command(name = "lipcert", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bound the local Lipschitz constant over a box.
    Bound(BoundArgs),
    /// Tighten the linear bound by branch-and-bound.
    Bab(BabArgs),
    /// Sampled lower bound and pattern-enumeration upper bound.
    Oracle(OracleArgs),
    /// Per-feature monotonicity verdicts from Jacobian sign bounds.
    Monotone(MonotoneArgs),
    /// Run every mode on one model and check that they are ordered.
    Compare(CompareArgs),
    /// Write a seeded random network (and optionally a domain).
    Gen(GenArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model file in the JSON model format.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct DomainArgs {
    /// Ball center, comma-separated; a single value is repeated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub center: Option<Vec<f64>>,
    /// Ball radius (ℓ∞).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Box lower corner, comma-separated; a single value is repeated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lo: Option<Vec<f64>>,
    /// Box upper corner, comma-separated; a single value is repeated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub hi: Option<Vec<f64>>,
    /// JSON file holding {"center": [...], "eps": e} or {"lo": [...], "hi": [...]}.
    #[arg(long)]
    pub domain: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Linear,
    Interval,
    Naive,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IntermediateArg {
    Linear,
    Interval,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SlopeArg {
    Adaptive,
    Zero,
    One,
}

#[derive(Debug, Args)]
pub struct BoundOptionArgs {
    /// How hidden pre-activation bounds are computed.
    #[arg(long, value_enum, default_value_t = IntermediateArg::Linear)]
    pub intermediate: IntermediateArg,
    /// Lower-line slope for unstable ReLUs in the pre-activation pass.
    #[arg(long, value_enum, default_value_t = SlopeArg::Adaptive)]
    pub lower_slope: SlopeArg,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub domain: DomainArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Linear)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub options: BoundOptionArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BabOptionArgs {
    /// Wall-clock budget in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub time_limit: f64,
    /// Domains split per iteration.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 100_000)]
    pub max_domains: usize,
    /// Margin ε̃ kept between a split neuron and zero.
    #[arg(long, default_value_t = lipcert::bab::DEFAULT_SPLIT_MARGIN)]
    pub split_margin: f64,
}

#[derive(Debug, Args)]
pub struct BabArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub domain: DomainArgs,
    #[command(flatten)]
    pub bab: BabOptionArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub domain: DomainArgs,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct MonotoneArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Baseline input, comma-separated; a single value is repeated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub baseline: Option<Vec<f64>>,
    /// JSON file with an array of baseline inputs.
    #[arg(long)]
    pub baselines: Option<PathBuf>,
    /// Smallest value of each feature; a single value is repeated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub range_lo: Vec<f64>,
    /// Largest value of each feature; a single value is repeated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub range_hi: Vec<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub domain: DomainArgs,
    /// Also run branch-and-bound.
    #[arg(long)]
    pub with_bab: bool,
    #[command(flatten)]
    pub bab: BabOptionArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Layer widths from input to output, e.g. 8,16,16,3.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the model.
    #[arg(long)]
    pub model_out: PathBuf,
    /// Radius of the domain written to --domain-out.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Also write a domain file with a seeded random center.
    #[arg(long)]
    pub domain_out: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bound(a) => commands::bound(&a),
        Command::Bab(a) => commands::bab(&a),
        Command::Oracle(a) => commands::oracle(&a),
        Command::Monotone(a) => commands::monotone(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Gen(a) => commands::gen(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
