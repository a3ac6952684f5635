use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "manisamp",
    version,
    about = "Sample densities on embedded manifolds and run conditional tests"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw points on a torus, by area measure or naively.
    Torus(TorusArgs),
    /// Run the Metropolis chain on the Gamma sum/product manifold.
    Gamma(GammaArgs),
    /// Conditional smooth test of uniformity on [0, 1].
    Neyman(NeymanArgs),
    /// Compare the neighborhood sampler's stationary law with its target.
    Pitfall(PitfallArgs),
    /// Run the quick calibration suites and summarize them.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// Seed for every random stream of the run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file, written atomically.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TorusMethod {
    Area,
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeArg {
    Tight,
    Loose,
}

#[derive(Debug, Args, Serialize)]
pub struct TorusArgs {
    #[arg(long)]
    pub n: usize,
    /// Major radius.
    #[arg(long = "R")]
    #[serde(rename = "R")]
    pub major: f64,
    /// Minor radius.
    #[arg(long = "r")]
    #[serde(rename = "r")]
    pub minor: f64,
    #[arg(long, value_enum, default_value_t = TorusMethod::Area)]
    pub method: TorusMethod,
    /// Rejection envelope for the area sampler.
    #[arg(long, value_enum, default_value_t = EnvelopeArg::Tight)]
    pub envelope: EnvelopeArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMode {
    Area,
    Conditional,
}

#[derive(Debug, Args, Serialize)]
pub struct GammaArgs {
    #[arg(long)]
    pub n: usize,
    /// Required sum.
    #[arg(long = "S")]
    #[serde(rename = "S")]
    pub sum: f64,
    /// Required product.
    #[arg(long = "P")]
    #[serde(rename = "P")]
    pub product: f64,
    #[arg(long, default_value_t = 10_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1_000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    /// Proposal half-width; defaults to 0.05 S/n.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, value_enum, default_value_t = GammaMode::Area)]
    pub mode: GammaMode,
    /// Emit uniformly permuted coordinates instead of the x1 >= x2 half.
    #[arg(long)]
    pub symmetrize: bool,
    /// Probability of a coordinate-permutation move at each step.
    #[arg(long, default_value_t = 0.0)]
    pub permute_prob: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StatisticArg {
    Legendre5,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleArg {
    SquareRoot,
    Hastings,
}

#[derive(Debug, Args, Serialize)]
pub struct NeymanArgs {
    /// Observations in [0, 1], one per line.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of replicates.
    #[arg(long = "B", default_value_t = 99)]
    #[serde(rename = "B")]
    pub replicates: usize,
    /// Steps per chain run.
    #[arg(long = "T", default_value_t = 500)]
    #[serde(rename = "T")]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[arg(long, value_enum, default_value_t = StatisticArg::Legendre5)]
    pub statistic: StatisticArg,
    /// Legendre degree for `--statistic custom` (at least 5).
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long, value_enum, default_value_t = RuleArg::SquareRoot)]
    pub rule: RuleArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Demo {
    Path3,
    Random,
}

#[derive(Debug, Args, Serialize)]
pub struct PitfallArgs {
    #[arg(long, value_enum, default_value_t = Demo::Path3)]
    pub demo: Demo,
    /// Vertex count of the random demo.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Leave x out of its own neighborhood in the random demo.
    #[arg(long)]
    pub open: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    /// Whole-test replications for the calibration suites.
    #[arg(long, default_value_t = 400)]
    pub reps: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}
