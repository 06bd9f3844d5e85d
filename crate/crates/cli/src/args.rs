use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparse_bayes::dataio::Scaling;
use sparse_bayes::{KernelSpec, PriorRule};

#[derive(Debug, Parser)]
#[command(name = "sbl", version, about = "Sparse Bayesian learning with a Bayesian-Lasso prior")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a CSV file and write it as JSON.
    Fit(FitArgs),
    /// Predict from a saved model; writes mean, variance, lo, hi.
    Predict(PredictArgs),
    /// One-dimensional Sinc simulation study.
    BenchSinc1d(BenchArgs),
    /// Two-dimensional Sinc simulation study.
    BenchSinc2d(BenchArgs),
    /// Repeated train/test splits with the identity design.
    Select(SelectArgs),
}

fn parse_rule(s: &str) -> Result<PriorRule, String> {
    s.parse().map_err(|e: sparse_bayes::SblError| e.to_string())
}

fn parse_kernel(s: &str) -> Result<KernelSpec, String> {
    s.parse().map_err(|e: sparse_bayes::SblError| e.to_string())
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got '{s}'")),
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err(format!("expected a number in (0, 1), got '{s}'")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Standardize {
    /// unit-variance for the identity design, none for kernels
    Auto,
    None,
    UnitVariance,
    UnitNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScalingArg {
    UnitVariance,
    UnitNorm,
}

impl From<ScalingArg> for Scaling {
    fn from(s: ScalingArg) -> Self {
        match s {
            ScalingArg::UnitVariance => Scaling::UnitVariance,
            ScalingArg::UnitNorm => Scaling::UnitNorm,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training data with a header row.
    pub data: PathBuf,
    /// Name of the response column.
    #[arg(long, default_value = "y")]
    pub response: String,
    #[arg(long, default_value = "bls", value_parser = parse_rule)]
    pub method: PriorRule,
    /// spline, identity or gaussian:<width>
    #[arg(long, default_value = "spline", value_parser = parse_kernel)]
    pub kernel: KernelSpec,
    #[arg(long, value_enum, default_value_t = Standardize::Auto)]
    pub standardize: Standardize,
    /// Hold the noise variance at this value instead of estimating it.
    #[arg(long, value_parser = parse_positive)]
    pub fix_sigma2: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Inputs with a header naming the model's feature columns.
    pub inputs: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Credible interval coverage.
    #[arg(long, default_value_t = 0.95, value_parser = parse_fraction)]
    pub coverage: f64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1,0.3,0.5")]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "frvm,flap,bls", value_parser = parse_rule)]
    pub methods: Vec<PriorRule>,
    /// Fix σ² at a tenth of each dataset's sample variance.
    #[arg(long)]
    pub fixed_sigma2: bool,
    /// spline, identity or gaussian:<width>
    #[arg(long, default_value = "spline", value_parser = parse_kernel)]
    pub kernel: KernelSpec,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Writes <out>.csv and <out>.md.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub response: String,
    #[arg(long, value_delimiter = ',', default_value = "frvm,flap,bls", value_parser = parse_rule)]
    pub methods: Vec<PriorRule>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Training fraction of each split.
    #[arg(long, default_value_t = 0.8, value_parser = parse_fraction)]
    pub frac: f64,
    #[arg(long, value_enum, default_value_t = ScalingArg::UnitVariance)]
    pub scaling: ScalingArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Summary CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
