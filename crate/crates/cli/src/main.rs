//! `packsel` command-line entry point.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::Failure;

#[derive(Debug, Parser)]
#[command(name = "packsel", version, about = "Package type recommendation pipeline")]
struct Cli {
    /// Flat `key = value` settings file (rho, lambda_max, tau, ...).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Print reports as a single JSON object instead of CSV.
    #[arg(long, global = true)]
    json: bool,

    /// Cap the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write seeded synthetic products, shipments and ground truth.
    GenSynthetic(GenArgs),
    /// Fit the rank-monotone damage model on shipments.
    Train(TrainArgs),
    /// Fit a calibration map for a trained model.
    Calibrate(CalibrateArgs),
    /// Damage probabilities for every product and package type.
    Predict(PredictArgs),
    /// Recommend package types for a fixed lambda.
    Solve(SolveArgs),
    /// Recompute totals of a recommendation file.
    Evaluate(EvaluateArgs),
    /// Bisection search for the lambda that meets a damage budget.
    SearchLambda(SearchArgs),
    /// Piecewise-constant cost curve over all breakpoints.
    Sweep(SweepArgs),
    /// Compare the penalized and budgeted problems by brute force.
    Verify(VerifyArgs),
    /// Recommend a type for a product without sales history.
    RecommendNew(NewProductArgs),
}

#[derive(Debug, Args)]
struct CostArgs {
    /// Product CSV.
    #[arg(long)]
    products: PathBuf,
    /// Damage probability CSV, one row per product in the same order.
    #[arg(long)]
    probabilities: PathBuf,
    /// Mask rule file; only the oversize rule applies without one.
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(multiple = false)]
struct BudgetArgs {
    /// Budget as a multiple of the current damage cost.
    #[arg(long)]
    gamma: Option<f64>,
    /// Absolute damage-cost budget.
    #[arg(long)]
    budget: Option<f64>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    products: usize,
    #[arg(long, default_value_t = 8)]
    types: usize,
    #[arg(long, default_value_t = 3)]
    features: usize,
    #[arg(long, default_value_t = 20)]
    shipments_per_product: usize,
    #[arg(long, default_value_t = 0.0)]
    oversize_rate: f64,
    /// Directory for products.csv, shipments.csv, probabilities.csv and
    /// truth.model.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Expansion {
    Linear,
    Quadratic,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    shipments: PathBuf,
    #[arg(long, default_value_t = 8)]
    types: usize,
    /// Weight on undamaged shipments.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long, value_enum)]
    expansion: Option<Expansion>,
    /// Train on the shipments as given, without implied copies.
    #[arg(long)]
    no_augment: bool,
    /// Where to write the model.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Isotonic,
    Platt,
    WeightCorrection,
    Identity,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Held-out shipments.
    #[arg(long)]
    shipments: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Isotonic)]
    method: Method,
    /// Class weight used in training, for weight correction.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-type reliability CSV here.
    #[arg(long)]
    reliability: Option<PathBuf>,
    #[arg(long)]
    quantiles: Option<usize>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    products: PathBuf,
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    costs: CostArgs,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    costs: CostArgs,
    /// Recommendation CSV written by `solve` or `search-lambda`.
    #[arg(long)]
    recommendations: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[command(flatten)]
    costs: CostArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    /// Also write the recommendations at the found lambda.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    costs: CostArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Product CSV; without it a random instance is generated.
    #[arg(long, requires = "probabilities")]
    products: Option<PathBuf>,
    #[arg(long, requires = "products")]
    probabilities: Option<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Products in the generated instance.
    #[arg(long, default_value_t = 6)]
    size: usize,
    #[arg(long, default_value_t = 4)]
    types: usize,
    #[arg(long, default_value_t = 0.2)]
    mask_rate: f64,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
}

#[derive(Debug, Args)]
struct NewProductArgs {
    /// Per-unit shipment costs, comma separated; `inf` marks oversize.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    ship: Vec<f64>,
    /// Per-unit damage costs, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    damage: Vec<f64>,
    /// Infeasible types as 0/1 flags, comma separated.
    #[arg(long, value_delimiter = ',')]
    mask: Option<Vec<u8>>,
    #[arg(long)]
    lambda: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) if failure.is_broken_pipe() => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("packsel: {failure}");
            ExitCode::from(match failure {
                Failure::Usage(_) => 1,
                Failure::Data(_) => 2,
                Failure::Rejected(_) => 3,
            })
        }
    }
}
