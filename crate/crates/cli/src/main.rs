//! `shapkan` command-line pipeline: data generation, training, node scoring,
//! pruning, symbolic recovery and the Shapley sampling benchmark.

mod commands;
mod interactive;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use shapkan::datasets::SyntheticTask;
use shapkan::KanError;

#[derive(Debug, Parser)]
#[command(name = "shapkan", version, about = "Kolmogorov-Arnold networks with Shapley-value node pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample one of the synthetic benchmark tasks into a CSV file.
    GenData(GenDataArgs),
    /// Train a network (fresh or from --init-model) on a CSV dataset.
    Train(TrainArgs),
    /// Score hidden-layer nodes by Shapley values or edge magnitudes.
    Score(ScoreArgs),
    /// Remove hidden nodes bottom-up and write the pruned model.
    Prune(PruneArgs),
    /// Snap every edge to a closed-form primitive and compose a formula.
    Symbolify(SymbolifyArgs),
    /// Bias of sampled Shapley estimates against the exact values.
    BenchSv(BenchArgs),
}

fn parse_task(s: &str) -> Result<SyntheticTask, String> {
    s.parse().map_err(|e: KanError| e.to_string())
}

#[derive(Debug, Args, Serialize)]
struct GenDataArgs {
    #[arg(long, value_parser = parse_task)]
    task: SyntheticTask,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, default_values_t = [-1.0, 1.0])]
    range: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Layer widths such as `2,5,1`.
    #[arg(long, value_delimiter = ',', conflicts_with = "init_model")]
    widths: Option<Vec<usize>>,
    /// Take widths, grid, degree and lambda from a task preset.
    #[arg(long, value_parser = parse_task, conflicts_with = "init_model")]
    preset: Option<SyntheticTask>,
    /// Continue training an existing model.
    #[arg(long)]
    init_model: Option<PathBuf>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    domain: Option<Vec<f64>>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    mu1: f64,
    #[arg(long, default_value_t = 1.0)]
    mu2: f64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Held-out CSV whose RMSE is logged during training.
    #[arg(long)]
    val_data: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    val_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ScoreMethod {
    ShapExact,
    ShapPerm,
    ShapAnti,
    ShapAdaptive,
    Vanilla,
}

#[derive(Debug, Args, Serialize)]
struct SamplingArgs {
    /// Permutations for shap-perm, antithetic pairs for shap-anti.
    #[arg(long, default_value_t = 256)]
    m: usize,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, default_value_t = 1024)]
    m_max: usize,
}

#[derive(Debug, Args, Serialize)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "shap-exact")]
    method: ScoreMethod,
    /// Hidden layer to score; every hidden layer when omitted.
    #[arg(long)]
    layer: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    sampling: SamplingArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output stem; reports go to `<stem>.layer<L>.json` and `.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum PruneMethodArg {
    Shapkan,
    Vanilla,
}

#[derive(Debug, Args, Serialize)]
#[group(id = "criterion", required = true, multiple = false)]
struct CriterionArgs {
    /// Remove this many nodes per hidden layer.
    #[arg(long, group = "criterion")]
    number: Option<usize>,
    /// Remove nodes whose share of total |score| is below this ratio.
    #[arg(long, group = "criterion")]
    ratio: Option<f64>,
    /// Remove nodes scoring below this threshold.
    #[arg(long, group = "criterion")]
    threshold: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    criterion: CriterionArgs,
    #[arg(long, value_enum, default_value = "shapkan")]
    method: PruneMethodArg,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, default_value_t = 1024)]
    m_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SymbolifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Prompt for a choice on every edge instead of taking the best fit.
    #[arg(long, conflicts_with = "auto")]
    interactive: bool,
    #[arg(long)]
    auto: bool,
    /// Comma-separated primitive names; the full library when omitted.
    #[arg(long, value_delimiter = ',')]
    library: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    layer: usize,
    #[arg(long, value_delimiter = ',', default_value = "32,64,128,256,512,1024")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long)]
    antithetic: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// 1 for I/O failures, 3 for numeric divergence, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<KanError>() {
            return match e {
                KanError::Io(_) => 1,
                e if e.is_numeric() => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Score(a) => commands::score(a),
        Command::Prune(a) => commands::prune(a),
        Command::Symbolify(a) => commands::symbolify(a),
        Command::BenchSv(a) => commands::bench_sv(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
