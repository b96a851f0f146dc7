//! `prefroute`: tag preference data, sample candidate routings, fit a
//! performance predictor, and route instances between humans and an LM.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prefroute::ppm::{Expansion, ModelKind};
use prefroute::ErrorClass;

use config::RouteStrategy;

#[derive(Parser)]
#[command(
    name = "prefroute",
    version,
    about = "Route preference annotations between humans and an LM"
)]
pub struct Cli {
    /// TOML file with defaults for every setting; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed for all randomized stages.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Proceed when input fingerprints do not chain.
    #[arg(long, global = true)]
    pub force: bool,

    /// Human-readable summary instead of JSON on stdout.
    #[arg(long, global = true)]
    pub pretty: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Compute textual and descriptive tags for every instance.
    Tag(TagArgs),
    /// Sample candidate routing configurations.
    Sample(SampleArgs),
    /// Attach externally measured performance to candidates.
    IngestPerf(IngestArgs),
    /// Write the candidate feature matrix as CSV.
    ExportFeatures(ExportArgs),
    /// Fit a performance prediction model.
    Fit(FitArgs),
    /// Choose a routing configuration.
    Route(RouteArgs),
    /// Per-instance and per-tag gain reports.
    Gain(GainArgs),
    /// Agreement between human and LM labels.
    Agree(AgreeArgs),
    /// Derive preference labels from per-aspect ratings.
    Binarize(BinarizeArgs),
    /// Run the synthetic end-to-end evaluation harness.
    OracleEval(OracleArgs),
}

#[derive(Args)]
pub struct TagArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Read the dataset as one JSON array instead of JSON lines.
    #[arg(long)]
    pub json_array: bool,
    /// JSON-lines file of precomputed embeddings keyed by id.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_descriptive: bool,
    /// Require supplied embeddings instead of the hashing fallback.
    #[arg(long)]
    pub no_fallback_embedding: bool,
    #[arg(long)]
    pub embedding_seed: Option<u64>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Descriptive tagger endpoint for instances without supplied tags.
    #[arg(long)]
    pub tagger_url: Option<String>,
    /// Drop tie-labeled instances before tagging.
    #[arg(long)]
    pub filter_ties: bool,
    /// Tag a seeded sample of this many instances.
    #[arg(long)]
    pub subsample: Option<usize>,
    /// Where to write the prepared dataset (required with --filter-ties or --subsample).
    #[arg(long)]
    pub prepared_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub tags: Option<PathBuf>,
    /// Dataset to check the tag file against.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Append the all-human and all-LM candidates.
    #[arg(long, overrides_with = "no_endpoints")]
    pub endpoints: bool,
    #[arg(long)]
    pub no_endpoints: bool,
    /// Fixed budget for every sample instead of a random one.
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// CSV with `candidate_id` and `performance` columns.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub tags: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Training matrix CSV instead of a candidate file.
    #[arg(long, conflicts_with = "candidates")]
    pub matrix: Option<PathBuf>,
    /// Tag file supplying the vocabulary and dataset size.
    #[arg(long)]
    pub tags: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<ModelKind>,
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long, value_parser = parse_expansion)]
    pub expansion: Option<Expansion>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    /// Candidates held out for evaluation.
    #[arg(long)]
    pub holdout: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fit report path (default: `<out>.report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct RouteArgs {
    #[arg(long, value_enum)]
    pub strategy: Option<RouteStrategy>,
    #[arg(long)]
    pub tags: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Number of instances to route to humans.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Budget as a fraction of the dataset size.
    #[arg(long, conflicts_with = "budget")]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub n_sims: Option<usize>,
    #[arg(long)]
    pub slack: Option<f64>,
    /// Include the all-human and all-LM candidates in the simulated pool.
    #[arg(long)]
    pub endpoints: bool,
    /// Allow a model trained on a different tag vocabulary.
    #[arg(long)]
    pub allow_remap: bool,
    /// Also write every scored simulated candidate here.
    #[arg(long)]
    pub pool_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GainArgs {
    #[arg(long)]
    pub tags: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub n_route: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub allow_remap: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct AgreeArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Restrict to the instances this routing result sends to humans.
    #[arg(long)]
    pub routing: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BinarizeArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub field_a: Option<String>,
    #[arg(long)]
    pub field_b: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct OracleArgs {
    /// Harness settings as TOML (the `[harness]` table of --config otherwise).
    #[arg(long)]
    pub harness: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: prefroute::Error| e.to_string())
}

fn parse_expansion(s: &str) -> Result<Expansion, String> {
    match s {
        "squares_only" | "squares-only" => Ok(Expansion::SquaresOnly),
        "full_interactions" | "full-interactions" => Ok(Expansion::FullInteractions),
        _ => Err(format!("unknown expansion {s:?}")),
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Validation => 2,
        ErrorClass::Io => 3,
        ErrorClass::Numeric => 4,
        ErrorClass::External => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("prefroute {}: {}", e.stage, e.error);
            ExitCode::from(exit_code(e.error.class()))
        }
    }
}
