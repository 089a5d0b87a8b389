//! `tta`: build feature caches, search augmentation policies, evaluate and
//! apply them.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tta_core::imagexform::DomainProfile;

#[derive(Parser)]
#[command(name = "tta", version, about = "Test-time augmentation policy search for image retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute every (image, transform, magnitude) descriptor into a cache file.
    CacheBuild(CacheBuildArgs),
    /// Train the controller and write the best and final policies.
    Search(SearchArgs),
    /// MAP@K with and without each policy in a policy file.
    Eval(EvalArgs),
    /// Normal and weighted transform occurrence rates over a run log.
    ReportOccurrence(ReportArgs),
    /// Dump composed feature vectors for a set of images.
    Apply(ApplyArgs),
}

#[derive(Args)]
pub struct CacheBuildArgs {
    /// Image manifest: `image_id<TAB>path` per line.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output cache file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "trademark")]
    pub profile: DomainProfile,
    /// `full` or a comma-separated list such as `Rotate:3,Invert`.
    #[arg(long, default_value = "full")]
    pub grid: String,
    /// mac, spoc, crow, gem[:p] or rmac[:levels].
    #[arg(long, default_value = "gem:3")]
    pub aggregation: String,
    /// Fit PCA whitening to this many dimensions.
    #[arg(long)]
    pub pca_dim: Option<usize>,
    /// Seed of the built-in extractor's random filters.
    #[arg(long, default_value_t = 0)]
    pub extractor_seed: u64,
}

#[derive(Args)]
pub struct SearchArgs {
    /// JSON run manifest; flags given on the command line take precedence.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Triplet manifest: `anchor<TAB>positive<TAB>negative` per line.
    #[arg(long)]
    pub triplets: Option<PathBuf>,
    /// Output directory for the run log, policies and checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Must match the cache's profile when given.
    #[arg(long)]
    pub profile: Option<DomainProfile>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of policies to sample.
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Triplet margin.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Triplets scored per iteration (default: all).
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Continue from a controller checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long)]
    pub cache: PathBuf,
    /// Ranking task: optional `K=<n>` header, `query<TAB>id,id,...` lines,
    /// optional `db:` section.
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    /// Profile for the default K (default: the cache's profile).
    #[arg(long)]
    pub profile: Option<DomainProfile>,
    /// Write a JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run log written by `search`.
    pub log: PathBuf,
    /// Data file (TSV); defaults to `<log>.occurrence.tsv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long)]
    pub cache: PathBuf,
    /// Comma-separated image ids (default: every image in the cache).
    #[arg(long, value_delimiter = ',')]
    pub images: Vec<u64>,
    /// Which policy of the file to use, counting from 1.
    #[arg(long, default_value_t = 1)]
    pub index: usize,
    /// Output TSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::CacheBuild(a) => commands::cache_build(&a),
        Command::Search(a) => commands::search(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::ReportOccurrence(a) => commands::report_occurrence(&a),
        Command::Apply(a) => commands::apply(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
