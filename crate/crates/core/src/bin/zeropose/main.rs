//! `zeropose` command-line interface: synthetic scenes, preprocessing, toy features, the
//! feature cache, pose estimation and evaluation reports.

mod commands;
mod report;
mod scenes;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use zeropose::dataset::Shape;

pub const EXIT_SCENE_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "zeropose", version, about = "Descriptor-based 6D pose estimation toolkit")]
struct Cli {
    /// Worker threads for scene-level parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scene bundles.
    Synth(SynthArgs),
    /// Sample, filter and normalize scene bundles into a new directory.
    Preprocess(PreprocessArgs),
    /// Compute toy descriptors for every scene and store them in the feature cache.
    Extract(ExtractArgs),
    /// Write, read, inspect or verify feature cache files.
    #[command(subcommand)]
    Cache(CacheCommand),
    /// Transfer cached query features to target points through the ground-truth map.
    Transfer(TransferArgs),
    /// Estimate poses: feature matching, RANSAC and ICP.
    Match(MatchArgs),
    /// Compute RON, FMR, pose errors and the recall surrogate.
    Eval(EvalArgs),
    /// Merge evaluation outputs into summary tables.
    Report(ReportArgs),
    /// Storage needed for query-only versus per-target feature caching.
    StorageReport(StorageArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "composite", value_parser = parse_shape)]
    pub shape: Shape,
    #[arg(long, default_value_t = 4000)]
    pub points: usize,
    #[arg(long, default_value_t = 0.6)]
    pub partial: f64,
    #[arg(long, default_value_t = 0.005)]
    pub noise: f64,
}

fn parse_shape(s: &str) -> Result<Shape, String> {
    s.parse().map_err(|e: zeropose::Error| e.to_string())
}

/// Preprocessing applied to bundles that have not been preprocessed yet.
#[derive(Debug, Clone, Args, Serialize)]
pub struct PrepArgs {
    #[arg(long, default_value_t = 4000)]
    pub samples: usize,
    #[arg(long, default_value_t = 20)]
    pub outlier_k: usize,
    #[arg(long, default_value_t = 2.0)]
    pub outlier_std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub prep: PrepArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CacheDirArg {
    /// Feature cache directory [default: <scenes>/.cache].
    #[arg(long, env = "ZEROPOSE_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    pub radius: f64,
    #[command(flatten)]
    pub cache: CacheDirArg,
    #[command(flatten)]
    pub prep: PrepArgs,
}

#[derive(Debug, Subcommand)]
pub enum CacheCommand {
    /// Toy descriptors of a PLY cloud, in its own units, written to a cache file.
    Write {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        radius: f64,
        /// Leave point coordinates out of the file.
        #[arg(long)]
        no_coords: bool,
    },
    /// Print the rows of a cache file as JSON.
    Read {
        file: PathBuf,
        #[arg(long, default_value_t = 32)]
        dim: usize,
    },
    /// Print the header of a cache file.
    Info { file: PathBuf },
    /// Check every manifest entry against its checksum.
    Verify {
        #[arg(long, env = "ZEROPOSE_CACHE_DIR")]
        cache_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TransferArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[command(flatten)]
    pub cache: CacheDirArg,
    #[command(flatten)]
    pub prep: PrepArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    /// Toy descriptors computed on the fly.
    Toy,
    /// Toy query descriptors, transferred to the target through the ground truth.
    Transferred,
    /// Cached query and target descriptors.
    Cached,
    /// Cached query descriptors and their cached transfer.
    CachedTransferred,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcpVariantArg {
    PointToPoint,
    PointToPlane,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FeatureArgs {
    #[arg(long, value_enum, default_value_t = FeatureSource::Toy)]
    pub features: FeatureSource,
    #[arg(long, default_value_t = 0.3)]
    pub radius: f64,
    #[command(flatten)]
    pub cache: CacheDirArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MatchArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub ransac_iters: usize,
    #[arg(long, default_value_t = 0.05)]
    pub inlier_threshold: f64,
    #[arg(long, default_value_t = 0.1)]
    pub consistency_tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub icp_iters: usize,
    #[arg(long, default_value_t = 0.05)]
    pub icp_distance: f64,
    #[arg(long, value_enum, default_value_t = IcpVariantArg::PointToPoint)]
    pub icp_variant: IcpVariantArg,
    /// Keep only mutual nearest-neighbor pairs in ICP.
    #[arg(long)]
    pub icp_reciprocal: bool,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub prep: PrepArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    /// Output of `match`; without it the ground truth is scored as the estimate.
    #[arg(long)]
    pub matches: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.03)]
    pub tau1: f64,
    #[arg(long, default_value_t = 0.05)]
    pub tau2: f64,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub prep: PrepArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// Files written by `eval`.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[group(skip)]
#[command(group = ArgGroup::new("mode").required(true).args(["query_objects", "full_bytes"]))]
pub struct StorageArgs {
    #[arg(long, requires_all = ["points"], conflicts_with_all = ["full_bytes", "query_bytes"])]
    pub query_objects: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub target_instances: u64,
    #[arg(long)]
    pub points: Option<u64>,
    #[arg(long, default_value_t = 32)]
    pub dim: u64,
    #[arg(long, default_value_t = 4)]
    pub bytes_per_value: u64,
    /// Compare two quoted sizes directly instead.
    #[arg(long, requires = "query_bytes")]
    pub full_bytes: Option<f64>,
    #[arg(long, requires = "full_bytes")]
    pub query_bytes: Option<f64>,
}

/// What a command achieved when it did not fail outright.
pub enum Outcome {
    Success,
    SceneFailures,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = pool.install(|| match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::Extract(a) => commands::extract(&a),
        Command::Cache(c) => commands::cache(c),
        Command::Transfer(a) => commands::transfer(&a),
        Command::Match(a) => commands::run_match(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Report(a) => commands::report(&a),
        Command::StorageReport(a) => commands::storage(&a),
    });
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::SceneFailures) => ExitCode::from(EXIT_SCENE_FAILURE),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_SCENE_FAILURE)
        }
    }
}
