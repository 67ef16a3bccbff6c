use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod echo;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "topicstream", version, about = "Build topic sequences and controlled streams, then measure forgetting")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Global {
    /// Run seed; every random draw derives from it.
    #[arg(long, global = true, default_value_t = 13)]
    pub seed: u64,

    /// Directory holding queries.tsv, collection.tsv and qrels.txt.
    #[arg(long, global = true, default_value = ".")]
    pub corpus_dir: PathBuf,

    /// Where outputs (and manifest.json) are written.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,

    /// Worker threads for parallel work (default: logical cores).
    #[arg(long, global = true)]
    #[serde(skip)]
    pub threads: Option<usize>,

    #[arg(long, global = true, default_value = "info")]
    #[serde(skip)]
    pub log_level: log::LevelFilter,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Write a seeded synthetic corpus with planted topics.
    Synth(SynthArgs),
    /// Cluster queries into topics and write a topic sequence.
    BuildTopics(BuildTopicsArgs),
    /// Write the size-matched random sequence of a reference sequence.
    BuildRandom(BuildRandomArgs),
    /// c-score matrix of a sequence's tasks.
    Similarity(SimilarityArgs),
    /// Build direct transfer, information update or language drift streams.
    BuildScenario(BuildScenarioArgs),
    /// Train and evaluate a ranker over a sequence or scenario.
    Run(RunArgs),
    /// Quartile table relating forgetting to task similarity.
    Report(ReportArgs),
    /// Minimal external ranker for protocol checks: scores candidates in
    /// input order, descending.
    #[command(hide = true)]
    ProtocolEcho(EchoArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub topics: usize,
    #[arg(long, default_value_t = 60)]
    pub queries_per_topic: usize,
    #[arg(long, default_value_t = 3)]
    pub distractors: usize,
    /// Add shared cue words so a trained ranker can forget.
    #[arg(long)]
    pub cues: bool,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildTopicsArgs {
    /// Defaults to <corpus-dir>/queries.tsv.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Defaults to <corpus-dir>/qrels.txt.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Query embeddings (`#dim D` header, then `id<TAB>values`).
    #[arg(long)]
    pub vectors: PathBuf,
    /// Seed-community cosine threshold.
    #[arg(long, default_value_t = 0.7)]
    pub t1: f64,
    /// Minimum seed-community size.
    #[arg(long, default_value_t = 40)]
    pub s: usize,
    /// Population cosine threshold.
    #[arg(long, default_value_t = 0.5)]
    pub t2: f64,
    #[arg(long, default_value_t = 50_000)]
    pub sample_size: usize,
    #[arg(long, default_value_t = 40)]
    pub val: usize,
    #[arg(long, default_value_t = 40)]
    pub test: usize,
    #[arg(long, default_value_t = 5)]
    pub tracked: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildRandomArgs {
    /// Directory of the reference sequence.
    #[arg(long)]
    pub reference_sequence: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SimilarityArgs {
    #[arg(long)]
    pub sequence: PathBuf,
    #[arg(long, default_value_t = 250)]
    pub pool_size: usize,
    /// BM25 retrieval depth per pool query.
    #[arg(long, default_value_t = 1000)]
    pub depth: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Dt,
    Iu,
    Ld,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildScenarioArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long)]
    pub sequence: PathBuf,
    /// Number of tasks pooled into the pre-training task.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Number of topics (draws) to build.
    #[arg(long, default_value_t = 3)]
    pub topics: usize,
    /// Document embeddings, needed for iu.
    #[arg(long)]
    pub doc_vectors: Option<PathBuf>,
    /// Query embeddings, needed for ld.
    #[arg(long)]
    pub query_vectors: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RankerKind {
    Bm25,
    Termweight,
    External,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Sequential,
    Joint,
    Frozen,
}

#[derive(Debug, Args, Serialize)]
pub struct RunArgs {
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    pub sequence: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bm25")]
    pub ranker: RankerKind,
    /// Command line of the external ranker, split on whitespace.
    #[arg(long, required_if_eq("ranker", "external"))]
    pub ranker_cmd: Option<String>,
    #[arg(long, value_enum, default_value = "sequential")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// BM25 candidates re-ranked per query.
    #[arg(long, default_value_t = 1000)]
    pub depth: usize,
    /// Seconds to wait for each external ranker reply.
    #[arg(long, default_value_t = 300)]
    pub timeout: u64,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Run directory holding history.csv and manifest.json.
    #[arg(long)]
    pub run: PathBuf,
    /// Matrix CSV written by `similarity`.
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, value_enum, default_value = "mrr10")]
    pub metric: MetricArg,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    Mrr10,
    Mrr100,
}

#[derive(Debug, Args, Serialize)]
pub struct EchoArgs {
    /// Report itself as trainable.
    #[arg(long)]
    pub trainable: bool,
    /// Exit without replying after this many requests.
    #[arg(long)]
    pub die_after: Option<usize>,
}

/// 2 for bad input, 3 when a ranker session fails.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<topicstream::Error>() {
        Some(e) if e.is_runtime() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.global.log_level)
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let g = &cli.global;
    let result = match &cli.command {
        Cmd::Synth(a) => commands::synth(g, a),
        Cmd::BuildTopics(a) => commands::build_topics(g, a),
        Cmd::BuildRandom(a) => commands::build_random(g, a),
        Cmd::Similarity(a) => commands::similarity(g, a),
        Cmd::BuildScenario(a) => commands::build_scenario(g, a),
        Cmd::Run(a) => commands::run(g, a),
        Cmd::Report(a) => commands::report(g, a),
        Cmd::ProtocolEcho(a) => echo::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
