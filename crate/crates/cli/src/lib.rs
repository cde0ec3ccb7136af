//! The `amd` command line: corpus generation, decomposition, automata,
//! training, decoding and checks, each writing a reproducibility manifest.

pub mod commands;
pub mod files;
pub mod manifest;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

/// How a successful command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some instances were skipped.
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 2,
        }
    }

    pub fn from_skips(skipped: usize) -> Self {
        if skipped == 0 {
            Outcome::Success
        } else {
            Outcome::Partial
        }
    }

    pub fn and(self, other: Outcome) -> Self {
        if self == Outcome::Success && other == Outcome::Success {
            Outcome::Success
        } else {
            Outcome::Partial
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "amd",
    version,
    about = "Decompose semantic graphs into AM dependency trees and learn source names",
    long_about = "Decompose semantic graphs into AM dependency trees and learn source names.\n\n\
        Exit codes: 0 success, 2 some instances skipped, 1 failure.\n\
        Verbosity follows the AMD_LOG environment variable (error, warn, info, debug, trace)."
)]
pub struct Cli {
    /// Worker threads for per-instance work (default: all cores).
    #[arg(long, global = true, env = "AMD_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate random well-typed trees and the graphs they evaluate to.
    Gen(GenArgs),
    /// Decompose every graph of a corpus into an AM dependency tree.
    Decompose(DecomposeArgs),
    /// Build one source-assignment automaton per tree.
    BuildAutomata(BuildArgs),
    /// Print the number of trees each automaton accepts.
    Count(CountArgs),
    /// Fit global event weights with EM, or draw random ones.
    TrainEm(TrainEmArgs),
    /// Train the log-linear rule scorer on the summed log inside score.
    TrainJoint(TrainJointArgs),
    /// Decode the best tree per automaton under trained weights, or sample one.
    Viterbi(ViterbiArgs),
    /// Check that trees are well-typed and evaluate to their graphs.
    Verify(VerifyArgs),
    /// Constant entropy and event histograms of a tree file.
    Stats(StatsArgs),
    /// Run decompose, build-automata, train-em, viterbi and stats in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Number of graphs.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Upper bound on nodes per graph.
    #[arg(long, default_value_t = 12)]
    pub max_nodes: usize,
    /// Size of the source inventory the generator draws from.
    #[arg(long, default_value_t = 3)]
    pub sources: usize,
    /// Output directory for graphs.json and gold-trees.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DecomposeArgs {
    /// Corpus: JSON array of graphs.
    #[arg(long)]
    pub graphs: PathBuf,
    /// Blob ownership table (`pattern<TAB>src|tgt` lines); built-in default otherwise.
    #[arg(long)]
    pub blobs: Option<PathBuf>,
    /// Order of edges entering the unrolling queues: `sorted` or `seeded:K`.
    #[arg(long, default_value = "sorted")]
    pub tie_break: String,
    /// Also keep every other analysis found across backward queue orders.
    #[arg(long)]
    pub enumerate_unrollings: bool,
    /// Trees file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-graph status report (default: next to --out).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub trees: PathBuf,
    /// Size of the reusable source inventory s1..sN.
    #[arg(long, default_value_t = 3)]
    pub sources: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CountArgs {
    #[arg(long)]
    pub automata: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainEmArgs {
    #[arg(long)]
    pub automata: PathBuf,
    #[arg(long, default_value_t = 25)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Added to expected counts before renormalizing.
    #[arg(long, default_value_t = 1e-6)]
    pub smoothing: f64,
    /// Skip EM and write weights drawn uniformly from [0.1, 1.0).
    #[arg(long)]
    pub random_weights: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainJointArgs {
    /// Graph corpus the automata were built from; ids must match.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub automata: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Instances per update; 0 uses the whole corpus.
    #[arg(long, default_value_t = 0)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Squared-norm penalty on the parameters.
    #[arg(long, default_value_t = 0.01)]
    pub l2: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ViterbiArgs {
    #[arg(long)]
    pub automata: PathBuf,
    /// Weights written by train-em or train-joint.
    #[arg(long, required_unless_present = "random_trees")]
    pub weights: Option<PathBuf>,
    /// Sample each tree uniformly instead of decoding.
    #[arg(long, conflicts_with = "weights")]
    pub random_trees: bool,
    /// Seed for --random-trees.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long)]
    pub trees: PathBuf,
    /// Report file (default: printed).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub trees: PathBuf,
    /// Also write the statistics here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Graph corpus; required unless --demo.
    #[arg(long, required_unless_present = "demo")]
    pub graphs: Option<PathBuf>,
    /// Use the three built-in example graphs.
    #[arg(long, conflicts_with = "graphs")]
    pub demo: bool,
    #[arg(long)]
    pub blobs: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub sources: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 25)]
    pub iters: usize,
    /// Epochs of joint training; 0 skips it.
    #[arg(long, default_value_t = 0)]
    pub epochs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, configures logging and threads, runs the command.
pub fn run_from_args<I, T>(args: I) -> Result<Outcome>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::parse_from(args);
    if let Some(n) = cli.jobs {
        // a second call in one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    run(cli.command)
}

pub fn init_logging() {
    let env = env_logger::Env::new()
        .filter_or("AMD_LOG", "warn")
        .write_style("AMD_LOG_STYLE");
    let _ = env_logger::Builder::from_env(env).try_init();
}

pub fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Gen(a) => commands::gen(&a),
        Command::Decompose(a) => commands::decompose(&a),
        Command::BuildAutomata(a) => commands::build_automata(&a),
        Command::Count(a) => commands::count(&a),
        Command::TrainEm(a) => commands::train_em(&a),
        Command::TrainJoint(a) => commands::train_joint(&a),
        Command::Viterbi(a) => commands::viterbi(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::Pipeline(a) => commands::pipeline(&a),
    }
}
