mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Learned-difficulty data selection on feature tables.
#[derive(Debug, Parser)]
#[command(name = "selfilter", version)]
pub struct Cli {
    /// TOML file with defaults for the subcommand's tunables; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory for outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted difficulty.
    GenSynth(GenSynthArgs),
    /// Co-train the target model and the score net.
    Train(TrainArgs),
    /// Turn a score-net checkpoint into a difficulty table.
    Score(ScoreArgs),
    /// Greedy hardest-first selection with the neighbor penalty.
    Select(SelectArgs),
    /// Rank by a reference pruning metric.
    Baseline(BaselineArgs),
    /// Train a fresh toy model on a selection and evaluate it.
    Retrain(RetrainArgs),
    /// Correlations, cluster coverage and sweeps.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCommand,
    },
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub feature_noise: Option<f64>,
    #[arg(long)]
    pub clusters_per_regime: Option<usize>,
    /// Number of held-out sequences written to held_out.jsonl.
    #[arg(long)]
    pub held_out: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Checked against the tokens and features when given.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr_model: Option<f64>,
    #[arg(long)]
    pub lr_scorenet: Option<f64>,
    #[arg(long)]
    pub l2_scorenet: Option<f64>,
    #[arg(long)]
    pub grad_accum_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub scorenet: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub meta: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectFlags {
    /// Number of samples to select.
    #[arg(long)]
    pub m: Option<usize>,
    /// Neighbors penalized per pick.
    #[arg(long)]
    pub k: Option<usize>,
    /// Penalty strength.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Plain ranking, no neighbor penalty.
    #[arg(long)]
    pub no_diversity: bool,
    /// Select the easiest samples instead of the hardest.
    #[arg(long)]
    pub easiest: bool,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub difficulties: PathBuf,
    /// Needed unless the penalty is off.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[command(flatten)]
    pub flags: SelectFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    El2n,
    Grand,
    Proto,
    Random,
    External,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    pub metric: Metric,
    /// Dataset ids; defaults to the ids in --tokens.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub tokens: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Model to score with (el2n, grand); otherwise warm-up models are trained.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    /// Warm-up runs averaged, seeded seed, seed+1, ...
    #[arg(long)]
    pub warmup_runs: Option<usize>,
    /// k-means cluster count for proto; defaults to round(sqrt(n)).
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub scores_file: Option<PathBuf>,
    /// Also write the top-m selection.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RetrainArgs {
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long)]
    pub selection: PathBuf,
    #[arg(long)]
    pub held_out: PathBuf,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Pearson and Spearman correlation of difficulty with a metadata field.
    Pearson {
        #[arg(long)]
        difficulties: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        /// `text_len` or the key of a numeric `key:value` tag.
        #[arg(long, default_value = "text_len")]
        field: String,
    },
    /// Distinct clusters among selected samples.
    Coverage {
        #[arg(long)]
        selection: PathBuf,
        #[arg(long)]
        meta: PathBuf,
    },
    /// Repeat the full pipeline over pruning sizes or batch sizes.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepOver {
    PruningSize,
    BatchSize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub variable: SweepOver,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub held_out: PathBuf,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub flags: SelectFlags,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                // --help and --version
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("usage error");
            eprintln!("{first}");
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}");
            eprintln!(
                "error: {}",
                msg.split_whitespace().collect::<Vec<_>>().join(" ")
            );
            ExitCode::from(1)
        }
    }
}
