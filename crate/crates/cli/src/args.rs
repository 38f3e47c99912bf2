use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "idcf", version, about = "Inductive collaborative filtering: pretrain, adapt, evaluate, infer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML experiment configuration.
    #[arg(long, short = 'c')]
    pub config: PathBuf,
    /// Replaces the split, init and shuffle seeds with this value.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for checkpoints and outputs.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write split indices and the key/query partition.
    Split(Common),
    /// Train the factorization on key users and write `mf.ckpt`.
    Pretrain(Common),
    /// Train the relation model on top of `mf.ckpt` and write `rel.ckpt`.
    Adapt(Common),
    /// Score test ratings per cohort and write `metrics.csv`.
    Eval(EvalArgs),
    /// Rank items for a user given only their history.
    Infer(InferArgs),
    /// Generate a low-rank synthetic rating dataset.
    Synth(SynthArgs),
    /// Compare every backward pass against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write relation-model attention weights of query users.
    DumpAttention(DumpAttentionArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Ignore `rel.ckpt` and score with the factorization only.
    #[arg(long)]
    pub transductive: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated item indices, each optionally `item:rating`.
    #[arg(long, allow_hyphen_values = true)]
    pub history: String,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Keep history items among the ranked candidates.
    #[arg(long)]
    pub include_history: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    pub users: usize,
    #[arg(long, default_value_t = 40)]
    pub items: usize,
    #[arg(long, default_value_t = 8)]
    pub rank: usize,
    /// Probability that a cell is observed.
    #[arg(long, default_value_t = 0.3)]
    pub density: f64,
    /// Standard deviation of Gaussian noise added before rescaling.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random coordinates probed per model.
    #[arg(long, default_value_t = 32)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write `gradcheck.csv` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpAttentionArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated user indices; defaults to every query user.
    #[arg(long)]
    pub users: Option<String>,
}
