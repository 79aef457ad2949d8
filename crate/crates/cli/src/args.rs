//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dialact_core::corpus::Split;
use dialact_core::ModelKind;

/// Environment variable naming the default training config file.
pub const CONFIG_ENV: &str = "DIALACT_CONFIG";

#[derive(Debug, Parser)]
#[command(
    name = "dialact",
    version,
    about = "Lexico-acoustic dialog act classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired audio and text corpus.
    Synth(SynthArgs),
    /// Write MFCC cache files for a WAV file or every audio file of a corpus.
    ExtractMfcc(ExtractArgs),
    /// Train a model and write its directory.
    Train(TrainArgs),
    /// Score a trained model on a corpus split and write report files.
    Evaluate(EvaluateArgs),
    /// Write per-utterance predictions for a corpus split.
    Predict(PredictArgs),
    /// Retrain LM and LAM without question marks and compare.
    AblateQmark(AblateArgs),
    /// Per-class metrics on single-word utterances for several models.
    ReportSingleword(SingleWordArgs),
    /// Corpus size, label histogram and majority baseline.
    Stats(StatsArgs),
}

/// Training configuration sources, lowest precedence first: built-in
/// defaults, the config file, `--set` pairs, `--seed`.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file (defaults to $DIALACT_CONFIG when set).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override config keys, e.g. `--set epochs=5 batch_size=10`.
    #[arg(long = "set", value_name = "KEY=VALUE", num_args = 1..)]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus description (TOML).
    #[arg(long, value_name = "FILE")]
    pub spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output corpus directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// A WAV file or a corpus directory.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Cache file (for a WAV input) or directory (for a corpus).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "lm|am|lam")]
    pub model: ModelKind,
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// Model directory to write.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Pretrained word vectors (text format with a "count dim" header).
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Where to find a trained model.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Checkpoint file inside a model directory, or the directory itself.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Expected model kind; rejected if the checkpoint is of another kind.
    #[arg(long, value_name = "lm|am|lam")]
    pub model: Option<ModelKind>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// Report directory; `<kind>.<split>.txt` and `.tsv` are written there.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// Predictions file (TSV).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// Label of the question class.
    #[arg(long, default_value = "QUESTION")]
    pub question_label: String,
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Report directory; `ablation.txt` and `ablation.tsv` are written there.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SingleWordArgs {
    /// One model checkpoint or directory per flag.
    #[arg(long = "checkpoint", value_name = "PATH", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[arg(long, value_delimiter = ',', default_value = "right,yeah")]
    pub words: Vec<String>,
    /// Labels to report, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub classes: Vec<String>,
    /// Report directory; `singleword.txt` and `singleword.tsv` are written there.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// Also write the table to this file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split {s:?} (expected train, valid or test)"))
}
