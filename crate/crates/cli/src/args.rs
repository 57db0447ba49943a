use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use resident::MergeMode;

#[derive(Parser, Debug)]
#[command(name = "resident", version, about = "Byte-level language identification with residual CNNs and a bi-GRU")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on a TSV file and write it with its per-epoch metrics.
    Train(TrainArgs),
    /// Label one sentence per input line.
    Predict(PredictArgs),
    /// Score a model on a labelled TSV file.
    Evaluate(EvaluateArgs),
    /// Strip links, usernames and hashtags from a tweet TSV file.
    Clean(CleanArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Run1,
    Run2,
    Run3,
}

impl Preset {
    pub fn n_blocks(self) -> usize {
        match self {
            Preset::Run1 => 5,
            Preset::Run2 => 4,
            Preset::Run3 => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Merge {
    Concat,
    Add,
}

impl From<Merge> for MergeMode {
    fn from(m: Merge) -> Self {
        match m {
            Merge::Concat => MergeMode::Concat,
            Merge::Add => MergeMode::Add,
        }
    }
}

/// Architecture overrides; any of these conflicts with `--preset`.
#[derive(Args, Debug, Default)]
pub struct ArchArgs {
    #[arg(long)]
    pub n_blocks: Option<usize>,
    /// Byte embedding size.
    #[arg(long)]
    pub d_b: Option<usize>,
    #[arg(long)]
    pub conv_filters: Option<usize>,
    /// Window sizes of the two convolutions in each block.
    #[arg(long, num_args = 2, value_names = ["FIRST", "SECOND"])]
    pub windows: Option<Vec<usize>>,
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long, value_enum)]
    pub merge: Option<Merge>,
    #[arg(long)]
    pub block_dropout: Option<f64>,
    #[arg(long)]
    pub gru_hidden: Option<usize>,
    #[arg(long)]
    pub gru_dropout: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

impl ArchArgs {
    pub fn given(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let flags: [(&str, bool); 10] = [
            ("--n-blocks", self.n_blocks.is_some()),
            ("--d-b", self.d_b.is_some()),
            ("--conv-filters", self.conv_filters.is_some()),
            ("--windows", self.windows.is_some()),
            ("--pool", self.pool.is_some()),
            ("--merge", self.merge.is_some()),
            ("--block-dropout", self.block_dropout.is_some()),
            ("--gru-hidden", self.gru_hidden.is_some()),
            ("--gru-dropout", self.gru_dropout.is_some()),
            ("--max-len", self.max_len.is_some()),
        ];
        for (name, set) in flags {
            if set {
                out.push(name);
            }
        }
        out
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training data, one `sentence<TAB>label` per line.
    #[arg(long)]
    pub train: PathBuf,
    /// Held-out data for early stopping; defaults to a slice of --train.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// JSON object with model and training fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch metrics as JSON lines [default: <out>.metrics.jsonl].
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GroupArgs {
    /// Restrict labels to a language group (e.g. B).
    #[arg(long)]
    pub group: Option<String>,
    /// Label used for predictions outside --group.
    #[arg(long, requires = "group")]
    pub fallback: Option<String>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Sentences, one per line [default: standard input].
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub group: GroupArgs,
    /// Append the class probabilities, in model label order.
    #[arg(long)]
    pub probs: bool,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub group: GroupArgs,
    /// Name of the row in the results table.
    #[arg(long, default_value = "model")]
    pub run: String,
    /// Write the confusion matrix here as TSV.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    /// Write the scores here as one JSON line.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
}

#[derive(Args, Debug)]
pub struct CleanArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output TSV [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Remove lines judged to be English.
    #[arg(long)]
    pub drop_english: bool,
    /// Judge English with this model instead of the stop-word heuristic.
    #[arg(long, requires = "drop_english")]
    pub english_model: Option<PathBuf>,
    /// Label of the English class in --english-model.
    #[arg(long, default_value = "en", requires = "english_model")]
    pub english_label: String,
    /// Minimum English probability for a line to be dropped.
    #[arg(long, default_value_t = 0.5, requires = "english_model")]
    pub threshold: f64,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to run, starting at --seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Scale one component's analytic gradients to test the harness.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}
