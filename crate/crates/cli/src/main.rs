//! `mner`: train, evaluate and run the multimodal NER taggers, and run the
//! numerical self-checks.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data,
//! checkpoint or numerical error, 3 verification failure.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mner_core::error::Error as CoreError;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_VERIFY: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "mner",
    version,
    about = "Multimodal named entity recognition for tweets with images"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// key=value settings file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Directory that relative data and resource paths are resolved against.
    #[arg(long, global = true, env = "MNER_DATA_ROOT", value_name = "DIR")]
    pub data_root: Option<PathBuf>,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a tagged corpus.
    Eval(EvalArgs),
    /// Tag raw sentences, one per line.
    Tag(TagArgs),
    /// Run the gradient and oracle checks.
    Verify(VerifyArgs),
}

/// Word-embedding and subword files. Unset files default to the bundled
/// synthetic ones.
#[derive(Args, Debug, Default)]
pub struct ResourceArgs {
    /// GloVe-format text file (CWI).
    #[arg(long, value_name = "FILE")]
    pub glove: Option<PathBuf>,
    /// fastText-format text file (CWI).
    #[arg(long, value_name = "FILE")]
    pub fasttext: Option<PathBuf>,
    /// Subword vocabulary, one piece per line (MSB).
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
}

/// Architecture overrides.
#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// MSB: CRF output layer instead of per-token softmax.
    #[arg(long)]
    pub use_crf: bool,
    /// CWI: replace targeted dropout, group norm and SineRelu with identity.
    #[arg(long)]
    pub no_regularizers: bool,
    /// CWI: GloVe vector width.
    #[arg(long, value_name = "N")]
    pub glove_dim: Option<usize>,
    /// CWI: fastText vector width.
    #[arg(long, value_name = "N")]
    pub fasttext_dim: Option<usize>,
    /// Any architecture setting, e.g. `--set hidden=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug, Default)]
pub struct CorpusArgs {
    /// Image-word sidecar TSV.
    #[arg(long, value_name = "FILE")]
    pub sidecar: Option<PathBuf>,
    /// Corpus file format.
    #[arg(long, value_name = "tmn|conll")]
    pub format: Option<String>,
    /// Repair illegal tags and tolerate missing sidecar entries.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// cwi, cwi-attn, msb-tiny or msb-small.
    #[arg(long, short)]
    pub model: Option<String>,
    /// Tagged training corpus.
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    /// Tagged development corpus, scored after every epoch.
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,
    /// Where to write the checkpoint.
    #[arg(long, short, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr", value_name = "RATE")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop once training-set span F1 reaches this value.
    #[arg(long, value_name = "F1")]
    pub stop_at_train_f1: Option<f64>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub resources: ResourceArgs,
    #[command(flatten)]
    pub model_args: ModelArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, short, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Tagged corpus to score.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Expected model kind; a different checkpoint is refused.
    #[arg(long, short)]
    pub model: Option<String>,
    /// Evaluate even when the requested settings differ from the checkpoint's.
    #[arg(long)]
    pub force: bool,
    /// Print key=value lines instead of the table.
    #[arg(long)]
    pub report_kv: bool,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub resources: ResourceArgs,
    #[command(flatten)]
    pub model_args: ModelArgs,
}

#[derive(Args, Debug)]
pub struct TagArgs {
    #[arg(long, short, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Sentences, one per line, optionally prefixed by `IMAGE_ID<TAB>`.
    /// Reads standard input when absent or `-`.
    #[arg(long, short, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Image-word sidecar TSV for the image ids in the input.
    #[arg(long, value_name = "FILE")]
    pub sidecar: Option<PathBuf>,
    #[command(flatten)]
    pub resources: ResourceArgs,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Random instances per gradient check.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Subword vocabulary for the round-trip check.
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    /// Negative control: corrupt one analytic gradient entry per check.
    #[arg(long, hide = true)]
    pub corrupt_gradients: bool,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_USAGE,
            error: error.into(),
        }
    }

    pub fn verification(message: String) -> Self {
        Failure {
            code: EXIT_VERIFY,
            error: anyhow::anyhow!(message),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let code = match e.root() {
            CoreError::Config(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure { code, error: e.into() }
    }
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
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
