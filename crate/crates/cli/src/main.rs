//! `xling`: train embeddings, align them across languages, train and run a
//! BiLSTM-CRF tagger, and score its output.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigFile;
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "xling", version, about = "Cross-lingual named entity recognition")]
struct Cli {
    /// Seed for every stochastic step; overrides `seed` in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// `key = value` settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output on standard error (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train skip-gram word vectors on a whitespace-tokenized corpus.
    EmbedTrain(EmbedTrainArgs),
    /// Fit a map from target-language vectors into the source space.
    Align(AlignArgs),
    /// Train a tagger on a CoNLL-style corpus.
    Train(TrainArgs),
    /// Tag token-per-line text and print CoNLL-style output.
    Tag(TagArgs),
    /// Score predictions against gold tags, with reports and ROC plots.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct EmbedTrainArgs {
    /// One sentence per line, tokens separated by whitespace.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Vector file to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// N-gram vector file (default: <output>.ngrams, when subwords are on).
    #[arg(long)]
    pub ngrams_output: Option<PathBuf>,
    /// Per-epoch objective CSV (default: <output>.loss.csv).
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub noise_exponent: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Shortest character n-gram; 0 disables subwords.
    #[arg(long)]
    pub ngram_min: Option<usize>,
    #[arg(long)]
    pub ngram_max: Option<usize>,
    /// Wrap words in < and > before extracting n-grams.
    #[arg(long)]
    pub bracket_ngrams: bool,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Source-language vectors (the space the tagger was trained in).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target-language vectors.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// `target<TAB>source` word pairs.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// Separate pairs for precision@k; otherwise a held-out slice is used.
    #[arg(long)]
    pub test_dictionary: Option<PathBuf>,
    /// Fraction of the dictionary held out for precision@k when no test
    /// dictionary is given.
    #[arg(long)]
    pub held_out: Option<f64>,
    /// Map file to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Diagnostics file (default: <output>.diag.txt).
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// svd (orthogonal, exact) or sgd (unconstrained least squares).
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Replace an sgd map by its nearest orthogonal matrix.
    #[arg(long)]
    pub project: bool,
    /// Read only the first N vectors of each embedding file.
    #[arg(long)]
    pub max_vocab: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// CoNLL-style training corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// N-gram vectors for out-of-vocabulary words.
    #[arg(long)]
    pub ngrams: Option<PathBuf>,
    /// Map applied to the embeddings before training.
    #[arg(long)]
    pub align: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Entity types, e.g. PER,LOC,ORG,MISC (default: taken from the corpus).
    #[arg(long)]
    pub scheme: Option<String>,
    /// Continue training an existing model.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Loss trace CSV (default: <model>.loss.csv).
    #[arg(long)]
    pub loss_trace: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Keep corpus order instead of reshuffling every epoch.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Forbid invalid IOB transitions in the CRF.
    #[arg(long)]
    pub constrained: bool,
    #[arg(long)]
    pub max_vocab: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TagArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub ngrams: Option<PathBuf>,
    /// Map from the input language's vectors into the training space.
    #[arg(long)]
    pub align: Option<PathBuf>,
    /// One token per line, blank lines between sentences; `-` for stdin.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output file (default: standard output).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// CoNLL-style gold corpus.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// CoNLL-style predictions, aligned with the gold file.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Tag the gold tokens with this model instead of reading predictions;
    /// also enables ROC plots.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub ngrams: Option<PathBuf>,
    #[arg(long)]
    pub align: Option<PathBuf>,
    /// Directory for report and plot files.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// entity, token, or both.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let name = match &cli.command {
        Command::EmbedTrain(_) => "embed-train",
        Command::Align(_) => "align",
        Command::Train(_) => "train",
        Command::Tag(_) => "tag",
        Command::Eval(_) => "eval",
    };
    let settings = file.scoped(name);
    let seed = settings.get(cli.seed, "seed", 0u64)?;
    match &cli.command {
        Command::EmbedTrain(a) => commands::embed_train(a, &settings, seed),
        Command::Align(a) => commands::align(a, &settings, seed),
        Command::Train(a) => commands::train(a, &settings, seed),
        Command::Tag(a) => commands::tag(a, &settings),
        Command::Eval(a) => commands::eval(a, &settings),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("xling: {}", CliError::input(first).diagnostic());
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("xling: {}", e.diagnostic());
            ExitCode::from(e.kind.code())
        }
    }
}
