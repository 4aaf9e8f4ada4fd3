use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deepcom::Error;

mod commands;

/// Read-attend-comment: latent salient spans and comment generation for
/// news articles.
#[derive(Debug, Parser)]
#[command(name = "deepcom", version)]
pub struct Cli {
    /// Worker threads for data-parallel work; results do not depend on it.
    /// Defaults to the config's `workers` (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// Config file plus `key=value` overrides. `DEEPCOM_SEED` overrides `seed`.
#[derive(Debug, Clone, clap::Args)]
pub struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set beam=1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Count tokens of the filtered corpus and write the vocabulary file.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the title-comment matching model.
    TrainMatcher {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write artificial span sets, one JSON line per article.
    MakeSpans {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        matcher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the matching model and run the supervised pretraining phase.
    Pretrain {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run (or resume) both training phases.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Extract spans and beam-decode a comment for every article.
    Generate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
        /// Beam width; defaults to the run's `beam`.
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Dump start probabilities and extracted spans per article.
    InspectSpans {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score generated comments against the reference corpus.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_article: bool,
    },
    /// Run the gradient, normalization, bound, estimator and beam oracles.
    Verify {
        #[arg(long)]
        seed: Option<u64>,
        /// Monte Carlo draws for the unbiasedness oracle.
        #[arg(long, default_value_t = 50_000)]
        draws: usize,
        /// Fewer seeds and draws.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Run directory: config echo, vocabulary, log and checkpoints.
    #[arg(long)]
    run: PathBuf,
    /// Existing vocabulary; built from the corpus otherwise.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Clone, clap::Args)]
pub struct ModelArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Checkpoint to load instead of the run's latest.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
}

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_CHECKPOINT: u8 = 4;
pub const EXIT_NUMERIC: u8 = 5;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } => EXIT_IO,
        Error::Config(_) => EXIT_CONFIG,
        Error::Checkpoint(_) => EXIT_CHECKPOINT,
        Error::NonFinite { .. } => EXIT_NUMERIC,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.workers {
        commands::init_workers(n);
    }
    match commands::run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
