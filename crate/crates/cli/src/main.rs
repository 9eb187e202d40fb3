mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ted_core::featurizer::FeatureMode;
use ted_core::policy::EncoderKind;

#[derive(Parser)]
#[command(name = "ted", version, about = "Transformer embedding dialogue policy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct ModelFlags {
    /// key=value file with policy settings
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub encoder: Option<EncoderKind>,
    #[arg(long)]
    pub mode: Option<FeatureMode>,
    #[arg(long = "max-history")]
    pub max_history: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic digression corpus
    Generate {
        /// key=value file with generation settings
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy; writes the checkpoint, its vocabulary and loss history
    Train {
        corpus: PathBuf,
        #[command(flatten)]
        flags: ModelFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a corpus
    Eval {
        checkpoint: PathBuf,
        corpus: PathBuf,
        /// Prefix for <prefix>.json, <prefix>.txt and <prefix>.predictions.tsv
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learning curves of both encoders over training-set sizes and seeds
    Curve {
        corpus: PathBuf,
        #[command(flatten)]
        flags: ModelFlags,
        /// Comma-separated training sizes
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Comma-separated seeds
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long = "train-fraction", default_value_t = 0.75)]
        train_fraction: f64,
        #[arg(long = "split-seed", default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export attention matrices and heatmaps for one dialogue
    Attention {
        checkpoint: PathBuf,
        corpus: PathBuf,
        #[arg(long)]
        dialogue: String,
        /// Output prefix
        #[arg(long)]
        out: PathBuf,
    },
    /// Converse with a trained policy on standard input
    Repl { checkpoint: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Generate { config, seed, out } => commands::generate(config, seed, &out),
        Command::Train { corpus, flags, out } => commands::train(&corpus, &flags, &out),
        Command::Eval {
            checkpoint,
            corpus,
            out,
        } => commands::eval(&checkpoint, &corpus, out.as_deref()),
        Command::Curve {
            corpus,
            flags,
            sizes,
            seeds,
            train_fraction,
            split_seed,
            out,
        } => commands::curve(
            &corpus,
            &flags,
            sizes,
            seeds,
            train_fraction,
            split_seed,
            &out,
        ),
        Command::Attention {
            checkpoint,
            corpus,
            dialogue,
            out,
        } => commands::attention(&checkpoint, &corpus, &dialogue, &out),
        Command::Repl { checkpoint } => commands::repl(&checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
