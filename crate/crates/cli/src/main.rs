mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lrtd_core::selector::Strategy;
use lrtd_core::Error;

use commands::{Context, ScoreArgs};

#[derive(Parser)]
#[command(
    name = "lrtd",
    version,
    about = "Dependency-scored active learning for phase recognition"
)]
struct Cli {
    /// Experiment manifest (JSON).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output directory; overrides the manifest's `out`.
    #[arg(long, global = true, env = "LRTD_OUT")]
    out: Option<PathBuf>,
    /// Base seed; overrides the manifest's `seed`.
    #[arg(long, global = true, env = "LRTD_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into --out.
    Gen {
        /// Synthetic spec (JSON); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Run one active-learning experiment.
    Al,
    /// Run every manifest strategy from the same seed and compare them.
    Compare,
    /// Compute metrics.json from a predictions TSV.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Score the unlabeled train clips with a checkpoint.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides the manifest's selection strategy.
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Round index keying the random streams and the batch size.
        #[arg(long, default_value_t = 0)]
        round: usize,
        /// Clip lists (`clip_id` header) making up the labeled set.
        #[arg(long)]
        labeled: Vec<PathBuf>,
    },
    /// Write dependency matrices of clips as TSV.
    ExportDepmatrix {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video: Vec<String>,
        /// Clip ids as `video:end`.
        #[arg(long)]
        clip: Vec<String>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        e if e.is_validation() => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    let ctx = Context {
        manifest: cli.manifest,
        out: cli.out,
        seed: cli.seed,
    };
    let result = match &cli.command {
        Command::Gen { spec } => commands::gen(&ctx, spec.as_deref()),
        Command::Al => commands::al(&ctx),
        Command::Compare => commands::compare(&ctx),
        Command::Eval { predictions } => commands::eval(&ctx, predictions),
        Command::Score {
            checkpoint,
            strategy,
            round,
            labeled,
        } => commands::score(
            &ctx,
            &ScoreArgs {
                checkpoint,
                strategy: *strategy,
                round: *round,
                labeled,
            },
        ),
        Command::ExportDepmatrix {
            checkpoint,
            video,
            clip,
        } => commands::export_depmatrix(&ctx, checkpoint, video, clip),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
