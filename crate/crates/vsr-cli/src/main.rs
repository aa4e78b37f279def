use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vsr_cli::{commands, exit_code};

/// Audio-visual speech recognition pipeline: synthetic corpora, hybrid
/// CTC/attention training with auxiliary teachers, beam-search decoding,
/// scoring, and ablation studies.
///
/// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
/// error.
#[derive(Parser)]
#[command(name = "vsr", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Configuration file plus inline overrides, shared by every command that
/// builds an experiment.
#[derive(Args)]
struct ConfArgs {
    /// INI-style configuration file ([section] key = value)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one value, e.g. --set optim.peak_lr=0.002 (repeatable)
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic audio-visual corpus ([corpus] section)
    GenerateData {
        /// Directory to write the corpus into
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        conf: ConfArgs,
    },
    /// Train the frozen acoustic and visual teachers for auxiliary losses
    TrainTeachers {
        /// Corpus directory (from generate-data)
        #[arg(long)]
        corpus: PathBuf,
        /// Directory for teacher.asr.ckpt and teacher.vsr.ckpt
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        conf: ConfArgs,
    },
    /// Train a recognizer; writes per-epoch checkpoints, their average,
    /// the step log, and optionally a language model
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Teacher directory (required when auxiliary losses are enabled)
        #[arg(long)]
        teachers: Option<PathBuf>,
        #[command(flatten)]
        conf: ConfArgs,
    },
    /// Beam-search decode a split with one checkpoint or the average of several
    Decode {
        #[arg(long)]
        corpus: PathBuf,
        /// train, dev or test
        #[arg(long, default_value = "dev")]
        split: String,
        /// Checkpoint file; repeat to decode with the averaged weights
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Output transcript file (tab-separated)
        #[arg(long)]
        out: PathBuf,
        /// Language-model checkpoint for shallow fusion
        #[arg(long)]
        lm: Option<PathBuf>,
        #[command(flatten)]
        conf: ConfArgs,
    },
    /// Score decoded transcripts against a split's references
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "dev")]
        split: String,
        /// Transcript file written by decode
        #[arg(long)]
        decodes: PathBuf,
        /// Also write the metrics to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average checkpoints from one run into a single checkpoint
    AverageCheckpoints {
        /// Output checkpoint
        #[arg(long)]
        out: PathBuf,
        /// Input checkpoints (at least two)
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Run the six-configuration ablation grid over several seeds
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        /// Directory for ablation.csv and ablation.txt
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds, e.g. 1,2,3,4,5 (at least two)
        #[arg(long)]
        seeds: String,
        #[command(flatten)]
        conf: ConfArgs,
    },
    /// Render the Mean±Std / Best table from an ablation CSV
    Report {
        /// ablation.csv from a previous run
        #[arg(long)]
        csv: PathBuf,
        /// Also write the table to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> vsr_core::Result<()> {
    match cli.cmd {
        Cmd::GenerateData { out, conf } => {
            commands::generate_data(&out, conf.config.as_deref(), &conf.sets)
        }
        Cmd::TrainTeachers { corpus, out, conf } => {
            commands::train_teachers(&corpus, &out, conf.config.as_deref(), &conf.sets)
        }
        Cmd::Train { corpus, out, teachers, conf } => commands::train(
            &corpus,
            &out,
            teachers.as_deref(),
            conf.config.as_deref(),
            &conf.sets,
        ),
        Cmd::Decode { corpus, split, checkpoints, out, lm, conf } => commands::decode(
            &corpus,
            &split,
            &checkpoints,
            &out,
            lm.as_deref(),
            conf.config.as_deref(),
            &conf.sets,
        ),
        Cmd::Evaluate { corpus, split, decodes, out } => {
            commands::evaluate(&corpus, &split, &decodes, out.as_deref())
        }
        Cmd::AverageCheckpoints { out, inputs } => commands::average(&inputs, &out),
        Cmd::Ablate { corpus, out, seeds, conf } => {
            commands::ablate(&corpus, &out, &seeds, conf.config.as_deref(), &conf.sets)
        }
        Cmd::Report { csv, out } => commands::render_report(&csv, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
