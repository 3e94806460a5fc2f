//! Command-line pipeline: corpus preparation, data synthesis, training,
//! correction, evaluation and analysis reports.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod manifest;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{Ctx, Predictions, SynthMode};
use config::PipelineConfig;
use error::{CliError, CliResult, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "postocr", version, about = "Post-OCR correction pipeline")]
pub struct Cli {
    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overrides the configured work directory.
    #[arg(long, global = true)]
    pub work_dir: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalise a corpus and split it into training and development sets.
    Prepare {
        /// Gold lines, or `ocr<TAB>gold` pairs.
        #[arg(long)]
        input: PathBuf,
    },
    /// Learn the BPE vocabulary from gold training text.
    LearnBpe {
        /// Gold lines; defaults to the prepared training split.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Turn gold text into (ocr, gold) pairs.
    Synth {
        #[arg(long, value_enum, default_value = "channel")]
        mode: SynthMode,
        /// Gold lines; defaults to the prepared train and dev splits.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Pairs file to write with `--input`; defaults to `synth.tsv`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Keep the distorted line images (image mode).
        #[arg(long)]
        save_images: bool,
    },
    /// Rank distortion settings against a target OCR accuracy distribution.
    SelectConfigs {
        /// Gold lines to render; defaults to the training split.
        #[arg(long)]
        sample: Option<PathBuf>,
        /// `ocr<TAB>gold` pairs from a real OCR run; defaults to the
        /// undistorted sample.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Train the corrector.
    Train {
        /// `ocr<TAB>gold` training pairs; defaults to `train.tsv`.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Development pairs scored after every epoch; defaults to `dev.tsv`.
        #[arg(long)]
        dev: Option<PathBuf>,
    },
    /// Correct lines with a trained model.
    Correct {
        /// Lines to correct, or a `.tsv` whose first column is used.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to `reports/corrected.txt`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Model to load; defaults to `checkpoints/model.pocf`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score predictions against gold: CRR, WRR, NormLP and length buckets.
    Evaluate {
        /// `ocr<TAB>gold` pairs; defaults to the dev split.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Precomputed predictions, one per pair.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// What to score when no prediction file is given.
        #[arg(long, value_enum, default_value = "model")]
        source: Predictions,
        /// Model to load; defaults to `checkpoints/model.pocf`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Per-line insertion, deletion and substitution counts and the
    /// confusion matrix.
    AlignErrors {
        /// `ocr<TAB>gold` pairs.
        #[arg(long)]
        input: PathBuf,
        /// Hypotheses to align instead of the OCR column.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Grapheme units, raw characters, or both.
        #[arg(long, value_enum, default_value = "grapheme")]
        units: commands::Units,
    },
    /// Confusion, error-type and copy/generate reports for the dev split.
    Analyze {
        /// `ocr<TAB>gold` pairs; defaults to the dev split.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Model to load; defaults to `checkpoints/model.pocf`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also render heatmaps as SVG.
        #[arg(long)]
        svg: bool,
    },
}

fn load_config(cli: &Cli) -> CliResult<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) if !p.exists() => return Err(CliError::Usage(format!("config file {} not found", p.display()))),
        Some(p) => PipelineConfig::load(p).map_err(|e| CliError::Usage(format!("{e:#}")))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = &cli.work_dir {
        cfg.paths.work_dir = w.clone();
    }
    if let Some(j) = cli.jobs {
        cfg.ocr.jobs = j.max(1);
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    if let Some(j) = cli.jobs {
        // Fails harmlessly when a pool already exists (repeated calls in tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    let ctx = Ctx::new(cfg)?;
    match &cli.command {
        Command::Prepare { input } => {
            if !input.exists() {
                return Err(CliError::Data(anyhow::anyhow!("{} does not exist", input.display())));
            }
            commands::prepare(&ctx, input)
        }
        Command::LearnBpe { input } => commands::learn_bpe(&ctx, input.as_deref()),
        Command::Synth {
            mode,
            input,
            output,
            save_images,
        } => commands::synth(&ctx, *mode, input.as_deref(), output.as_deref(), *save_images),
        Command::SelectConfigs { sample, target } => commands::select(&ctx, sample.as_deref(), target.as_deref()),
        Command::Train { train, dev } => commands::train_stage(&ctx, train.as_deref(), dev.as_deref()),
        Command::Correct {
            input,
            output,
            checkpoint,
        } => commands::correct(&ctx, input.as_deref(), output.as_deref(), checkpoint.as_deref()),
        Command::Evaluate {
            input,
            predictions,
            source,
            checkpoint,
        } => commands::evaluate_stage(&ctx, input.as_deref(), predictions.as_deref(), *source, checkpoint.as_deref()),
        Command::AlignErrors { input, predictions, units } => {
            commands::align_errors(&ctx, input, predictions.as_deref(), *units)
        }
        Command::Analyze { input, checkpoint, svg } => {
            commands::analyze(&ctx, input.as_deref(), checkpoint.as_deref(), *svg)
        }
    }
}

/// Parses `args`, runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
