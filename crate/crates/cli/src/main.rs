use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use pathosr_cli::commands::{self, CliResult, InferArgs};
use pathosr_cli::{MetricOptions, EXIT_SUCCESS, EXIT_USAGE};

/// ROI-aware adversarial super-resolution for microscopy images.
#[derive(Debug, Parser)]
#[command(name = "pathosr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic smear corpus and a toy config.
    Prepare {
        /// Output directory; defaults to $PATHOSR_CACHE/toy-seed<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Linear scale factor (2, 3, 4 or 8).
        #[arg(long)]
        scale: Option<u32>,
    },
    /// Train a model; writes checkpoints, the loss log and preview panels.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from the latest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scale: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Super-resolve every image in a directory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Expected linear scale; checked against the checkpoint.
        #[arg(long)]
        scale: Option<u32>,
        /// HR directory with matching file names; writes captioned panels.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, default_value_t = MetricOptions::default().tile)]
        tile: usize,
    },
    /// Score methods on the test split and write per-method reports.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated: nearest, bicubic, identity, ckpt:<path>.
        #[arg(long, default_value = "nearest,bicubic")]
        methods: String,
        #[arg(long)]
        scale: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge saved reports into one Markdown summary.
    Report {
        #[arg(long, required_unless_present = "out")]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a pristine NIQE model to a directory of natural images.
    NiqeFit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Prepare { out, seed, scale } => {
            let path = commands::prepare(out.as_deref(), seed, scale)?;
            println!("{}", path.display());
            Ok(commands::Outcome::Success)
        }
        Command::Train {
            config,
            resume,
            seed,
            scale,
            out,
        } => {
            let cfg = commands::load_config(&config, seed, scale, out.as_deref())?;
            commands::train(&cfg, resume)
        }
        Command::Infer {
            checkpoint,
            input,
            out,
            scale,
            compare,
            tile,
        } => commands::infer(&InferArgs {
            checkpoint: &checkpoint,
            input: &input,
            out: &out,
            scale,
            compare: compare.as_deref(),
            tile,
            overlap: MetricOptions::default().tile_overlap,
            niqe_model: None,
        }),
        Command::Evaluate {
            config,
            methods,
            scale,
            out,
        } => {
            let methods = commands::parse_methods(&methods)?;
            let cfg = commands::load_config(&config, None, scale, out.as_deref())?;
            commands::evaluate(&cfg, &methods)
        }
        Command::Report { config, out } => {
            let out = match (out, config) {
                (Some(out), _) => out,
                (None, Some(config)) => commands::load_config(&config, None, None, None)?.out_dir,
                (None, None) => unreachable!("clap requires one of --config/--out"),
            };
            commands::report(&out)
        }
        Command::NiqeFit { input, out } => commands::niqe_fit(&input, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_SUCCESS,
                _ => EXIT_USAGE,
            };
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
