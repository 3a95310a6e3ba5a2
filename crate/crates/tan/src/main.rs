use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tan::cli::{
    cmd_attention, cmd_eval, cmd_gradcheck, cmd_predict, cmd_synth, cmd_train, DataFormat,
    EvalArgs, GradcheckArgs, Overrides, PredictArgs, Render,
};
use tan::model::Variant;

#[derive(Parser)]
#[command(name = "tan", version, about = "Topic-attention network for aspect category detection")]
struct Cli {
    /// Suppress progress output (machine-readable output still prints).
    #[arg(long, global = true)]
    quiet: bool,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run configuration JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model: corpus pipeline, fit, checkpoint, and metrics.
    Train {
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Use the candidate-state formula exactly as printed.
        #[arg(long)]
        literal_eq3: bool,
    },
    /// Score a checkpoint on a dataset and print metrics JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        format: DataFormat,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Predict the argmax category when nothing clears the threshold.
        #[arg(long)]
        argmax_fallback: bool,
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Categorize a single sentence.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Export per-topic attention weights for a sentence.
    Attention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "term")]
        render: Render,
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Compare reverse-mode gradients against finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value = "tan")]
        variant: Variant,
        #[arg(long)]
        literal_eq3: bool,
        /// Negative control: corrupt one gradient and expect failure.
        #[arg(long)]
        corrupt_gradient: bool,
    },
    /// Generate the bundled synthetic corpus and its training config.
    Synth,
}

fn run(cli: Cli) -> Result<(), tan::cli::CliError> {
    match cli.command {
        Command::Train {
            variant,
            max_epochs,
            threshold,
            literal_eq3,
        } => {
            let config = cli.config.ok_or_else(|| {
                tan::cli::CliError::Config("train requires --config <file>".into())
            })?;
            let overrides = Overrides {
                seed: cli.seed,
                out_dir: cli.out_dir,
                variant,
                max_epochs,
                threshold,
                literal_eq3,
            };
            cmd_train(&config, &overrides, cli.quiet)
        }
        Command::Eval {
            checkpoint,
            data,
            format,
            threshold,
            out,
            argmax_fallback,
            stopwords,
        } => cmd_eval(
            &EvalArgs {
                checkpoint,
                data,
                format,
                threshold,
                out,
                argmax_fallback,
                stopwords,
            },
            cli.quiet,
        ),
        Command::Predict {
            checkpoint,
            text,
            threshold,
            stopwords,
        } => cmd_predict(&PredictArgs {
            checkpoint,
            text,
            threshold,
            stopwords,
        }),
        Command::Attention {
            checkpoint,
            text,
            out,
            render,
            stopwords,
        } => cmd_attention(&checkpoint, &text, out.as_deref(), render, stopwords.as_ref()),
        Command::Gradcheck {
            variant,
            literal_eq3,
            corrupt_gradient,
        } => cmd_gradcheck(
            &GradcheckArgs {
                variant,
                seed: cli.seed.unwrap_or(42),
                literal_eq3,
                corrupt_gradient,
            },
            cli.quiet,
        ),
        Command::Synth => {
            let out_dir = cli.out_dir.unwrap_or_else(|| PathBuf::from("synthetic"));
            cmd_synth(&out_dir, cli.seed.unwrap_or(42), cli.quiet)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
