//! Thin binary over [`edit_vit::cli`]: argument parsing and exit-code
//! mapping only; all behavior lives in the library.

use clap::{Parser, Subcommand};
use edit_vit::cli::{
    cmd_attn_export, cmd_compare, cmd_eval, cmd_flops, cmd_params, cmd_sink_stats, cmd_train,
    CliOverrides, RunConfig,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "edit-vit",
    version,
    about = "Encoder-decoder image transformer: training, evaluation, attention export, \
             sink statistics, and parameter/MAC accounting"
)]
struct Args {
    /// Plain-text configuration file of `key = value` lines (# comments).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for generated files.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Model size preset: tiny, small, or base.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,

    /// Use the class-token baseline architecture instead of EDIT.
    #[arg(long, global = true)]
    baseline: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured dataset; writes metrics.csv and model.edt.
    Train,
    /// Report a checkpoint's top-1 accuracy on the validation split.
    Eval {
        /// Checkpoint path (alternative to the 'checkpoint' config key).
        checkpoint: Option<PathBuf>,
    },
    /// Export one class-attention grid per layer for an input image.
    AttnExport {
        /// Checkpoint path (alternative to the 'checkpoint' config key).
        checkpoint: Option<PathBuf>,
        /// Input image, binary PGM or PPM (alternative to the 'image' key).
        image: Option<PathBuf>,
    },
    /// Per-layer class-column attention share of a baseline checkpoint.
    SinkStats {
        /// Checkpoint path (alternative to the 'checkpoint' config key).
        checkpoint: Option<PathBuf>,
    },
    /// Closed-form parameter counts for the configured model.
    Params,
    /// Closed-form multiply-accumulate counts for one forward pass.
    Flops,
    /// EDIT versus baseline parameter/MAC totals for a preset.
    Compare,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut overrides = CliOverrides {
        config: args.config,
        seed: args.seed,
        out: args.out,
        preset: args.preset,
        baseline: args.baseline,
        checkpoint: None,
        image: None,
    };
    let command = args.command;
    match &command {
        Command::Eval { checkpoint } | Command::SinkStats { checkpoint } => {
            overrides.checkpoint = checkpoint.clone();
        }
        Command::AttnExport { checkpoint, image } => {
            overrides.checkpoint = checkpoint.clone();
            overrides.image = image.clone();
        }
        _ => {}
    }
    let result = RunConfig::resolve(&overrides).and_then(|config| match command {
        Command::Train => cmd_train(&config),
        Command::Eval { .. } => cmd_eval(&config),
        Command::AttnExport { .. } => cmd_attn_export(&config),
        Command::SinkStats { .. } => cmd_sink_stats(&config),
        Command::Params => cmd_params(&config),
        Command::Flops => cmd_flops(&config),
        Command::Compare => cmd_compare(&config),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
