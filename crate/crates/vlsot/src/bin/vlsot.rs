use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vlsot::cli;

#[derive(Parser)]
#[command(name = "vlsot", version, about = "Vision-language small-object tracking toolkit")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset.
    #[command(name = "gen-synthetic")]
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// generic | high-speed
        #[arg(long, default_value = "generic")]
        regime: String,
        #[arg(long)]
        sequences: usize,
        #[arg(long, default_value_t = 40)]
        frames: usize,
        /// WxH, e.g. 320x240
        #[arg(long = "frame-size")]
        frame_size: Option<String>,
        #[arg(long, default_value_t = 2)]
        distractors: usize,
        /// Schedule a mid-sequence occlusion window.
        #[arg(long, default_value_t = false)]
        occlusion: bool,
    },
    /// Train a tracker on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the tracker over every sequence of a dataset.
    Track {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Output directory for per-sequence prediction files.
        #[arg(long)]
        out: PathBuf,
        /// Replace the description with the all-padding token sequence.
        #[arg(long = "no-language", default_value_t = false)]
        no_language: bool,
    },
    /// Evaluate predictions against a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Output report path (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Also write mean success/precision curves as CSV files.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Print a report summary.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Include per-attribute slices.
        #[arg(long, default_value_t = false)]
        attributes: bool,
        /// csv | json
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Validate a dataset directory and print per-sequence statistics.
    Validate {
        #[arg(long)]
        data: PathBuf,
    },
}

fn run() -> vlsot::Result<()> {
    match Args::parse().command {
        Command::GenSynthetic {
            out,
            seed,
            regime,
            sequences,
            frames,
            frame_size,
            distractors,
            occlusion,
        } => {
            let size = frame_size
                .as_deref()
                .map(cli::parse_frame_size)
                .transpose()?;
            cli::cmd_gen_synthetic(
                &out,
                seed,
                &regime,
                sequences,
                frames,
                size,
                distractors,
                occlusion,
            )
        }
        Command::Train {
            data,
            config,
            out,
            seed,
        } => cli::cmd_train(&data, &config, &out, seed),
        Command::Track {
            data,
            ckpt,
            out,
            no_language,
        } => cli::cmd_track(&data, &ckpt, &out, no_language),
        Command::Eval {
            data,
            pred,
            out,
            curves,
        } => cli::cmd_eval(&data, &pred, &out, curves.as_deref()),
        Command::Report {
            input,
            attributes,
            format,
        } => {
            let text = cli::cmd_report(&input, attributes, &format)?;
            print!("{text}");
            Ok(())
        }
        Command::Validate { data } => {
            let text = cli::cmd_validate(&data)?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
