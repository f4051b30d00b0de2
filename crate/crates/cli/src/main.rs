mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Hybrid convolution/attention road-surface classifier.
#[derive(Parser)]
#[command(name = "roadformer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the layout and parameter counts of a variant or stacking spec.
    Build(BuildArgs),
    /// Write a synthetic texture dataset in class-directory layout.
    Synth(SynthArgs),
    /// Train on a class-directory dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a class-directory dataset.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct BuildArgs {
    /// T, S, B, L or micro; also supplies the sizes for bare spec letters.
    #[arg(long)]
    pub variant: Option<String>,
    /// Stacking spec, e.g. "LMGG" or "L[c3] M[c3 t1] M[(c3 t2)x3] G[t3]".
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Comma-separated stage widths overriding the variant's.
    #[arg(long)]
    pub channels: Option<String>,
    #[arg(long, default_value_t = 27)]
    pub classes: usize,
    /// Emit the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSON object of dotted keys, e.g. {"train.epochs": 40}.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr_ref: Option<f64>,
    #[arg(long)]
    pub fbm_lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Any config key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Map fine class directory names to the five friction classes.
    #[arg(long)]
    pub simple: bool,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build(a) => commands::build(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
