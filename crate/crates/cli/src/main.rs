//! `tequila`: quantize, train, compare, sweep, pack, infer and bench.
//!
//! Exit codes: 0 success, 1 other errors, 2 usage or configuration errors,
//! 3 malformed input files, 4 shape mismatches, 5 training divergence,
//! 6 failed `--verify`, 7 unsupported scheme.

mod commands;
mod config;
mod matrix_io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use tequila_core::experiment::DEFAULT_LAMBDA_GRID;
use tequila_core::{Error, Scheme, TrainConfig};

use commands::{Diverged, VerifyFailed};
use config::{ConfigError, ConfigIssue};

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_FORMAT: u8 = 3;
pub const EXIT_SHAPE: u8 = 4;
pub const EXIT_DIVERGED: u8 = 5;
pub const EXIT_VERIFY: u8 = 6;
pub const EXIT_SCHEME: u8 = 7;

#[derive(Parser, Debug)]
#[command(name = "tequila", version, about = "Ternary quantization with deadzone reactivation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON or TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    scheme: Option<String>,
    /// per-tensor, per-channel or per-group.
    #[arg(long)]
    granularity: Option<String>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// `key=value` config overrides, applied last.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<TrainConfig, ConfigIssue> {
        let mut flags: Vec<(&str, Value)> = Vec::new();
        if let Some(v) = self.seed {
            flags.push(("seed", v.into()));
        }
        if let Some(v) = &self.scheme {
            flags.push(("scheme", v.as_str().into()));
        }
        if let Some(v) = &self.granularity {
            flags.push(("granularity", v.as_str().into()));
        }
        if let Some(v) = self.group_size {
            flags.push(("group_size", v.into()));
        }
        if let Some(v) = self.lambda {
            flags.push(("lambda", v.into()));
        }
        if let Some(v) = self.epsilon {
            flags.push(("epsilon", v.into()));
        }
        if let Some(v) = self.steps {
            flags.push(("steps", v.into()));
        }
        config::resolve(self.config.as_deref(), flags, &self.overrides)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ternarize a weight matrix (CSV, or `.bin` with a 16-byte shape header).
    Quantize {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the toy model and write the report, trap diagnostics and checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train several schemes over several seeds.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "absmean,minima,tequila-no-mixed,tequila")]
        schemes: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train the deadzone-bias scheme over a grid of reactivation strengths.
    LambdaSweep {
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Pack a training checkpoint into a `.tqla` file.
    Pack {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the lookup-table kernel over each input row.
    Infer {
        /// Packed `.tqla` model.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Run a single layer instead of the whole stack.
        #[arg(long)]
        layer: Option<usize>,
        /// Check against the 64-bit reference product.
        #[arg(long)]
        verify: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Compare lookup-table and dense GEMV.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "256x256,512x1024,1024x4096")]
        shapes: Vec<String>,
        #[arg(long, default_value_t = 20)]
        repetitions: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Quantize { input, common } => commands::quantize_cmd(&input, common.resolve()?, &common.out),
        Command::Train { common } => commands::train_cmd(common.resolve()?, &common.out),
        Command::Compare {
            schemes,
            seeds,
            threads,
            common,
        } => {
            let schemes = schemes.iter().map(|s| s.parse()).collect::<Result<Vec<Scheme>, Error>>()?;
            commands::compare_cmd(common.resolve()?, &schemes, &seeds, threads, &common.out)
        }
        Command::LambdaSweep {
            lambdas,
            seeds,
            threads,
            common,
        } => {
            let lambdas = lambdas.unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec());
            commands::lambda_sweep_cmd(common.resolve()?, &lambdas, &seeds, threads, &common.out)
        }
        Command::Pack { model, common } => {
            let path = commands::pack_cmd(&model, common.resolve()?, &common.out)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Infer {
            model,
            input,
            layer,
            verify,
            common,
        } => commands::infer_cmd(&model, &input, layer, verify, common.resolve()?, &common.out),
        Command::Bench {
            shapes,
            repetitions,
            common,
        } => {
            let shapes = shapes
                .iter()
                .map(|s| commands::parse_shape(s))
                .collect::<anyhow::Result<Vec<_>>>()
                .map_err(|e| ConfigError(e.to_string()))?;
            commands::bench_cmd(&shapes, repetitions, common.resolve()?, &common.out)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Diverged>() {
            return EXIT_DIVERGED;
        }
        if cause.is::<VerifyFailed>() {
            return EXIT_VERIFY;
        }
        if cause.is::<ConfigError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Format { .. } => EXIT_FORMAT,
                Error::InvalidShape(_) => EXIT_SHAPE,
                Error::UnsupportedScheme(_) => EXIT_SCHEME,
                _ => EXIT_OTHER,
            };
        }
    }
    EXIT_OTHER
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
