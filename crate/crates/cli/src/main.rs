//! `stdk`: station ingest, deep-kriging interpolation, quantile forecasting,
//! evaluation and rendering.

mod commands;
mod config;
mod error;
mod meta;
mod png;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Context, EvaluateArgs, RenderArgs};
use config::{LoadedConfig, Palette};
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "stdk", version, about = "Spatio-temporal deep kriging pipeline")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for artifacts; upstream artifacts are read from here too.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Smooth, standardize and split the station file.
    Ingest,
    /// Train the interpolation network and score held-out stations.
    TrainInterp,
    /// Write quantile fields on the configured grid.
    Interpolate,
    /// Train the forecaster on interpolated fields.
    TrainForecast,
    /// Forecast the held-out sequences.
    Forecast,
    /// Score a prediction stack against a truth stack.
    Evaluate {
        /// Defaults to the forecast targets in the output directory.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Defaults to the forecast stack in the output directory.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Score in millimetres using the ingest standardization.
        #[arg(long)]
        mm: bool,
    },
    /// Draw one frame (or a lower/median/upper triptych) as a PNG.
    Render {
        /// Defaults to the forecast stack in the output directory.
        #[arg(long)]
        stack: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        time: usize,
        /// Defaults to the median of a 3-channel stack.
        #[arg(long)]
        channel: Option<usize>,
        #[arg(long)]
        triptych: bool,
        #[arg(long, value_enum)]
        palette: Option<Palette>,
        /// Defaults to `render_t<time>.png` in the output directory.
        #[arg(long)]
        png: Option<PathBuf>,
    },
}

fn context(cli: &Cli) -> CliResult<Context> {
    let path = cli.config.as_ref().ok_or_else(commands::missing_config)?;
    Context::new(LoadedConfig::load(path, cli.seed)?, cli.out.clone())
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Ingest => commands::ingest(&context(&cli)?),
        Command::TrainInterp => commands::train_interp(&context(&cli)?),
        Command::Interpolate => commands::interpolate(&context(&cli)?),
        Command::TrainForecast => commands::train_forecast(&context(&cli)?),
        Command::Forecast => commands::forecast(&context(&cli)?),
        Command::Evaluate { truth, pred, mm } => {
            let args = EvaluateArgs {
                truth: truth.clone().unwrap_or_else(|| cli.out.join(commands::FORECAST_TRUTH_STACK)),
                pred: pred.clone().unwrap_or_else(|| cli.out.join(commands::FORECAST_STACK)),
                standardization: mm.then(|| cli.out.join(commands::STANDARDIZATION_FILE)),
                out: cli.out.clone(),
            };
            let report = commands::evaluate_stacks(&args)?;
            println!("{report}");
            Ok(())
        }
        Command::Render {
            stack,
            time,
            channel,
            triptych,
            palette,
            png,
        } => {
            let config_palette = match &cli.config {
                Some(p) => LoadedConfig::load(p, cli.seed)?.config.render.palette,
                None => Palette::default(),
            };
            let suffix = if *triptych { "_triptych" } else { "" };
            commands::render(&RenderArgs {
                stack: stack.clone().unwrap_or_else(|| cli.out.join(commands::FORECAST_STACK)),
                time: *time,
                channel: *channel,
                triptych: *triptych,
                palette: palette.unwrap_or(config_palette),
                png: png.clone().unwrap_or_else(|| cli.out.join(format!("render_t{time}{suffix}.png"))),
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stdk: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
