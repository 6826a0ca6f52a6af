//! Command-line front end: synth, train, eval, forecast.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pdtrans::data::synthetic::{write_ground_truth, write_spec};
use pdtrans::data::{gen_synthetic, load_csv, CsvSchema, SyntheticSpec, TimeSeriesDataset};
use pdtrans::eval::{
    baseline_seasonal_naive, evaluate, rolling_forecast, write_decomposition_csv, write_forecast_csv,
    write_metrics_json, ForecastOptions, QuantileMethod,
};
use pdtrans::training::{fit, Checkpoint, TrainConfig};
use pdtrans::Error;

#[derive(Parser)]
#[command(
    name = "pdtrans",
    version,
    about = "Probabilistic decomposition Transformer forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trend + seasonal + noise dataset with its ground truth.
    Synth {
        /// JSON SyntheticSpec; defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write best.ckpt, last.ckpt and train_log.csv.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "data/synthetic.csv")]
        data: PathBuf,
        #[arg(long, default_value = "runs/default")]
        out: PathBuf,
    },
    /// Score a checkpoint on the held-out test windows and print metrics JSON.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        opts: InferArgs,
        /// Also score the seasonal-naive forecast with this period.
        #[arg(long)]
        baseline_period: Option<usize>,
    },
    /// Write forecast.csv, decomposition.csv and metrics.json for the test windows.
    Forecast {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: InferArgs,
    },
}

#[derive(clap::Args)]
struct InferArgs {
    /// Sample paths per window (defaults to the checkpoint config).
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    n_latent: Option<usize>,
    #[arg(long, value_enum, default_value_t = Method::Empirical)]
    quantiles: Method,
    /// Windows per series (defaults to the configured test windows).
    #[arg(long)]
    windows: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Empirical,
    Analytic,
}

/// An error plus the file it concerns, if any.
struct Failure {
    error: Error,
    path: Option<PathBuf>,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let path = match &error {
            Error::Io { path, .. } => Some(path.clone()),
            _ => None,
        };
        Failure { error, path }
    }
}

trait Context<T> {
    fn at(self, path: &Path) -> Result<T, Failure>;
}

impl<T> Context<T> for Result<T, Error> {
    fn at(self, path: &Path) -> Result<T, Failure> {
        self.map_err(|error| {
            let mut f = Failure::from(error);
            f.path.get_or_insert_with(|| path.to_path_buf());
            f
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let line = serde_json::json!({
                "error": f.error.kind(),
                "path": f.path.map(|p| p.display().to_string()),
                "message": f.error.to_string(),
            });
            eprintln!("{line}");
            ExitCode::from(1)
        }
    }
}

fn load_data(path: &Path) -> Result<TimeSeriesDataset, Failure> {
    load_csv(path, &CsvSchema::default()).at(path)
}

fn options(config: &TrainConfig, args: &InferArgs) -> ForecastOptions {
    ForecastOptions {
        n_samples: args.n_samples.unwrap_or(config.n_samples_infer),
        n_latent: args.n_latent.unwrap_or(config.n_latent_infer),
        method: match args.quantiles {
            Method::Empirical => QuantileMethod::Empirical,
            Method::Analytic => QuantileMethod::Analytic,
        },
        max_windows: Some(args.windows.unwrap_or(config.test_windows)),
        holdout: 0,
        seed: args.seed.unwrap_or(config.seed),
        chunk: 16,
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth { spec, out, seed } => {
            let mut spec = match &spec {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    serde_json::from_str::<SyntheticSpec>(&text)
                        .map_err(Error::from)
                        .at(path)?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let (dataset, truth) = gen_synthetic(&spec)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let data = out.join("synthetic.csv");
            dataset.write_csv(&data)?;
            write_ground_truth(&out.join("ground_truth.csv"), &dataset, &truth)?;
            write_spec(&out.join("spec.json"), &spec)?;
            print_json(&serde_json::json!({ "data": data, "n_series": dataset.n_series(), "length": spec.length }));
        }
        Command::Train { config, data, out } => {
            let config = match &config {
                Some(path) => TrainConfig::load(path).at(path)?,
                None => TrainConfig::default(),
            };
            let dataset = load_data(&data)?;
            let report = fit(&config, &dataset, &out).at(&out)?;
            print_json(&serde_json::json!({
                "best_checkpoint": report.best_checkpoint,
                "last_checkpoint": report.last_checkpoint,
                "train_log": report.log,
                "epochs": report.epochs,
                "steps": report.steps,
                "best_val_rho_0.5": report.best_val,
                "stopped_early": report.stopped_early,
            }));
        }
        Command::Eval {
            ckpt,
            data,
            opts,
            baseline_period,
        } => {
            let checkpoint = Checkpoint::load(&ckpt).at(&ckpt)?;
            let model = checkpoint.model::<f32>().at(&ckpt)?;
            let dataset = load_data(&data)?;
            let options = options(&checkpoint.config, &opts);
            let result = rolling_forecast(&model, &dataset, &options).at(&data)?;
            let metrics = evaluate(&result)?.rounded();
            let mut json = serde_json::to_value(metrics).map_err(Error::from)?;
            if let Some(period) = baseline_period {
                let cfg = &checkpoint.config.model;
                let base =
                    baseline_seasonal_naive(&dataset, cfg.t0, cfg.tau, period, options.max_windows, 0).at(&data)?;
                json["baseline_rho_0.5"] = serde_json::json!(evaluate(&base)?.rounded().rho_50);
            }
            print_json(&json);
        }
        Command::Forecast { ckpt, data, out, opts } => {
            let checkpoint = Checkpoint::load(&ckpt).at(&ckpt)?;
            let model = checkpoint.model::<f32>().at(&ckpt)?;
            let dataset = load_data(&data)?;
            let result = rolling_forecast(&model, &dataset, &options(&checkpoint.config, &opts)).at(&data)?;
            let metrics = evaluate(&result)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_forecast_csv(&out.join("forecast.csv"), &result)?;
            write_decomposition_csv(&out.join("decomposition.csv"), &result)?;
            write_metrics_json(&out.join("metrics.json"), &metrics)?;
            print_json(&serde_json::to_value(metrics.rounded()).map_err(Error::from)?);
        }
    }
    Ok(())
}
