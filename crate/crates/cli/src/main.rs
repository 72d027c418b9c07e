use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use pfl_core::aggregation::{empirical_kappa, AggregatorSpec};
use pfl_core::harness::{
    emit_outputs, load_config, parse_vary_values, predict_class, predict_mean, run_scenario_with_workers,
    summarize, Experiment, ScenarioConfig, TEST_ACCURACY,
};
use pfl_core::{Error, RngStream};

#[derive(Parser)]
#[command(name = "pfl", version, about = "Byzantine-robust personalized federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo error of the interpolated mean estimator over a λ grid.
    MeanEst(RunArgs),
    /// Personalized logistic regression over a λ grid.
    Classify(RunArgs),
    /// Empirical robustness coefficient of an aggregator.
    Kappa(KappaArgs),
    /// Print the predicted collaboration level and its plug-in constants.
    Predict {
        #[arg(value_enum)]
        which: Predictor,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a scenario over a grid of overrides.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// `key=v1,v2,...`; may be repeated.
        #[arg(long, required = true)]
        vary: Vec<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; defaults to the config's `output_dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct KappaArgs {
    #[arg(long = "agg")]
    aggregator: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    f: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 1.0)]
    magnitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Predictor {
    LambdaMean,
    LambdaClass,
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e),
            other => Failure::Runtime(other),
        }
    }
}

fn config_failure(e: Error) -> Failure {
    Failure::Config(e)
}

fn number(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(if x > 0.0 { "inf" } else if x < 0.0 { "-inf" } else { "nan" })
    }
}

fn load(path: &Path, expect: Option<Experiment>) -> Result<ScenarioConfig, Failure> {
    let cfg = load_config(path).map_err(config_failure)?;
    if let Some(want) = expect {
        if cfg.experiment != want {
            return Err(Failure::Config(Error::Config {
                path: "experiment".into(),
                message: format!("this subcommand runs `{want}` scenarios, the file describes `{}`", cfg.experiment),
            }));
        }
    }
    Ok(cfg)
}

fn run(cfg: &ScenarioConfig, args: &RunArgs) -> Result<(), Failure> {
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let rows = run_scenario_with_workers(cfg, args.seed, workers)?;
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let files = emit_outputs(&rows, cfg, args.seed, &dir)?;
    let best: Vec<Value> = {
        let points = summarize(&rows);
        let mut by_series: Vec<(String, String, f64, f64)> = Vec::new();
        for p in points.iter().filter(|p| p.mean.is_finite()) {
            let better = |cur: f64| {
                if p.metric == TEST_ACCURACY {
                    p.mean > cur
                } else {
                    p.mean < cur
                }
            };
            match by_series.iter_mut().find(|s| s.0 == p.run_id && s.1 == p.metric) {
                Some(s) if better(s.3) => {
                    s.2 = p.lambda;
                    s.3 = p.mean;
                }
                Some(_) => {}
                None => by_series.push((p.run_id.clone(), p.metric.clone(), p.lambda, p.mean)),
            }
        }
        by_series
            .into_iter()
            .map(|(run, metric, lambda, mean)| json!({"run_id": run, "metric": metric, "best_lambda": lambda, "mean": number(mean)}))
            .collect()
    };
    let report = json!({
        "rows": rows.len(),
        "output_dir": dir.display().to_string(),
        "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "best": best,
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("report is valid JSON"));
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::MeanEst(args) => run(&load(&args.config, Some(Experiment::MeanEst))?, &args),
        Command::Classify(args) => run(&load(&args.config, Some(Experiment::Classify))?, &args),
        Command::Sweep { run: args, vary } => {
            let mut cfg = load(&args.config, None)?;
            for item in &vary {
                let (key, values) = item.split_once('=').ok_or_else(|| {
                    Failure::Config(Error::Config {
                        path: "--vary".into(),
                        message: format!("expected key=v1,v2,..., got `{item}`"),
                    })
                })?;
                cfg = cfg
                    .with_vary(key.trim(), parse_vary_values(values))
                    .map_err(config_failure)?;
            }
            run(&cfg, &args)
        }
        Command::Kappa(k) => {
            let spec: AggregatorSpec = k.aggregator.parse().map_err(config_failure)?;
            let est = empirical_kappa(&spec.with_f(k.f), k.n, k.f, k.d, k.trials, k.magnitude, &RngStream::new(k.seed))
                .map_err(|e| match e {
                    Error::InvalidParameter { .. } => Failure::Config(e),
                    other => other.into(),
                })?;
            let out = json!({
                "aggregator": spec.with_f(k.f).name(),
                "n": est.n,
                "f": est.f,
                "d": est.d,
                "trials": est.trials,
                "magnitude": number(k.magnitude),
                "seed": k.seed,
                "empirical_kappa": number(est.empirical_kappa),
                "theoretical_kappa": number(est.theoretical_kappa),
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("valid JSON"));
            Ok(())
        }
        Command::Predict { which, config, seed } => {
            let out = match which {
                Predictor::LambdaMean => {
                    let cfg = load(&config, Some(Experiment::MeanEst))?;
                    serde_json::to_value(predict_mean(&cfg)?).expect("valid JSON")
                }
                Predictor::LambdaClass => {
                    let cfg = load(&config, Some(Experiment::Classify))?;
                    let mut v = serde_json::to_value(predict_class(&cfg, seed)?).expect("valid JSON");
                    v["seed"] = json!(seed);
                    v
                }
            };
            println!("{}", serde_json::to_string_pretty(&out).expect("valid JSON"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("pfl: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("pfl: {e}");
            ExitCode::from(1)
        }
    }
}
