//! Command-line front end: ingest mortality files, synthesize surfaces, fit
//! and apply forecasting models, tune hyperparameters, and run the full
//! benchmark protocol.
//!
//! Exit codes: 0 success, 1 runtime failure (benchmark reports with failure
//! cells are still written), 2 configuration or input errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mortcast::arima::{self, ArimaOrder};
use mortcast::demographic::{self, Sex, SurfaceParams};
use mortcast::evaluation::{self, BenchmarkConfig};
use mortcast::hpo::{self, SearchSpace};
use mortcast::hybrid::{self, HybridModel, LinearSpec};
use mortcast::neural::{Activation, Family, NetworkSpec};
use mortcast::record::Record;
use mortcast::strategy::{self, StrategyMode, StrategyModel};
use mortcast::timeseries::TimeSeries;
use mortcast::ArimaModel;

#[derive(Parser, Debug)]
#[command(
    name = "mortcast",
    about = "Hybrid ARIMA + neural multi-step forecasting for short mortality series"
)]
struct Cli {
    /// Master seed; every random quantity in a run derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for grid evaluation (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse an HMD Mx_1x1-style file and store the normalized surface.
    Ingest(IngestArgs),
    /// Generate a synthetic Lee-Carter mortality surface.
    Synth(SynthArgs),
    /// Fit a model on a series CSV and store the trained model.
    Fit(FitArgs),
    /// Forecast from a stored model file.
    Forecast(ForecastArgs),
    /// Tune network hyperparameters on a train/validation split.
    Hpo(HpoArgs),
    /// Run the three-stage benchmark described by a TOML config.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug, Serialize)]
struct IngestArgs {
    /// HMD-format input file.
    path: PathBuf,
    /// Drop years before this one.
    #[arg(long)]
    min_year: Option<i32>,
    /// Also extract this age's log-rate series to series.csv.
    #[arg(long)]
    age: Option<usize>,
    /// Sex used for series extraction: female, male, total.
    #[arg(long, default_value = "total")]
    sex: String,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    /// Number of years to generate.
    #[arg(long, default_value_t = 40)]
    years: usize,
    /// Noise standard deviation on the log scale.
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Also extract this age's log-rate series to series.csv.
    #[arg(long)]
    age: Option<usize>,
    /// Sex used for series extraction: female, male, total.
    #[arg(long, default_value = "total")]
    sex: String,
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    /// Input series CSV (index,value).
    #[arg(long)]
    input: PathBuf,
    /// Model: arima, mlp, lstm, nbeats, hybrid-mlp, hybrid-lstm, hybrid-nbeats.
    #[arg(long)]
    model: String,
    /// Strategy for network models: recursive, direct, mimo.
    #[arg(long, default_value = "recursive")]
    strategy: String,
    #[arg(long, default_value_t = 2)]
    lag: usize,
    #[arg(long, default_value_t = 4)]
    horizon: usize,
    /// Fixed ARIMA order p,d,q (otherwise selected automatically).
    #[arg(long, value_delimiter = ',', num_args = 3)]
    order: Option<Vec<usize>>,
    #[arg(long, default_value_t = 3)]
    max_p: usize,
    #[arg(long, default_value_t = 1)]
    max_d: usize,
    #[arg(long, default_value_t = 1)]
    max_q: usize,
    #[arg(long, default_value_t = 8)]
    hidden_units: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    /// MLP activation: tanh or relu.
    #[arg(long, default_value = "tanh")]
    activation: String,
    /// N-BEATS hidden layers per block.
    #[arg(long, default_value_t = 2)]
    n_hidden_layers: usize,
}

#[derive(Args, Debug, Serialize)]
struct ForecastArgs {
    /// Stored model file produced by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// History CSV; required for pure strategy models.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    horizon: usize,
}

#[derive(Args, Debug, Serialize)]
struct HpoArgs {
    /// Input series CSV (index,value).
    #[arg(long)]
    input: PathBuf,
    /// Network family: mlp, lstm, nbeats.
    #[arg(long)]
    family: String,
    #[arg(long, default_value = "recursive")]
    strategy: String,
    /// Tune the hybrid (ARIMA residual) pipeline instead of the single network.
    #[arg(long, default_value_t = false)]
    hybrid: bool,
    #[arg(long, default_value_t = 2)]
    lag: usize,
    /// Validation window length taken from the end of the series.
    #[arg(long, default_value_t = 4)]
    validation_len: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Objective evaluations (seeds) per trial.
    #[arg(long, default_value_t = 5)]
    trial_seeds: usize,
}

#[derive(Args, Debug, Serialize)]
struct BenchmarkArgs {
    /// Benchmark TOML config.
    config: PathBuf,
}

/// Errors routed to exit code 2 (configuration / input) or 1 (runtime).
enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn config<E: std::fmt::Display>(e: E) -> Self {
        CliError::Config(e.to_string())
    }
    fn runtime<E: std::fmt::Display>(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .is_err()
        {
            eprintln!("error: could not configure {jobs} worker threads");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(args) => cmd_ingest(cli, args),
        Command::Synth(args) => cmd_synth(cli, args),
        Command::Fit(args) => cmd_fit(cli, args),
        Command::Forecast(args) => cmd_forecast(cli, args),
        Command::Hpo(args) => cmd_hpo(cli, args),
        Command::Benchmark(args) => cmd_benchmark(cli, args),
    }
}

fn ensure_out(cli: &Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Config(format!("{}: {e}", cli.out.display())))
}

/// Replayability: echo the fully resolved run (command, arguments, master
/// seed, worker count) into the output directory.
fn echo_config<A: Serialize>(cli: &Cli, command: &str, args: &A) -> Result<()> {
    #[derive(Serialize)]
    struct Resolved<'a, A: Serialize> {
        command: &'a str,
        seed: u64,
        jobs: Option<usize>,
        out: String,
        #[serde(flatten)]
        args: &'a A,
    }
    let resolved = Resolved {
        command,
        seed: cli.seed,
        jobs: cli.jobs,
        out: cli.out.display().to_string(),
        args,
    };
    let text = toml::to_string_pretty(&resolved).map_err(CliError::config)?;
    write_out(cli, "run-config.toml", &text)
}

fn write_out(cli: &Cli, name: &str, content: &str) -> Result<()> {
    let path = cli.out.join(name);
    std::fs::write(&path, content).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn read_series(path: &Path) -> Result<TimeSeries> {
    TimeSeries::read_csv(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn parse_strategy(s: &str) -> Result<StrategyMode> {
    StrategyMode::parse(s).ok_or_else(|| CliError::Config(format!("unknown strategy {s:?}")))
}

fn cmd_ingest(cli: &Cli, args: &IngestArgs) -> Result<()> {
    ensure_out(cli)?;
    echo_config(cli, "ingest", args)?;
    let text = std::fs::read_to_string(&args.path)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.path.display())))?;
    let surface = demographic::parse_surface(&text, args.min_year)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.path.display())))?;
    write_out(cli, "surface.txt", &surface.serialize())?;
    extract_series_csv(cli, &surface, args.age, &args.sex)?;
    println!(
        "{} years, {} ages, 3 sexes (years {}..{})",
        surface.n_years(),
        demographic::N_AGES,
        surface.years().start,
        surface.years().end - 1
    );
    Ok(())
}

/// Write `series.csv` with the log-rate series for one age/sex when `--age`
/// was given.
fn extract_series_csv(
    cli: &Cli,
    surface: &demographic::MortalitySurface,
    age: Option<usize>,
    sex: &str,
) -> Result<()> {
    let Some(age) = age else { return Ok(()) };
    let sex = Sex::parse(sex)
        .ok_or_else(|| CliError::Config(format!("unknown sex {sex:?}")))?;
    let series = demographic::extract_series(surface, age, sex)
        .and_then(|s| Ok(s.log_transform()?))
        .map_err(CliError::config)?;
    write_out(cli, "series.csv", &series.to_csv_string())
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    ensure_out(cli)?;
    echo_config(cli, "synth", args)?;
    let mut params = SurfaceParams::default_for(args.years);
    params.noise_sigma = args.noise;
    let surface = demographic::synthesize_surface(&params, cli.seed).map_err(CliError::config)?;
    write_out(cli, "surface.txt", &surface.serialize())?;
    extract_series_csv(cli, &surface, args.age, &args.sex)?;
    println!(
        "synthesized {} years × {} ages (seed {})",
        surface.n_years(),
        demographic::N_AGES,
        cli.seed
    );
    Ok(())
}

fn network_spec(args: &FitArgs, family: Family, output_width: usize) -> Result<NetworkSpec> {
    let activation = Activation::parse(&args.activation).map_err(CliError::config)?;
    let spec = match family {
        Family::Mlp => NetworkSpec::mlp(
            args.lag,
            output_width,
            args.hidden_units,
            activation,
            args.learning_rate,
        ),
        Family::Lstm => {
            NetworkSpec::lstm(args.lag, output_width, args.hidden_units, args.learning_rate)
        }
        Family::Nbeats => NetworkSpec::nbeats(
            args.lag,
            output_width,
            args.hidden_units,
            args.n_hidden_layers,
            args.learning_rate,
        ),
    };
    spec.map_err(CliError::config)
}

fn linear_spec(args: &FitArgs) -> Result<LinearSpec> {
    match &args.order {
        Some(pdq) => Ok(LinearSpec::Order(
            ArimaOrder::new(pdq[0], pdq[1], pdq[2]).map_err(CliError::config)?,
        )),
        None => Ok(LinearSpec::Auto {
            max_p: args.max_p,
            max_d: args.max_d,
            max_q: args.max_q,
        }),
    }
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<()> {
    ensure_out(cli)?;
    echo_config(cli, "fit", args)?;
    let series = read_series(&args.input)?;
    let record = match args.model.as_str() {
        "arima" => {
            let order = match &args.order {
                Some(pdq) => ArimaOrder::new(pdq[0], pdq[1], pdq[2]).map_err(CliError::config)?,
                None => arima::select_order(&series, args.max_p, args.max_d, args.max_q)
                    .map_err(CliError::runtime)?,
            };
            let model = arima::fit(&series, order).map_err(CliError::runtime)?;
            println!(
                "ARIMA({},{},{}) sigma2 {:.6}",
                model.order.p, model.order.d, model.order.q, model.sigma2
            );
            model.to_record()
        }
        name => {
            let (family_name, is_hybrid) = match name.strip_prefix("hybrid-") {
                Some(rest) => (rest, true),
                None => (name, false),
            };
            let family = Family::parse(family_name)
                .map_err(|_| CliError::Config(format!("unknown model {name:?}")))?;
            let mode = parse_strategy(&args.strategy)?;
            let spec = network_spec(args, family, mode.learner_output_width(args.horizon))?;
            if is_hybrid {
                let model = hybrid::fit_hybrid(
                    &series,
                    linear_spec(args)?,
                    mode,
                    args.lag,
                    args.horizon,
                    &spec,
                    cli.seed,
                )
                .map_err(CliError::runtime)?;
                println!(
                    "hybrid ARIMA({},{},{}) + {} [{}]",
                    model.linear.order.p,
                    model.linear.order.d,
                    model.linear.order.q,
                    family.as_str(),
                    mode.as_str()
                );
                model.to_record()
            } else {
                let model =
                    strategy::fit_strategy(&series, mode, args.lag, args.horizon, &spec, cli.seed)
                        .map_err(CliError::runtime)?;
                println!("{} [{}] lag {}", family.as_str(), mode.as_str(), args.lag);
                model.to_record()
            }
        }
    };
    write_out(cli, "model.txt", &record.to_text())?;
    Ok(())
}

fn cmd_forecast(cli: &Cli, args: &ForecastArgs) -> Result<()> {
    ensure_out(cli)?;
    echo_config(cli, "forecast", args)?;
    let text = std::fs::read_to_string(&args.model)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.model.display())))?;
    let record = Record::from_text(&text).map_err(CliError::config)?;
    let kind = record.get("kind").map_err(CliError::config)?.to_string();
    let forecast = match kind.as_str() {
        "arima" => ArimaModel::from_record(&record)
            .map_err(CliError::config)?
            .forecast(args.horizon)
            .map_err(CliError::runtime)?,
        "hybrid" => HybridModel::from_record(&record)
            .map_err(CliError::config)?
            .forecast(args.horizon)
            .map_err(CliError::runtime)?,
        "strategy" => {
            let input = args.input.as_ref().ok_or_else(|| {
                CliError::Config("strategy models need --input with the history series".into())
            })?;
            let history = read_series(input)?;
            StrategyModel::from_record(&record)
                .map_err(CliError::config)?
                .forecast(history.values(), args.horizon)
                .map_err(CliError::runtime)?
        }
        other => return Err(CliError::Config(format!("unknown model kind {other:?}"))),
    };
    let mut csv = String::from("step,value\n");
    for (h, v) in forecast.iter().enumerate() {
        csv.push_str(&format!("{},{v}\n", h + 1));
    }
    write_out(cli, "forecast.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_hpo(cli: &Cli, args: &HpoArgs) -> Result<()> {
    ensure_out(cli)?;
    echo_config(cli, "hpo", args)?;
    let series = read_series(&args.input)?;
    let family = Family::parse(&args.family).map_err(CliError::config)?;
    let mode = parse_strategy(&args.strategy)?;
    if series.len() <= args.validation_len + args.lag + 4 {
        return Err(CliError::Config(format!(
            "series of {} points too short for validation window {}",
            series.len(),
            args.validation_len
        )));
    }
    let split = series.len() - args.validation_len;
    let values = series.values();
    let train =
        TimeSeries::new(values[..split].to_vec(), series.start_index()).map_err(CliError::config)?;
    let val = &values[split..];
    let linear = args.hybrid.then_some(LinearSpec::Auto {
        max_p: 3,
        max_d: 1,
        max_q: 1,
    });
    let space = SearchSpace::new(family, args.lag, mode.learner_output_width(val.len()));
    let objective = hpo::validation_objective(&train, val, mode, args.lag, linear);
    let (best, history) = hpo::optimize(objective, &space, args.trials, args.trial_seeds, cli.seed)
        .map_err(CliError::runtime)?;
    write_out(cli, "hpo-history.csv", &hpo::history_to_csv(&history))?;
    let summary = format!(
        "family = \"{}\"\nhidden_units = {}\nlearning_rate = {:e}\nactivation = \"{}\"\nn_hidden_layers = {}\n",
        best.family.as_str(),
        best.hidden_units,
        best.learning_rate,
        best.activation.as_str(),
        best.n_hidden_layers
    );
    write_out(cli, "best-config.toml", &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_benchmark(cli: &Cli, args: &BenchmarkArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let mut config: BenchmarkConfig = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    // the CLI master seed overrides the config when given explicitly
    if cli.seed != 0 {
        config.master_seed = cli.seed;
    }
    config.validate().map_err(CliError::config)?;
    ensure_out(cli)?;
    let resolved = toml::to_string_pretty(&config).map_err(CliError::config)?;
    write_out(cli, "run-config.toml", &resolved)?;
    let report = evaluation::run_benchmark(&config).map_err(CliError::runtime)?;
    write_out(cli, "report.csv", &report.to_csv())?;
    write_out(cli, "report.txt", &report.to_text())?;
    println!("{}", report.to_text());
    if report.has_failures() {
        return Err(CliError::Runtime(
            "benchmark completed with failure cells; see report.csv".into(),
        ));
    }
    Ok(())
}
