//! Command-line interface: `explain`, `bench` and `demo` subcommands.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::bench::{
    load_csv, make_blobs, make_nonlinear_regression, records_to_csv, run_benchmark,
    BenchOptions, Dataset, ExplainerKind, OracleSpec,
};
use crate::explain::{explain_gpx_with, ExplainOptions, DEFAULT_NOISE_SIZE};
use crate::gp::GpConfig;
use crate::oracle::{external_oracle, train_random_forest, train_rbf_model, Oracle};
use crate::{Error, Task};

#[derive(Parser)]
#[command(name = "gpx", about = "Local symbolic explanations for black-box models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain one prediction of a black-box oracle with a symbolic surrogate
    Explain(ExplainArgs),
    /// Run the explainer-comparison protocol from a JSON config
    Bench(BenchArgs),
    /// Regenerate a bundled demo experiment end-to-end
    Demo(DemoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Reg,
    Clf,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Reg => Task::Regression,
            TaskArg::Clf => Task::Classification,
        }
    }
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Dataset CSV (header row + decimal cells)
    #[arg(long)]
    data: PathBuf,
    /// Name of the target column
    #[arg(long)]
    target: String,
    /// Oracle: `rf`, `rbf`, or `cmd:<command>` for an external process
    #[arg(long)]
    oracle: String,
    /// Row index of the instance to explain
    #[arg(long)]
    instance: usize,
    #[arg(long, default_value_t = DEFAULT_NOISE_SIZE)]
    noise_size: usize,
    #[arg(long, default_value_t = 100)]
    pop: usize,
    #[arg(long, default_value_t = 50)]
    generations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report the RMSE variant of the regression fidelity
    #[arg(long, default_value_t = false)]
    rmse: bool,
    /// Where to write the JSON report
    #[arg(long)]
    out: PathBuf,
    /// Optionally also write the expression as a standalone DOT file
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON config listing datasets, oracles, explainers, queries and seed
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    /// Which figure-style experiment to regenerate (only 3 is bundled)
    #[arg(long)]
    figure: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    queries: usize,
    #[arg(long, default_value_t = DEFAULT_NOISE_SIZE)]
    noise_size: usize,
    /// Optional path for the JSON result
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses and runs a full invocation, returning the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Explain(args) => cmd_explain(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Demo(args) => cmd_demo(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn build_oracle(spec: &str, dataset: &Dataset, seed: u64) -> Result<Box<dyn Oracle>, Error> {
    match spec {
        "rf" => Ok(Box::new(train_random_forest(
            &dataset.x, &dataset.y, dataset.task, 100, 8, seed,
        )?)),
        "rbf" => Ok(Box::new(train_rbf_model(
            &dataset.x, &dataset.y, dataset.task, 0.1, 1e-3,
        )?)),
        other => match other.strip_prefix("cmd:") {
            Some(command) => Ok(Box::new(external_oracle(
                command,
                dataset.task,
                dataset.feature_names.len(),
            )?)),
            None => Err(Error::InvalidConfig(format!(
                "unknown oracle `{other}`; expected rf, rbf or cmd:<command>"
            ))),
        },
    }
}

fn cmd_explain(args: ExplainArgs) -> Result<(), Error> {
    let task: Task = args.task.into();
    let (dataset, dropped) = load_csv(&args.data, task, &args.target)?;
    if dropped > 0 {
        eprintln!("warning: dropped {dropped} malformed rows");
    }
    let x = dataset
        .x
        .get(args.instance)
        .cloned()
        .ok_or_else(|| {
            Error::InvalidConfig(format!(
                "instance {} out of range (dataset has {} rows)",
                args.instance,
                dataset.len()
            ))
        })?;
    let oracle = build_oracle(&args.oracle, &dataset, args.seed)?;
    let gp = GpConfig {
        population_size: args.pop,
        generations: args.generations,
        seed: args.seed,
        ..GpConfig::default()
    };
    let opts = ExplainOptions {
        fidelity_rmse: args.rmse,
        feature_names: Some(dataset.feature_names.clone()),
    };
    let report = explain_gpx_with(
        oracle.as_ref(),
        &x,
        &dataset.x,
        &gp,
        args.noise_size,
        &opts,
    )?;
    fs::write(&args.out, serde_json::to_string_pretty(&report)? + "\n")?;
    if let Some(dot_path) = &args.dot {
        fs::write(dot_path, &report.expression_dot)?;
    }
    println!("wrote {}", args.out.display());
    println!("expression: {}", report.expression_infix);
    println!("fidelity:   {}", report.fidelity);
    Ok(())
}

/// One dataset entry in the bench config: either a CSV on disk or a bundled
/// synthetic generator (`blobs` or `surface`).
#[derive(Deserialize)]
#[serde(untagged)]
enum DatasetSpec {
    Csv {
        path: PathBuf,
        task: Task,
        target: String,
    },
    Synthetic {
        synthetic: String,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_samples() -> usize {
    1000
}

fn default_out_json() -> PathBuf {
    PathBuf::from("bench_result.json")
}

fn default_out_csv() -> PathBuf {
    PathBuf::from("bench_records.csv")
}

#[derive(Deserialize)]
struct BenchConfigFile {
    datasets: Vec<DatasetSpec>,
    oracles: Vec<OracleSpec>,
    explainers: Vec<ExplainerKind>,
    #[serde(flatten)]
    options: BenchOptions,
    #[serde(default = "default_out_json")]
    out_json: PathBuf,
    #[serde(default = "default_out_csv")]
    out_csv: PathBuf,
}

fn load_dataset(spec: &DatasetSpec) -> Result<Dataset, Error> {
    match spec {
        DatasetSpec::Csv { path, task, target } => {
            let (ds, dropped) = load_csv(path, *task, target)?;
            if dropped > 0 {
                eprintln!("warning: {}: dropped {dropped} malformed rows", path.display());
            }
            Ok(ds)
        }
        DatasetSpec::Synthetic {
            synthetic,
            samples,
            seed,
        } => match synthetic.as_str() {
            "blobs" => Ok(make_blobs(*samples, *seed)),
            "surface" => Ok(make_nonlinear_regression(*samples, *seed)),
            other => Err(Error::InvalidConfig(format!(
                "unknown synthetic dataset `{other}`"
            ))),
        },
    }
}

fn cmd_bench(args: BenchArgs) -> Result<(), Error> {
    let raw = fs::read_to_string(&args.config)?;
    let config: BenchConfigFile = serde_json::from_str(&raw)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", args.config.display())))?;
    let datasets: Result<Vec<Dataset>, Error> =
        config.datasets.iter().map(load_dataset).collect();
    let datasets = datasets?;
    let result = run_benchmark(&datasets, &config.oracles, &config.explainers, &config.options)?;
    fs::write(&config.out_json, serde_json::to_string_pretty(&result)? + "\n")?;
    fs::write(&config.out_csv, records_to_csv(&result.records))?;
    println!("wrote {} and {}", config.out_json.display(), config.out_csv.display());
    for agg in &result.aggregates {
        println!(
            "{:<8} mean {:.4}  std {:.4}",
            agg.explainer.label(),
            agg.mean,
            agg.std_dev
        );
    }
    for test in &result.stat_tests {
        println!(
            "{:<20} stat {:+.4}  p {:.4}  p.adjust {:.4}",
            test.comparison, test.statistic, test.p_value, test.p_adjusted
        );
    }
    Ok(())
}

fn cmd_demo(args: DemoArgs) -> Result<(), Error> {
    if args.figure != 3 {
        return Err(Error::InvalidConfig(format!(
            "no demo for figure {}; only --figure 3 is bundled",
            args.figure
        )));
    }
    let dataset = make_blobs(1500, args.seed);
    let opts = BenchOptions {
        queries_per_dataset: args.queries,
        noise_size: args.noise_size,
        seed: args.seed,
        // The blob scene needs a larger search budget than the per-query
        // default before the symbolic surrogate overtakes the linear one.
        gp: GpConfig {
            population_size: 300,
            restarts: 10,
            ..GpConfig::default()
        },
        ..BenchOptions::default()
    };
    let oracles = [OracleSpec::Rf {
        n_trees: 100,
        max_depth: 8,
    }];
    let explainers = [
        ExplainerKind::Gpx,
        ExplainerKind::Linear,
        ExplainerKind::Tree,
    ];
    let result = run_benchmark(&[dataset], &oracles, &explainers, &opts)?;
    println!("three-blob demo ({} query points, noise {})", args.queries, args.noise_size);
    for agg in &result.aggregates {
        println!(
            "{:<8} mean u_c {:.4}  std {:.4}",
            agg.explainer.label(),
            agg.mean,
            agg.std_dev
        );
    }
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&result)? + "\n")?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
