use std::fs;
use std::io::{self, Write};
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use diffclass::baselines::{default_epsilons, margin_diagnostic};
use diffclass::bench::{bayes_risk, run_bench, BenchResult, Classifier, ExperimentSpec};
use diffclass::io::{read_dataset, write_dataset};
use diffclass::{
    params_from_json, select, simulate_dataset, BuiltinModel, Error, SelectionConfig, SimOptions,
    TrainConfig,
};

#[derive(Parser)]
#[command(name = "diffclass", version, about = "Classification of diffusion paths by empirical risk minimization")]
struct Cli {
    /// TOML file with default option values; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labeled dataset from a built-in model.
    Simulate(SimulateArgs),
    /// Fit a score function with penalized dimension selection.
    Train(TrainArgs),
    /// Print posteriors and classes of a dataset under a trained model.
    Predict(PredictArgs),
    /// Repeated train/test experiment.
    Bench(BenchArgs),
    /// Monte Carlo error of the oracle Bayes classifier.
    BayesRisk(BayesArgs),
    /// Margin probabilities of a two-class restriction of a built-in model.
    Margin(MarginArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    model: Option<BuiltinModel>,
    /// Number of paths.
    #[arg(long = "N", value_name = "N")]
    n_paths: Option<usize>,
    /// Observation steps per path.
    #[arg(long = "n", value_name = "n")]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SelectArgs {
    /// Comma-separated dimension grid, e.g. 2,4,8.
    #[arg(long, value_delimiter = ',', value_parser = positive_usize)]
    grid: Option<Vec<usize>>,
    #[arg(long, value_parser = positive_f64)]
    kappa: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Euler sub-steps per observation step.
    #[arg(long, value_parser = positive_usize)]
    refine: Option<usize>,
    /// Output file (`.csv` for text, anything else for binary).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset file.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    select: SelectArgs,
    #[arg(long, value_parser = positive_usize)]
    max_iters: Option<usize>,
    /// Output model file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained model file.
    #[arg(long)]
    params: PathBuf,
    /// Dataset to score.
    #[arg(long)]
    data: PathBuf,
    /// Write the per-path CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = positive_usize)]
    reps: Option<usize>,
    #[arg(long, value_parser = positive_usize)]
    test_size: Option<usize>,
    /// Comma-separated classifiers: erm, plugin, knn, bayes.
    #[arg(long, value_delimiter = ',')]
    classifiers: Option<Vec<Classifier>>,
    #[command(flatten)]
    select: SelectArgs,
    /// CSV output; the JSON result goes next to it with a `.json` extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BayesArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = positive_usize)]
    reps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MarginArgs {
    #[command(flatten)]
    common: Common,
    /// The two classes to keep (1-based).
    #[arg(long, value_delimiter = ',', num_args = 1, default_value = "1,2")]
    classes: Vec<usize>,
    /// Comma-separated ε grid inside (0, 1/8).
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("`{s}` is not a positive integer")),
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

/// Values read from `--config`; every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<BuiltinModel>,
    #[serde(rename = "N")]
    n_paths: Option<usize>,
    #[serde(rename = "n")]
    steps: Option<usize>,
    refine: Option<usize>,
    reps: Option<usize>,
    test_size: Option<usize>,
    classifiers: Option<Vec<Classifier>>,
    seed: Option<u64>,
    plugin_dims: Option<(usize, usize)>,
    selection: Option<SelectionConfig>,
    train: Option<TrainConfig>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Param(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult = Result<(), Failure>;

fn load_config(path: Option<&FsPath>) -> Result<FileConfig, Failure> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
}

struct Resolved {
    model: BuiltinModel,
    n_paths: usize,
    steps: usize,
    seed: u64,
}

fn resolve(c: &Common, file: &FileConfig, default_n: usize, default_steps: usize) -> Resolved {
    Resolved {
        model: c.model.or(file.model).unwrap_or(BuiltinModel::Model1),
        n_paths: c.n_paths.or(file.n_paths).unwrap_or(default_n),
        steps: c.steps.or(file.steps).unwrap_or(default_steps),
        seed: c.seed.or(file.seed).unwrap_or(0),
    }
}

fn selection_config(args: &SelectArgs, file: &FileConfig) -> SelectionConfig {
    let mut cfg = file.selection.clone().unwrap_or_default();
    if let Some(grid) = &args.grid {
        cfg.grid = grid.clone();
    }
    if let Some(kappa) = args.kappa {
        cfg.kappa = kappa;
    }
    cfg
}

fn create_parent(path: &FsPath) -> io::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir),
        _ => Ok(()),
    }
}

fn write_text(path: &FsPath, text: &str) -> Result<(), Failure> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| {
        Failure::Runtime(Error::Io(io::Error::new(
            e.kind(),
            format!("cannot write {}: {e}", path.display()),
        )))
    })
}

fn simulate(args: SimulateArgs, file: &FileConfig) -> CliResult {
    let r = resolve(&args.common, file, 1000, 100);
    let refine = args.refine.or(file.refine).unwrap_or(1);
    let opts = SimOptions::new(r.steps).with_refine(refine);
    let data = simulate_dataset(&r.model.spec(), r.n_paths, opts, r.seed)?;
    create_parent(&args.out)?;
    write_dataset(&data, &args.out)?;
    let counts: Vec<String> = data
        .class_counts()
        .iter()
        .enumerate()
        .map(|(k, c)| format!("{}:{c}", k + 1))
        .collect();
    println!(
        "wrote {} paths of {} steps from {} to {} (class counts {})",
        data.len(),
        data.steps(),
        r.model,
        args.out.display(),
        counts.join(" ")
    );
    Ok(())
}

fn train(args: TrainArgs, file: &FileConfig) -> CliResult {
    let data = read_dataset(&args.data)?;
    let sel = selection_config(&args.select, file);
    let mut train_cfg = file.train.clone().unwrap_or_default();
    if let Some(it) = args.max_iters {
        train_cfg.max_iters = it;
    }
    let result = select(&data, &sel, &train_cfg)?;
    println!("D1,D2,penalty,train_risk,criterion");
    for row in &result.table {
        let opt = |v: Option<f64>| v.map_or_else(|| "failed".to_string(), |x| format!("{x:.6}"));
        println!(
            "{},{},{:.6},{},{}",
            row.drift_dim,
            row.diffusion_dim,
            row.penalty,
            opt(row.train_risk),
            opt(row.criterion)
        );
    }
    let acc = data
        .iter()
        .filter(|(p, y)| result.fitted.params.classify(p) == *y)
        .count() as f64
        / data.len() as f64;
    write_text(&args.out, &result.fitted.to_json()?)?;
    println!(
        "chosen D1={} D2={}; training accuracy {acc:.4}; model written to {}",
        result.chosen.0,
        result.chosen.1,
        args.out.display()
    );
    Ok(())
}

fn predict(args: PredictArgs) -> CliResult {
    let text = fs::read_to_string(&args.params).map_err(|e| {
        Failure::Runtime(Error::Io(io::Error::new(
            e.kind(),
            format!("cannot read model {}: {e}", args.params.display()),
        )))
    })?;
    let params = params_from_json(&text)?;
    let data = read_dataset(&args.data)?;
    if data.num_classes() != params.num_classes() {
        return Err(Failure::Runtime(Error::Schema(format!(
            "model has {} classes, dataset has {}",
            params.num_classes(),
            data.num_classes()
        ))));
    }
    let mut out = String::new();
    out.push_str("path");
    for k in 1..=params.num_classes() {
        out.push_str(&format!(",p{k}"));
    }
    out.push_str(",class,label\n");
    let mut correct = 0usize;
    for (j, (path, y)) in data.iter().enumerate() {
        let post = params.posterior(path);
        let class = diffclass::scores::argmax(&post);
        correct += usize::from(class == y);
        out.push_str(&(j + 1).to_string());
        for p in &post {
            out.push_str(&format!(",{p}"));
        }
        out.push_str(&format!(",{},{}\n", class + 1, y + 1));
    }
    match &args.out {
        Some(path) => write_text(path, &out)?,
        None => io::stdout().write_all(out.as_bytes())?,
    }
    eprintln!("accuracy {:.6}", correct as f64 / data.len() as f64);
    Ok(())
}

fn json_sibling(csv: &FsPath) -> PathBuf {
    csv.with_extension("json")
}

fn report(result: &BenchResult, out: Option<&FsPath>) -> CliResult {
    println!("classifier,mean,std,reps,failed");
    for s in &result.summaries {
        let f = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.4}"));
        println!(
            "{},{},{},{},{}",
            s.classifier,
            f(s.mean),
            f(s.std),
            s.errors.len(),
            s.failed_reps.len()
        );
    }
    if let Some(path) = out {
        create_parent(path)?;
        let mut buf = Vec::new();
        result.write_csv(&mut buf)?;
        fs::write(path, buf)?;
        let json = json_sibling(path);
        fs::write(&json, result.to_json()?)?;
        eprintln!("wrote {} and {}", path.display(), json.display());
    }
    Ok(())
}

fn bench(args: BenchArgs, file: &FileConfig) -> CliResult {
    let r = resolve(&args.common, file, 1000, 100);
    let defaults = ExperimentSpec::default();
    let mut train_cfg = file.train.clone().unwrap_or_default();
    train_cfg.seed = r.seed;
    let spec = ExperimentSpec {
        model: r.model,
        n_train: r.n_paths,
        steps: r.steps,
        refine: file.refine.unwrap_or(defaults.refine),
        reps: args.reps.or(file.reps).unwrap_or(defaults.reps),
        test_size: args.test_size.or(file.test_size).unwrap_or(defaults.test_size),
        classifiers: args
            .classifiers
            .clone()
            .or(file.classifiers.clone())
            .unwrap_or(defaults.classifiers),
        seed: r.seed,
        plugin_dims: file.plugin_dims.unwrap_or(defaults.plugin_dims),
        selection: selection_config(&args.select, file),
        train: train_cfg,
    };
    let result = run_bench(&spec)?;
    report(&result, args.out.as_deref())
}

fn bayes(args: BayesArgs, file: &FileConfig) -> CliResult {
    let r = resolve(&args.common, file, 4000, 500);
    let reps = args.reps.or(file.reps).unwrap_or(20);
    let result = bayes_risk(r.model, r.n_paths, r.steps, reps, r.seed)?;
    report(&result, args.out.as_deref())
}

fn margin(args: MarginArgs, file: &FileConfig) -> CliResult {
    let r = resolve(&args.common, file, 100_000, 100);
    if args.classes.len() != 2 || args.classes.iter().any(|&c| c == 0) {
        return Err(Failure::Usage("--classes needs two 1-based class indices".into()));
    }
    let classes: Vec<usize> = args.classes.iter().map(|c| c - 1).collect();
    let model = r.model.spec().restrict(&classes)?;
    let eps = args.eps.clone().unwrap_or_else(default_epsilons);
    let refine = file.refine.unwrap_or(1);
    let rep = margin_diagnostic(&model, r.n_paths, &eps, SimOptions::new(r.steps).with_refine(refine), r.seed)?;
    println!("epsilon,probability");
    for (e, p) in rep.epsilons.iter().zip(&rep.probabilities) {
        println!("{e},{p}");
    }
    println!("slope {:.6}, relative residual {:.4}", rep.slope, rep.relative_residual);
    if let Some(path) = &args.out {
        write_text(path, &serde_json::to_string_pretty(&rep).map_err(Error::from)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let file = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(a, &file),
        Command::Train(a) => train(a, &file),
        Command::Predict(a) => predict(a),
        Command::Bench(a) => bench(a, &file),
        Command::BayesRisk(a) => bayes(a, &file),
        Command::Margin(a) => margin(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
