use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use multiroc::bootstrap::{self, curve_band, ranking_probabilities, write_band_csv, BandPoint, BootstrapOptions, BootstrapResult};
use multiroc::data::{dataset_from_parts, fmt_real, read_labels, read_prob_matrix};
use multiroc::experiments::{
    self, balanced_subsample, cost_schedule, default_cost_grid, dirichlet_skew, fit_first_columns, generate_multinomial,
    majority_class, majority_classifier, LabelMode, MultinomialOptions, SimulationConfig,
};
use multiroc::export::{render_svg, RunManifest};
use multiroc::pipeline::{self, Evaluation, EvaluationOptions};
use multiroc::{hand_till_m, DataFormat, Error, FitOptions, Result, RocCurve, ScoredDataset, WeightMode};

const BAND_GRID: usize = 101;

#[derive(Parser)]
#[command(name = "multiroc", version, about = "Multiclass ROC curves and the D statistic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the summary curve and D for one classifier.
    Evaluate(EvaluateArgs),
    /// D with a parametric bootstrap confidence interval and curve band.
    Bootstrap(BootstrapArgs),
    /// Bootstrap several classifiers on the same labels and rank them.
    Compare(CompareArgs),
    /// Generate simulation datasets and optionally run the sweep.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Labels: a file with one integer per line, or an inline list such as
    /// `0,1,2,1`. Without it, the last CSV column holds the labels.
    #[arg(long)]
    labels: Option<String>,
    /// Number of threshold levels.
    #[arg(long, default_value_t = 50)]
    thresholds: usize,
    /// weighted, unweighted or file=PATH (a 2T x K cost matrix).
    #[arg(long)]
    weights: Option<String>,
    /// Directory for curve, plot and manifest files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Format of tabular outputs.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Probability file (CSV or JSON).
    probs: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Clone)]
struct BootArgs {
    /// Number of bootstrap replicates.
    #[arg(long = "B", default_value_t = 100)]
    b: usize,
    /// Confidence level of the interval.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Args)]
struct BootstrapArgs {
    probs: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    boot: BootArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Probability files, one per model.
    #[arg(required = true, num_args = 2..)]
    models: Vec<PathBuf>,
    /// Comma-separated model names (default: file stems).
    #[arg(long)]
    names: Option<String>,
    /// Dataset name for the ranking table.
    #[arg(long, default_value = "dataset")]
    dataset: String,
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    boot: BootArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Discriminative,
    Skewness,
    Weights,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(value_parser = parse_experiment)]
    experiment: Experiment,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Covariate counts: a range `1..10` or a list `2,5,9`.
    #[arg(long)]
    d: Option<String>,
    #[arg(long, value_enum, default_value = "random")]
    label_mode: LabelModeArg,
    /// Dirichlet concentrations, comma separated.
    #[arg(long, default_value = "2,5,9")]
    alpha: String,
    #[arg(long, default_value_t = 30)]
    replicates: usize,
    /// Per-class size of the balanced base sample (default: smallest class).
    #[arg(long)]
    n_sub: Option<usize>,
    /// Observations per skewed resample (default: size of the base sample).
    #[arg(long)]
    n_target: Option<usize>,
    /// Cost factors: `0.1..10` for the default grid, or a list.
    #[arg(long, default_value = "0.1..10")]
    c: String,
    /// Also evaluate every generated dataset.
    #[arg(long)]
    run: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelModeArg {
    Random,
    Deterministic,
}

fn parse_experiment(s: &str) -> std::result::Result<Experiment, String> {
    Experiment::from_str(s, true).map_err(|_| Error::UnknownExperiment(s.to_string()).to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let outcome = match cli.command {
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("MULTIROC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("MULTIROC_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn load_labels(spec: &str) -> Result<Vec<i64>> {
    let path = Path::new(spec);
    if path.is_file() {
        read_labels(BufReader::new(File::open(path)?))
    } else if spec.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '-' || c.is_whitespace()) {
        read_labels(spec.as_bytes())
    } else {
        Err(Error::InvalidArgument(format!("labels '{spec}' is neither a file nor a list of integers")))
    }
}

fn load_dataset(path: &Path, labels: Option<&str>) -> Result<ScoredDataset> {
    match labels {
        None => ScoredDataset::from_path(path),
        Some(spec) => {
            if DataFormat::from_path(path) == DataFormat::Json {
                return Err(Error::InvalidArgument("JSON inputs carry their own labels; drop --labels".into()));
            }
            let probs = read_prob_matrix(BufReader::new(File::open(path)?))?;
            dataset_from_parts(probs, &load_labels(spec)?)
        }
    }
}

fn weight_mode(spec: Option<&str>, default: WeightMode) -> Result<WeightMode> {
    spec.map_or(Ok(default), str::parse)
}

fn eval_options(common: &CommonArgs, weights: WeightMode) -> EvaluationOptions {
    EvaluationOptions {
        thresholds: common.thresholds,
        weights,
        fit: FitOptions {
            max_iter: common.max_iter,
            tol: common.tol,
            clamp_eps: None,
        },
    }
}

fn common_json(common: &CommonArgs, default_weights: &str) -> Value {
    json!({
        "labels": common.labels,
        "thresholds": common.thresholds,
        "weights": common.weights.as_deref().unwrap_or(default_weights),
        "seed": common.seed,
        "format": common.format.ext(),
        "max_iter": common.max_iter,
        "tol": common.tol,
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(a), Value::Object(b)) = (&mut base, extra) {
        a.extend(b);
    }
    base
}

fn path_strings(paths: &[&Path]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Column-oriented table written as CSV or as a JSON array of records.
struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    fn new(columns: Vec<&'static str>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<Value>) {
        self.rows.push(row);
    }

    fn write(&self, path: &Path, format: Format) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        match format {
            Format::Csv => {
                writeln!(w, "{}", self.columns.join(","))?;
                for row in &self.rows {
                    let cells: Vec<String> = row.iter().map(cell).collect();
                    writeln!(w, "{}", cells.join(","))?;
                }
            }
            Format::Json => {
                let records: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| Value::Object(self.columns.iter().map(|c| c.to_string()).zip(row.iter().cloned()).collect()))
                    .collect();
                serde_json::to_writer_pretty(&mut w, &records)?;
                writeln!(w)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.as_f64().filter(|_| n.is_f64()).map(fmt_real).unwrap_or_else(|| n.to_string()),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn write_curve(curve: &RocCurve, path: &Path, format: Format) -> Result<()> {
    let mut t = Table::new(vec!["x", "y"]);
    for &(x, y) in &curve.points {
        t.push(vec![json!(x), json!(y)]);
    }
    t.write(path, format)
}

fn write_band(band: &[BandPoint], path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = BufWriter::new(File::create(path)?);
            write_band_csv(&mut w, band)?;
            w.flush()?;
        }
        Format::Json => fs::write(path, serde_json::to_string_pretty(band)? + "\n")?,
    }
    Ok(())
}

fn write_svg(path: &Path, curves: &[(String, &RocCurve)], band: Option<&[BandPoint]>) -> Result<()> {
    fs::write(path, render_svg(curves, band))?;
    Ok(())
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn boot_options(common: &CommonArgs, boot: &BootArgs, fit: FitOptions, keep_curves: bool) -> BootstrapOptions {
    BootstrapOptions {
        replicates: boot.b,
        level: boot.level,
        seed: common.seed,
        fit,
        keep_curves,
    }
}

fn band_for(result: &BootstrapResult) -> Vec<BandPoint> {
    let lower = (1.0 - result.level) / 2.0;
    let curves = result.curves.as_deref().unwrap_or(&[]);
    curve_band(curves, BAND_GRID, lower, 1.0 - lower)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let c = &args.common;
    let ds = load_dataset(&args.probs, c.labels.as_deref())?;
    let opts = eval_options(c, weight_mode(c.weights.as_deref(), WeightMode::Weighted)?);
    let e = pipeline::evaluate(&ds, &opts)?;
    println!("D = {:.4}", e.d.value());
    if let Some(out) = &c.out {
        create_dir(out)?;
        let ext = c.format.ext();
        write_curve(&e.curve, &out.join(format!("curve.{ext}")), c.format)?;
        write_svg(&out.join("curve.svg"), &[("D".into(), &e.curve)], None)?;
        let mut m = RunManifest::new("evaluate", path_strings(&[&args.probs]), common_json(c, "weighted"));
        m.results = json!({
            "d": e.d.value(),
            "converged": e.fit.converged,
            "iterations": e.fit.iterations,
            "deviance": e.fit.final_deviance(),
            "class_counts": ds.class_counts().as_slice(),
        });
        m.save(&out.join("manifest.json"))?;
    }
    Ok(())
}

fn cmd_bootstrap(args: BootstrapArgs) -> Result<()> {
    let c = &args.common;
    let ds = load_dataset(&args.probs, c.labels.as_deref())?;
    let opts = eval_options(c, weight_mode(c.weights.as_deref(), WeightMode::Weighted)?);
    let e = pipeline::evaluate(&ds, &opts)?;
    let keep = c.out.is_some();
    let result = bootstrap::bootstrap(&e, &boot_options(c, &args.boot, opts.fit, keep))?;
    println!("D = {:.4} [{:.4}, {:.4}]", e.d.value(), result.ci.0, result.ci.1);
    if let Some(out) = &c.out {
        create_dir(out)?;
        let ext = c.format.ext();
        let band = band_for(&result);
        write_curve(&e.curve, &out.join(format!("curve.{ext}")), c.format)?;
        write_band(&band, &out.join(format!("band.{ext}")), c.format)?;
        write_svg(&out.join("curve.svg"), &[("D".into(), &e.curve)], Some(&band))?;
        let summary = BootstrapResult { curves: None, ..result.clone() };
        save_json(&out.join("bootstrap.json"), &summary)?;
        let options = merge(common_json(c, "weighted"), json!({"B": args.boot.b, "level": args.boot.level}));
        let mut m = RunManifest::new("bootstrap", path_strings(&[&args.probs]), options);
        m.results = json!({
            "d": e.d.value(),
            "ci": [result.ci.0, result.ci.1],
            "dropped": result.dropped,
        });
        m.save(&out.join("manifest.json"))?;
    }
    Ok(())
}

fn model_names(args: &CompareArgs) -> Result<Vec<String>> {
    match &args.names {
        Some(list) => {
            let names: Vec<String> = list.split(',').map(|s| s.trim().to_string()).collect();
            if names.len() != args.models.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} names for {} models",
                    names.len(),
                    args.models.len()
                )));
            }
            Ok(names)
        }
        None => Ok(args
            .models
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("model{i}"))
            })
            .collect()),
    }
}

struct ModelRun {
    eval: Evaluation,
    boot: BootstrapResult,
    m_hat: f64,
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let c = &args.common;
    let names = model_names(&args)?;
    let datasets = args
        .models
        .iter()
        .map(|p| load_dataset(p, c.labels.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let first = &datasets[0];
    for (ds, path) in datasets.iter().zip(&args.models).skip(1) {
        if ds.n() != first.n() || ds.k() != first.k() {
            return Err(Error::DimensionMismatch(format!(
                "{} is {} x {}, expected {} x {}",
                path.display(),
                ds.n(),
                ds.k(),
                first.n(),
                first.k()
            )));
        }
        if ds.labels() != first.labels() {
            return Err(Error::DimensionMismatch(format!(
                "{} has different labels from {}",
                path.display(),
                args.models[0].display()
            )));
        }
    }
    let opts = eval_options(c, weight_mode(c.weights.as_deref(), WeightMode::Unweighted)?);
    let keep = c.out.is_some();
    let runs = datasets
        .iter()
        .map(|ds| {
            let eval = pipeline::evaluate(ds, &opts)?;
            let boot = bootstrap::bootstrap(&eval, &boot_options(c, &args.boot, opts.fit, keep))?;
            Ok(ModelRun {
                eval,
                boot,
                m_hat: hand_till_m(ds)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let boots: Vec<BootstrapResult> = runs.iter().map(|r| r.boot.clone()).collect();
    let table = ranking_probabilities(&boots)?;

    for (name, r) in names.iter().zip(&runs) {
        println!(
            "{name}: D = {:.4} [{:.4}, {:.4}], M = {:.4}",
            r.eval.d.value(),
            r.boot.ci.0,
            r.boot.ci.1,
            r.m_hat
        );
    }
    for (order, p) in &table.rows {
        let label: Vec<&str> = order.iter().map(|&i| names[i].as_str()).collect();
        println!("P({}) = {p:.2}", label.join(" > "));
    }

    if let Some(out) = &c.out {
        create_dir(out)?;
        let ext = c.format.ext();
        let mut summary = Table::new(vec!["model", "d", "ci_lower", "ci_upper", "m_hat", "dropped"]);
        let mut samples = Table::new(vec!["model", "replicate", "d"]);
        for (name, r) in names.iter().zip(&runs) {
            summary.push(vec![
                json!(name),
                json!(r.eval.d.value()),
                json!(r.boot.ci.0),
                json!(r.boot.ci.1),
                json!(r.m_hat),
                json!(r.boot.dropped),
            ]);
            for (&b, &d) in r.boot.replicate_ids.iter().zip(&r.boot.d_samples) {
                samples.push(vec![json!(name), json!(b), json!(d)]);
            }
            write_curve(&r.eval.curve, &out.join(format!("curve_{name}.{ext}")), c.format)?;
        }
        summary.write(&out.join(format!("summary.{ext}")), c.format)?;
        samples.write(&out.join(format!("samples.{ext}")), c.format)?;
        match c.format {
            Format::Csv => {
                let mut w = BufWriter::new(File::create(out.join("ranking.csv"))?);
                table.write_csv(&mut w, &args.dataset, &names)?;
                w.flush()?;
            }
            Format::Json => {
                let rows: Vec<Value> = table
                    .rows
                    .iter()
                    .map(|(order, p)| {
                        let order: Vec<&str> = order.iter().map(|&i| names[i].as_str()).collect();
                        json!({"order": order, "probability": p})
                    })
                    .collect();
                save_json(
                    &out.join("ranking.json"),
                    &json!({"dataset": args.dataset, "replicates_used": table.replicates_used, "rows": rows}),
                )?;
            }
        }
        let curves: Vec<(String, &RocCurve)> = names.iter().cloned().zip(runs.iter().map(|r| &r.eval.curve)).collect();
        write_svg(&out.join("curves.svg"), &curves, None)?;
        let inputs: Vec<&Path> = args.models.iter().map(PathBuf::as_path).collect();
        let options = merge(
            common_json(c, "unweighted"),
            json!({"B": args.boot.b, "level": args.boot.level, "names": names, "dataset": args.dataset}),
        );
        let mut m = RunManifest::new("compare", path_strings(&inputs), options);
        m.results = json!({
            "d": runs.iter().map(|r| r.eval.d.value()).collect::<Vec<_>>(),
            "m_hat": runs.iter().map(|r| r.m_hat).collect::<Vec<_>>(),
        });
        m.save(&out.join("manifest.json"))?;
    }
    Ok(())
}

/// `a..b` (inclusive integer range) or a comma-separated list.
fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("expected a range like 1..10 or a list like 2,5,9, got '{s}'"));
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("'{x}' is not a number")))
        })
        .collect()
}

/// `0.1..10` selects the default reciprocal grid; otherwise a list.
fn parse_cost_list(s: &str) -> Result<Vec<f64>> {
    let cs = if s.contains("..") {
        let (a, b) = s.split_once("..").expect("checked");
        let (a, b): (f64, f64) = (
            a.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad cost range '{s}'")))?,
            b.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad cost range '{s}'")))?,
        );
        default_cost_grid()
            .into_iter()
            .filter(|&c| c >= a * (1.0 - 1e-12) && c <= b * (1.0 + 1e-12))
            .collect()
    } else {
        parse_f64_list(s)?
    };
    if cs.is_empty() || cs.iter().any(|&c| !(c.is_finite() && c > 0.0)) {
        return Err(Error::InvalidArgument(format!("cost factors must be positive, got '{s}'")));
    }
    Ok(cs)
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let c = &args.common;
    let out = c
        .out
        .clone()
        .ok_or_else(|| Error::InvalidArgument("simulate needs --out DIR".into()))?;
    create_dir(&out)?;
    let label_mode = match args.label_mode {
        LabelModeArg::Random => LabelMode::Random,
        LabelModeArg::Deterministic => LabelMode::Deterministic,
    };
    let config = SimulationConfig {
        n: args.n,
        p: args.p,
        k: args.k,
        d: args.p,
        seed: c.seed,
        label_mode,
    };
    let sim = generate_multinomial(&config)?;
    sim.dataset.save(&out.join("truth.csv"), DataFormat::Csv)?;
    let mopts = MultinomialOptions::default();
    let weights = weight_mode(c.weights.as_deref(), WeightMode::Weighted)?;
    let eval = eval_options(c, weights);
    let base_options = merge(
        common_json(c, "weighted"),
        json!({"n": args.n, "p": args.p, "k": args.k, "label_mode": label_mode, "run": args.run}),
    );
    let (name, options, results) = match args.experiment {
        Experiment::Discriminative => {
            let ds = parse_usize_list(args.d.as_deref().unwrap_or("1..10"))?;
            let results = simulate_discriminative(&sim, &ds, &out, &eval, &mopts, c, args.run)?;
            ("discriminative", json!({"d": ds}), results)
        }
        Experiment::Skewness => {
            let ds = parse_usize_list(args.d.as_deref().unwrap_or("2,5,9"))?;
            let alphas = parse_f64_list(&args.alpha)?;
            let results = simulate_skewness(&sim, &ds, &alphas, &args, &out, &eval, &mopts)?;
            (
                "skewness",
                json!({"d": ds, "alpha": alphas, "replicates": args.replicates, "n_sub": args.n_sub, "n_target": args.n_target}),
                results,
            )
        }
        Experiment::Weights => {
            let cs = parse_cost_list(&args.c)?;
            let results = simulate_weights(&sim, &cs, &out, &eval, c, args.run)?;
            ("weights", json!({"c": cs}), results)
        }
    };
    let mut options = merge(base_options, options);
    options["experiment"] = json!(name);
    let mut m = RunManifest::new(&format!("simulate {name}"), Vec::new(), options);
    m.results = merge(json!({"class_counts": sim.dataset.class_counts().as_slice()}), results);
    m.save(&out.join("manifest.json"))?;
    Ok(())
}

fn simulate_discriminative(
    sim: &experiments::Simulation,
    ds: &[usize],
    out: &Path,
    eval: &EvaluationOptions,
    mopts: &MultinomialOptions,
    c: &CommonArgs,
    run: bool,
) -> Result<Value> {
    let noise_x = experiments::noise_covariates(sim.dataset.n(), sim.covariates.ncols(), c.seed.wrapping_add(1));
    let noise = experiments::fit_multinomial(noise_x.view(), sim.dataset.labels(), sim.dataset.k(), mopts)?;
    let mut fitted = vec![("noise".to_string(), 0.0, noise.dataset)];
    for &d in ds {
        fitted.push((format!("d{d}"), d as f64, fit_first_columns(sim, d, mopts)?.dataset));
    }
    for (label, _, dataset) in &fitted {
        dataset.save(&out.join(format!("{label}.csv")), DataFormat::Csv)?;
    }
    if !run {
        return Ok(json!({}));
    }
    let evals = fitted
        .par_iter()
        .map(|(_, _, dataset)| pipeline::evaluate(dataset, eval))
        .collect::<Result<Vec<_>>>()?;
    sweep_outputs(
        out,
        c.format,
        "d",
        fitted.iter().map(|(l, v, _)| (l.clone(), *v)).collect(),
        &evals,
    )
}

fn sweep_outputs(out: &Path, format: Format, key: &'static str, points: Vec<(String, f64)>, evals: &[Evaluation]) -> Result<Value> {
    let ext = format.ext();
    let mut summary = Table::new(vec!["label", key, "d_statistic"]);
    for ((label, value), e) in points.iter().zip(evals) {
        summary.push(vec![json!(label), json!(value), json!(e.d.value())]);
        write_curve(&e.curve, &out.join(format!("curve_{label}.{ext}")), format)?;
        println!("{label}: D = {:.4}", e.d.value());
    }
    summary.write(&out.join(format!("summary.{ext}")), format)?;
    let curves: Vec<(String, &RocCurve)> = points.iter().map(|p| p.0.clone()).zip(evals.iter().map(|e| &e.curve)).collect();
    write_svg(&out.join("curves.svg"), &curves, None)?;
    Ok(json!({"d_statistic": evals.iter().map(|e| e.d.value()).collect::<Vec<_>>()}))
}

fn simulate_weights(
    sim: &experiments::Simulation,
    cs: &[f64],
    out: &Path,
    eval: &EvaluationOptions,
    c: &CommonArgs,
    run: bool,
) -> Result<Value> {
    let majority = majority_class(&sim.dataset);
    let naive = majority_classifier(&sim.dataset, majority)?;
    naive.save(&out.join("majority.csv"), DataFormat::Csv)?;
    let pairs = multiroc::enumerate_pairs(naive.k())?;
    let labels: Vec<String> = cs.iter().map(|&c| format!("c{}", short(c))).collect();
    let mut schedules = Vec::new();
    for (label, &cost) in labels.iter().zip(cs) {
        let q = cost_schedule(naive.k(), majority, cost, eval.thresholds)?;
        let mut w = BufWriter::new(File::create(out.join(format!("weights_{label}.csv")))?);
        q.write_csv(&mut w, &pairs)?;
        w.flush()?;
        schedules.push(q);
    }
    if !run {
        return Ok(json!({"majority": majority}));
    }
    let evals = schedules
        .par_iter()
        .map(|q| experiments::evaluate_with_schedule(&naive, q, eval))
        .collect::<Result<Vec<_>>>()?;
    let points = labels.into_iter().zip(cs.iter().copied()).collect();
    let results = sweep_outputs(out, c.format, "c", points, &evals)?;
    Ok(merge(results, json!({"majority": majority})))
}

fn simulate_skewness(
    sim: &experiments::Simulation,
    ds: &[usize],
    alphas: &[f64],
    args: &SimulateArgs,
    out: &Path,
    eval: &EvaluationOptions,
    mopts: &MultinomialOptions,
) -> Result<Value> {
    let c = &args.common;
    let ext = c.format.ext();
    let mut summary = Table::new(vec!["d", "alpha", "replicate", "z", "counts", "d_statistic"]);
    let mut ranges = Vec::new();
    let mut cell = 0u64;
    for &d in ds {
        let fitted = fit_first_columns(sim, d, mopts)?;
        let n_sub = args
            .n_sub
            .unwrap_or_else(|| fitted.dataset.class_counts().as_slice().iter().copied().min().unwrap_or(0));
        let base = balanced_subsample(&fitted.dataset, n_sub, c.seed)?;
        base.save(&out.join(format!("base_d{d}.csv")), DataFormat::Csv)?;
        let n_target = args.n_target.unwrap_or(base.n());
        for &alpha in alphas {
            // replicate r of cell i uses seed + 1000 i + r
            let seed = c.seed.wrapping_add(1000 * cell);
            cell += 1;
            let tag = format!("d{d}_a{}", short(alpha));
            if args.run {
                let reps = experiments::skewness_replicates(&base, alpha, n_target, args.replicates, seed, eval)?;
                let dir = out.join(format!("curves_{tag}"));
                create_dir(&dir)?;
                for r in &reps {
                    summary.push(vec![json!(d), json!(alpha), json!(r.replicate), json!(r.z), json!(join_counts(&r.counts)), json!(r.d)]);
                    write_curve(&r.curve, &dir.join(format!("replicate_{}.{ext}", r.replicate)), c.format)?;
                }
                let lo = reps.iter().map(|r| r.d).fold(f64::INFINITY, f64::min);
                let hi = reps.iter().map(|r| r.d).fold(f64::NEG_INFINITY, f64::max);
                println!("d={d} alpha={alpha}: D range {:.4} ({lo:.4} to {hi:.4})", hi - lo);
                ranges.push(json!({"d": d, "alpha": alpha, "range": hi - lo}));
                let curves: Vec<(String, &RocCurve)> = reps.iter().map(|r| (String::new(), &r.curve)).collect();
                write_svg(&out.join(format!("curves_{tag}.svg")), &curves, None)?;
            } else {
                for r in 0..args.replicates {
                    let s = dirichlet_skew(&base, alpha, n_target, seed.wrapping_add(r as u64))?;
                    summary.push(vec![json!(d), json!(alpha), json!(r), json!(s.z), json!(join_counts(&s.counts)), Value::Null]);
                }
            }
        }
    }
    summary.write(&out.join(format!("replicates.{ext}")), c.format)?;
    Ok(json!({"ranges": ranges}))
}

/// Up to four decimals, trailing zeros dropped; for file names.
fn short(x: f64) -> String {
    let s = format!("{x:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn join_counts(counts: &[usize]) -> String {
    counts.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}
