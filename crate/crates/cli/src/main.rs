mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use hsi_core::denoise::{denoise_tensor, DenoiseParams};
use hsi_core::io;
use hsi_core::pipeline::{
    classify_argmax, compute_metrics, cross_validate, grid, misclassification_heatmap, run_two_stage, stratified_split,
    RunConfig, SplitRule, SplitSource,
};
use hsi_core::svm::{predict_tensor, train_multiclass_with, KernelSpec, TrainOptions};
use hsi_core::synthetic::{generate_scene, SceneSpec};
use hsi_core::{normalize_cube, HsiError, HyperCube, LabelMap};

#[derive(Parser, Debug)]
#[command(name = "hsi", version, about = "Two-stage hyperspectral image classifier")]
struct Cli {
    /// File of `key = value` lines used as defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "HSI_THREADS")]
    threads: Option<usize>,
    /// Treat a denoiser that hits its iteration cap as a failure.
    #[arg(long, global = true)]
    strict: bool,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a stratified training/testing split.
    Split(SplitArgs),
    /// Grid search over (nu, sigma) by cross-validation on the training pixels.
    Cv(CvArgs),
    /// Train the pairwise SVM model.
    Train(TrainArgs),
    /// Stage 1: per-pixel class probabilities from a trained model.
    Predict(PredictArgs),
    /// Stage 2: denoise a probability tensor and take the argmax.
    Denoise(DenoiseArgs),
    /// Both stages over one or more runs, with metrics and heatmaps.
    Classify(ClassifyArgs),
    /// Accuracy metrics of a label map on the testing pixels of a split.
    Metrics(MetricsArgs),
    /// Per-pixel count of misclassifications across runs.
    Heatmap(HeatmapArgs),
    /// Write a synthetic piecewise-constant scene.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct SplitSel {
    /// Training counts per class, as a `class,count` CSV.
    #[arg(long, value_name = "CSV", group = "rule")]
    per_class_counts: Option<PathBuf>,
    /// Training percentage of each class.
    #[arg(long, group = "rule")]
    percent: Option<f64>,
}

impl SplitSel {
    fn rule(&self) -> Result<Option<SplitRule>> {
        Ok(match (&self.per_class_counts, self.percent) {
            (Some(path), _) => Some(SplitRule::Counts(io::read_counts_csv(path)?)),
            (None, Some(p)) => Some(SplitRule::Percentage(p)),
            (None, None) => None,
        })
    }
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    sel: SplitSel,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    split: PathBuf,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
    nus: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2,4")]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = hsi_core::pipeline::DEFAULT_FOLDS)]
    folds: usize,
    /// Write every grid point's accuracy here.
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    nu: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Probability tensor output.
    #[arg(long)]
    out: PathBuf,
    /// Also write the argmax label map.
    #[arg(long, value_name = "HSL")]
    pred: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct DenoiseFlags {
    #[arg(long, default_value_t = 0.3)]
    beta1: f64,
    #[arg(long, default_value_t = 3.0)]
    beta2: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
}

impl DenoiseFlags {
    fn params(&self) -> DenoiseParams {
        DenoiseParams {
            beta1: self.beta1,
            beta2: self.beta2,
            mu: self.mu,
            tol: self.tol,
            max_iters: self.max_iters,
        }
    }
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    /// Stage-1 probability tensor.
    #[arg(long)]
    prob: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Split whose training pixels stay pinned.
    #[arg(long)]
    split: PathBuf,
    #[command(flatten)]
    params: DenoiseFlags,
    /// Denoised probability tensor.
    #[arg(long)]
    out: PathBuf,
    /// Argmax label map of the denoised tensor.
    #[arg(long, value_name = "HSL")]
    pred: Option<PathBuf>,
    /// Per-class convergence report.
    #[arg(long, value_name = "CSV")]
    diagnostics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Fixed split used by every run.
    #[arg(long, conflicts_with_all = ["per_class_counts", "percent"])]
    split: Option<PathBuf>,
    #[command(flatten)]
    sel: SplitSel,
    /// Base seed; run r draws its split with seed + r.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    nu: f64,
    #[arg(long)]
    sigma: f64,
    #[command(flatten)]
    params: DenoiseFlags,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Execute runs concurrently.
    #[arg(long)]
    parallel_runs: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    split: PathBuf,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[arg(long)]
    truth: PathBuf,
    /// Label map of one run; repeat once per run.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// Split of the matching run, in the same order as `--pred`.
    #[arg(long, required = true)]
    split: Vec<PathBuf>,
    /// PGM output.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_name = "CSV")]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    bands: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    regions: usize,
    #[arg(long, default_value_t = 0.25)]
    separation: f64,
    #[arg(long, default_value_t = 0.25)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    labels: PathBuf,
}

/// Bad flag combinations or config files.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// The denoiser stopped at its iteration cap under `--strict`.
#[derive(Debug)]
struct Unconverged(String);

impl fmt::Display for Unconverged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "denoiser did not converge: {}", self.0)
    }
}

impl std::error::Error for Unconverged {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<Unconverged>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<HsiError>() {
            return match e {
                HsiError::InvalidParameter(_) | HsiError::InfeasibleNu { .. } => 1,
                e if e.is_numerical() => 3,
                _ => 2,
            };
        }
    }
    2
}

const SUBCOMMANDS: &[&str] = &[
    "split", "cv", "train", "predict", "denoise", "classify", "metrics", "heatmap", "synth",
];

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::expand(argv, SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::command()
        .args_override_self(true)
        .try_get_matches_from(argv)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }

    match run(cli.command, cli.strict) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command, strict: bool) -> Result<()> {
    match command {
        Command::Split(a) => split(a),
        Command::Cv(a) => cv(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Denoise(a) => denoise(a, strict),
        Command::Classify(a) => classify(a, strict),
        Command::Metrics(a) => metrics(a),
        Command::Heatmap(a) => heatmap(a),
        Command::Synth(a) => synth(a),
    }
}

fn read_labels(path: &Path) -> Result<LabelMap> {
    io::read_labels(path).with_context(|| format!("reading labels {}", path.display()))
}

/// Reads the cube, normalizing it unless the file says it already is.
fn read_cube(path: &Path) -> Result<HyperCube> {
    let cube = io::read_cube(path).with_context(|| format!("reading cube {}", path.display()))?;
    if cube.normalized {
        Ok(cube)
    } else {
        Ok(normalize_cube(&cube)?)
    }
}

fn load(data: &DataArgs) -> Result<(HyperCube, LabelMap, hsi_core::SplitSpec)> {
    let cube = read_cube(&data.cube)?;
    let labels = read_labels(&data.labels)?;
    if cube.height != labels.height || cube.width != labels.width {
        return Err(HsiError::Dimension(format!(
            "cube is {}x{}, labels {}x{}",
            cube.height, cube.width, labels.height, labels.width
        ))
        .into());
    }
    let split = io::read_split(&data.split, &labels).with_context(|| format!("reading split {}", data.split.display()))?;
    Ok((cube, labels, split))
}

fn split(a: SplitArgs) -> Result<()> {
    let labels = read_labels(&a.labels)?;
    let rule = a
        .sel
        .rule()?
        .ok_or_else(|| UsageError("give --per-class-counts or --percent".into()))?;
    let split = stratified_split(&labels, &rule, a.seed)?;
    io::write_split(&a.out, &split)?;
    println!("training={} testing={}", split.training.len(), split.testing.len());
    Ok(())
}

fn cv(a: CvArgs) -> Result<()> {
    let (cube, _, split) = load(&a.data)?;
    let points = grid(&a.nus, &a.sigmas);
    let report = cross_validate(&cube, &split, &points, a.folds, &TrainOptions::default())?;
    if let Some(path) = &a.out {
        let mut csv = String::from("nu,sigma,accuracy\n");
        for s in &report.scores {
            let acc = s.accuracy.map_or(String::new(), |v| format!("{v}"));
            csv.push_str(&format!("{},{},{}\n", s.point.nu, s.point.sigma, acc));
        }
        io::write_atomic(path, csv.as_bytes())?;
    }
    println!(
        "nu={} sigma={} accuracy={:.4} folds={}",
        report.best.nu, report.best.sigma, report.best_accuracy, report.folds
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let (cube, _, split) = load(&a.data)?;
    let kernel = KernelSpec::rbf(a.sigma)?;
    let model = train_multiclass_with(&cube, &split, a.nu, &kernel, &TrainOptions::default())?;
    io::write_model(&a.out, &model)?;
    let svs: usize = model.pairs.iter().map(|p| p.num_sv()).sum();
    println!("classes={} pairs={} support_vectors={svs}", model.num_classes, model.pairs.len());
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let (cube, _, split) = load(&a.data)?;
    let model = io::read_model(&a.model).with_context(|| format!("reading model {}", a.model.display()))?;
    let tensor = predict_tensor(&model, &cube, &split)?.quantized();
    io::write_probabilities(&a.out, &tensor)?;
    if let Some(path) = &a.pred {
        io::write_labels(path, &classify_argmax(&tensor)?)?;
    }
    Ok(())
}

fn denoise(a: DenoiseArgs, strict: bool) -> Result<()> {
    let tensor = io::read_probabilities(&a.prob).with_context(|| format!("reading {}", a.prob.display()))?;
    let labels = read_labels(&a.labels)?;
    if tensor.height != labels.height || tensor.width != labels.width {
        return Err(HsiError::Dimension(format!(
            "tensor is {}x{}, labels {}x{}",
            tensor.height, tensor.width, labels.height, labels.width
        ))
        .into());
    }
    let split = io::read_split(&a.split, &labels)?;
    let mask = split.training_mask(labels.height, labels.width);
    let (out, diagnostics) = denoise_tensor(&tensor, &mask, &a.params.params())?;
    io::write_probabilities(&a.out, &out)?;
    if let Some(path) = &a.pred {
        io::write_labels(path, &classify_argmax(&out)?)?;
    }
    if let Some(path) = &a.diagnostics {
        let mut csv = String::from("class,iterations,converged,objective,relative_change,primal_residual\n");
        for (k, d) in diagnostics.per_class.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                k + 1,
                d.iterations,
                d.converged,
                d.objective,
                d.relative_change,
                d.primal_residual
            ));
        }
        io::write_atomic(path, csv.as_bytes())?;
    }
    let stalled = diagnostics.unconverged_classes();
    if strict && !stalled.is_empty() {
        return Err(Unconverged(format!("classes {stalled:?}")).into());
    }
    Ok(())
}

fn classify(a: ClassifyArgs, strict: bool) -> Result<()> {
    let cube = read_cube(&a.cube)?;
    let labels = read_labels(&a.labels)?;
    let source = match (&a.split, a.sel.rule()?) {
        (Some(path), _) => SplitSource::Fixed(io::read_split(path, &labels)?),
        (None, Some(rule)) => SplitSource::Random(rule),
        (None, None) => {
            return Err(UsageError("give --split, --per-class-counts or --percent".into()).into());
        }
    };
    let mut config = RunConfig::new(a.nu, a.sigma, source);
    config.denoise = a.params.params();
    config.base_seed = a.seed;
    config.runs = a.runs;
    config.parallel_runs = a.parallel_runs;
    let report = run_two_stage(&cube, &labels, &config, a.out.as_deref())?;
    for stage in [1, 2] {
        let (oa, aa, kappa) = (report.oa(stage), report.aa(stage), report.kappa(stage));
        println!(
            "stage{stage} oa={:.4}±{:.4} aa={:.4}±{:.4} kappa={:.4}±{:.4}",
            oa.mean, oa.std, aa.mean, aa.std, kappa.mean, kappa.std
        );
    }
    if strict && !report.all_converged() {
        let runs: Vec<usize> = report.runs.iter().filter(|r| !r.denoise_converged).map(|r| r.run).collect();
        return Err(Unconverged(format!("runs {runs:?}")).into());
    }
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let pred = read_labels(&a.pred)?;
    let truth = read_labels(&a.truth)?;
    let split = io::read_split(&a.split, &truth)?;
    let report = compute_metrics(&pred, &truth, &split.testing)?;
    println!("oa={:.4} aa={:.4} kappa={:.4}", report.oa, report.aa, report.kappa);
    for (k, acc) in report.per_class.iter().enumerate() {
        if let Some(acc) = acc {
            log::info!("class {}: {acc:.4}", k + 1);
        }
    }
    Ok(())
}

fn heatmap(a: HeatmapArgs) -> Result<()> {
    if a.pred.len() != a.split.len() {
        return Err(UsageError(format!("{} --pred but {} --split", a.pred.len(), a.split.len())).into());
    }
    let truth = read_labels(&a.truth)?;
    let mut runs = Vec::with_capacity(a.pred.len());
    for (p, s) in a.pred.iter().zip(&a.split) {
        runs.push((read_labels(p)?, io::read_split(s, &truth)?));
    }
    let refs: Vec<(&LabelMap, &[hsi_core::LabeledPixel])> =
        runs.iter().map(|(p, s)| (p, s.testing.as_slice())).collect();
    let map = misclassification_heatmap(&truth, &refs)?;
    io::write_atomic(&a.out, &map.to_pgm()?)?;
    if let Some(path) = &a.csv {
        io::write_atomic(path, map.to_csv().as_bytes())?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SceneSpec {
        height: a.height,
        width: a.width,
        bands: a.bands,
        num_classes: a.classes,
        regions: a.regions,
        separation: a.separation,
        noise: a.noise,
        seed: a.seed,
    };
    let (cube, labels) = generate_scene(&spec)?;
    io::write_cube(&a.cube, &cube)?;
    io::write_labels(&a.labels, &labels)?;
    Ok(())
}
