//! Thin command-line wrapper around the library: scene generation,
//! degradation pools, single solves, metric reports, benchmark sweeps, and
//! correlation studies. Every subcommand maps onto one library entry point;
//! all heavy lifting lives in the crate.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use depthvis::geometry::{normals_from_depth, render, LightRig, NormalModel};
use depthvis::harness::{
    compute_report, correlation_report, degradation_pool, degradation_study, run_benchmark,
    run_method, scatter_plot, write_correlation_csv, write_scatter_csv, MethodConfig, RunConfig,
    METRIC_IDS, STUDY_KEYS,
};
use depthvis::io::{self, DepthFormat};
use depthvis::resample::ResampleModel;
use depthvis::scenegen::{self, SceneSpec};
use depthvis::superres::add_multiplicative_noise;
use depthvis::{DepthKind, DepthMap};

#[derive(Parser)]
#[command(
    name = "depthvis",
    version,
    about = "Rendering-space depth-map metrics, a variational super-resolver, and a benchmark harness"
)]
struct Cli {
    /// Worker threads for sweeps (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene's ground-truth depth map.
    Gen(GenArgs),
    /// Derive deterministic degraded copies of a depth map.
    Degrade(DegradeArgs),
    /// Super-resolve one low-resolution depth map.
    Solve(SolveArgs),
    /// Score a reconstruction against a reference map.
    Metrics(MetricsArgs),
    /// Run a benchmark sweep described by a config file.
    Bench(BenchArgs),
    /// Correlate candidate metrics against a reference over a degradation
    /// study.
    Correlate(CorrelateArgs),
}

#[derive(Copy, Clone, ValueEnum)]
enum KindArg {
    Disparity,
    Orthogonal,
    Perspective,
}

impl From<KindArg> for DepthKind {
    fn from(k: KindArg) -> DepthKind {
        match k {
            KindArg::Disparity => DepthKind::Disparity,
            KindArg::Orthogonal => DepthKind::OrthogonalDepth,
            KindArg::Perspective => DepthKind::PerspectiveDepth,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum ModelArg {
    Box,
    Nearest,
}

impl From<ModelArg> for ResampleModel {
    fn from(m: ModelArg) -> ResampleModel {
        match m {
            ModelArg::Box => ResampleModel::Box,
            ModelArg::Nearest => ResampleModel::Nearest,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum MethodArg {
    Bicubic,
    #[value(name = "var_mse")]
    VarMse,
    #[value(name = "var_visual")]
    VarVisual,
}

#[derive(Args)]
struct GenArgs {
    /// JSON file holding the scene description.
    #[arg(long)]
    config: PathBuf,
    /// Output depth map; format inferred from the extension (pfm, pgm, csv).
    #[arg(long)]
    out: PathBuf,
    /// Optional shaded preview (8-bit PGM) under the rig's extra light.
    #[arg(long)]
    preview: Option<PathBuf>,
}

#[derive(Args)]
struct DegradeArgs {
    /// Input depth map.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for the degraded variants.
    #[arg(long)]
    out: PathBuf,
    /// How the input values are interpreted.
    #[arg(long, value_enum, default_value = "orthogonal")]
    kind: KindArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scales every degradation amplitude; 0 reproduces the input.
    #[arg(long, default_value_t = 1.0)]
    strength: f64,
    /// Instead of the full pool, write a single multiplicative-noise
    /// variant with this relative sigma.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct SolveArgs {
    /// Low-resolution input depth map.
    #[arg(long)]
    input: PathBuf,
    /// Super-resolution factor (>= 2).
    #[arg(long)]
    factor: usize,
    #[arg(long, value_enum, default_value = "var_visual")]
    method: MethodArg,
    /// Downsampling operator assumed to have produced the input.
    #[arg(long, value_enum, default_value = "box")]
    model: ModelArg,
    #[arg(long, value_enum, default_value = "orthogonal")]
    kind: KindArg,
    /// Optional guidance image at output resolution.
    #[arg(long)]
    guide: Option<PathBuf>,
    /// Smoothness weight; defaults depend on the method.
    #[arg(long)]
    lambda: Option<f64>,
    /// Pyramid levels for var_visual.
    #[arg(long)]
    levels: Option<usize>,
    /// Visual-weight multiplier for var_visual.
    #[arg(long)]
    boost: Option<f64>,
    /// Disable the bicubic self-guide when no guide image is given.
    #[arg(long)]
    no_self_guide: bool,
    /// Evaluation budget for the optimizer.
    #[arg(long)]
    budget: Option<usize>,
    /// Relative step tolerance that ends the optimizer's scale ladder.
    #[arg(long)]
    tol: Option<f64>,
    /// Output depth map.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV with the accepted optimizer states.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Reconstruction to score.
    #[arg(long)]
    input: PathBuf,
    /// Ground-truth reference.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, value_enum, default_value = "orthogonal")]
    kind: KindArg,
    /// Comma-separated metric ids; defaults to all of them.
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<String>,
    /// Optional CSV copy of the report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark run config (JSON). Manifest paths resolve against this
    /// file's directory.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Benchmark run config (JSON); supplies the scenes, light rig, seed,
    /// and default output directory.
    #[arg(long)]
    config: PathBuf,
    /// Reference metric the candidates are ranked against.
    #[arg(long, default_value = "dssim_v_max")]
    reference: String,
    /// Comma-separated candidate metrics.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "rmse_d,rmse_v,rmse_v1_max,badpix_v_max,bumpiness"
    )]
    candidates: Vec<String>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also render one scatter plot (PGM) per candidate.
    #[arg(long)]
    plot: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::FAILURE;
        }
        // First global initialization wins; a failure here means the pool
        // already exists, which is fine.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Gen(args) => gen(args),
        Command::Degrade(args) => degrade(args),
        Command::Solve(args) => solve_one(args),
        Command::Metrics(args) => metrics_report(args),
        Command::Bench(args) => bench(args),
        Command::Correlate(args) => correlate(args),
    }
}

fn load_map(path: &Path, kind: DepthKind) -> Result<DepthMap> {
    let format = DepthFormat::from_path(path)?;
    io::load_depth_as(path, format, kind)
        .with_context(|| format!("loading {}", path.display()))
}

fn save_map(map: &DepthMap, path: &Path) -> Result<()> {
    let format = DepthFormat::from_path(path)?;
    io::save_depth(map, path, format).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn gen(args: GenArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let spec: SceneSpec = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.config.display()))?;
    let map = scenegen::generate(&spec)?;
    save_map(&map, &args.out)?;
    println!(
        "generated {} ({}x{}) -> {}",
        spec.kind.id(),
        map.width(),
        map.height(),
        args.out.display()
    );
    if let Some(preview) = &args.preview {
        let normals = normals_from_depth(&map, NormalModel::height_field())?;
        let shaded = render(&normals, LightRig::default().extra())?;
        io::save_rendering(&shaded, preview)?;
        println!("preview -> {}", preview.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn degrade(args: DegradeArgs) -> Result<ExitCode> {
    let map = load_map(&args.input, args.kind.into())?;
    let ext = args
        .input
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("pfm")
        .to_string();
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    match args.sigma {
        Some(sigma) => {
            let noisy = add_multiplicative_noise(&map, sigma, args.seed)?;
            let path = args.out.join(format!("noisy.{ext}"));
            save_map(&noisy, &path)?;
            println!("sigma {sigma} -> {}", path.display());
        }
        None => {
            let pool = degradation_pool(&map, args.seed, args.strength)?;
            for variant in &pool {
                let path = args.out.join(format!("{}.{ext}", variant.label));
                save_map(&variant.map, &path)?;
                println!("{} -> {}", variant.label, path.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Builds the method's default parameter set, then applies flag overrides.
/// Deserializing from the bare tag keeps the defaults in one place.
fn method_from_args(args: &SolveArgs) -> Result<MethodConfig> {
    let tag = match args.method {
        MethodArg::Bicubic => "bicubic",
        MethodArg::VarMse => "var_mse",
        MethodArg::VarVisual => "var_visual",
    };
    let mut method: MethodConfig =
        serde_json::from_value(serde_json::json!({ "method": tag }))?;
    match &mut method {
        MethodConfig::Bicubic => {
            if args.lambda.is_some()
                || args.levels.is_some()
                || args.boost.is_some()
                || args.budget.is_some()
                || args.tol.is_some()
            {
                bail!("bicubic takes no solver parameters");
            }
        }
        MethodConfig::VarMse {
            smoothness_lambda,
            budget,
            tol,
        } => {
            if args.levels.is_some() || args.boost.is_some() {
                bail!("--levels and --boost only apply to var_visual");
            }
            if let Some(v) = args.lambda {
                *smoothness_lambda = v;
            }
            if let Some(v) = args.budget {
                *budget = v;
            }
            if let Some(v) = args.tol {
                *tol = v;
            }
        }
        MethodConfig::VarVisual {
            smoothness_lambda,
            levels,
            render_weight_boost,
            self_guide,
            budget,
            tol,
        } => {
            if let Some(v) = args.lambda {
                *smoothness_lambda = v;
            }
            if let Some(v) = args.levels {
                *levels = v;
            }
            if let Some(v) = args.boost {
                *render_weight_boost = v;
            }
            if let Some(v) = args.budget {
                *budget = v;
            }
            if let Some(v) = args.tol {
                *tol = v;
            }
            *self_guide = !args.no_self_guide;
        }
    }
    Ok(method)
}

fn solve_one(args: SolveArgs) -> Result<ExitCode> {
    let low_res = load_map(&args.input, args.kind.into())?;
    let guide = match &args.guide {
        Some(path) => {
            let format = DepthFormat::from_path(path)?;
            let (grid, _) = io::read_grid(path, format)?;
            Some(grid)
        }
        None => None,
    };
    let method = method_from_args(&args)?;
    let rig = LightRig::default();
    let (sr, trace) = run_method(
        &low_res,
        args.factor,
        args.model.into(),
        &method,
        guide.as_ref(),
        &rig,
    )?;
    save_map(&sr, &args.out)?;
    println!(
        "{} x{} ({}x{} -> {}x{}) -> {}",
        method.id(),
        args.factor,
        low_res.width(),
        low_res.height(),
        sr.width(),
        sr.height(),
        args.out.display()
    );
    if let Some(trace_path) = &args.trace {
        match trace {
            Some(trace) => {
                let file = fs::File::create(trace_path)
                    .with_context(|| format!("creating {}", trace_path.display()))?;
                trace.write_csv(file)?;
                println!(
                    "trace ({} records) -> {}",
                    trace.records.len(),
                    trace_path.display()
                );
            }
            None => bail!("{} produces no trace", method.id()),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn metrics_report(args: MetricsArgs) -> Result<ExitCode> {
    let input = load_map(&args.input, args.kind.into())?;
    let reference = load_map(&args.reference, args.kind.into())?;
    let ids: Vec<String> = if args.metrics.is_empty() {
        METRIC_IDS.iter().map(|s| s.to_string()).collect()
    } else {
        args.metrics.clone()
    };
    let scene = args
        .input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("input")
        .to_string();
    let report = compute_report(&scene, "cli", &input, &reference, &LightRig::default(), &ids)?;
    println!("metric,label,value");
    for (metric, label, value) in report.iter() {
        println!("{metric},{label},{value}");
    }
    if let Some(out) = &args.out {
        let mut text = String::from("metric,label,value\n");
        for (metric, label, value) in report.iter() {
            text.push_str(&format!("{metric},{label},{value}\n"));
        }
        fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn bench(args: BenchArgs) -> Result<ExitCode> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    let base_dir = args
        .config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let outcome = run_benchmark(&config, &base_dir)?;
    let ok = outcome.rows.iter().filter(|r| r.is_ok()).count();
    println!(
        "{ok}/{} combinations ok -> {}",
        outcome.rows.len(),
        outcome.csv_path.display()
    );
    for row in outcome.rows.iter().filter(|r| !r.is_ok()) {
        eprintln!(
            "failed: scene={} method={} factor={} downsampler={}: {}",
            row.scene_id,
            row.method_id,
            row.factor,
            row.model.name(),
            row.status
        );
    }
    if outcome.all_ok() {
        Ok(ExitCode::SUCCESS)
    } else {
        // Partial failure: results were written but at least one
        // combination did not succeed.
        Ok(ExitCode::from(2))
    }
}

fn correlate(args: CorrelateArgs) -> Result<ExitCode> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    let known = |id: &String| STUDY_KEYS.contains(&id.as_str());
    if !known(&args.reference) {
        bail!("unknown reference metric {:?}; known: {STUDY_KEYS:?}", args.reference);
    }
    if let Some(bad) = args.candidates.iter().find(|c| !known(c)) {
        bail!("unknown candidate metric {bad:?}; known: {STUDY_KEYS:?}");
    }
    let base_dir = args
        .config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let points = degradation_study(&config.scenes, &config.rig, config.seed, &base_dir)?;
    let rows = correlation_report(&points, &args.reference, &args.candidates)?;
    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;
    let corr_path = config.output_dir.join("correlation.csv");
    let scatter_path = config.output_dir.join("scatter.csv");
    write_correlation_csv(&rows, &corr_path)?;
    write_scatter_csv(&points, &args.reference, &args.candidates, &scatter_path)?;
    println!(
        "{} points over {} scenes; reference {}",
        points.len(),
        config.scenes.len(),
        args.reference
    );
    println!("metric,points,pearson,spearman");
    for row in &rows {
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "undefined".into());
        println!(
            "{},{},{},{}",
            row.metric,
            row.points,
            fmt(row.pearson),
            fmt(row.spearman)
        );
    }
    println!("-> {} and {}", corr_path.display(), scatter_path.display());
    if args.plot {
        for candidate in &args.candidates {
            let plot = scatter_plot(&points, candidate, &args.reference, 256)?;
            let path = config
                .output_dir
                .join(format!("scatter_{candidate}_vs_{}.pgm", args.reference));
            io::save_rendering(&plot, &path)?;
            println!("plot -> {}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
