use std::collections::BTreeMap;
use std::error::Error;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{debug, info};

use recal::metrics::DEFAULT_BIN_COUNT;
use recal::synth::{synth_cohort_scenario, synth_generate, synth_lossy_logits};
use recal::transforms::{brightness, zoom_out_with_fill, DEFAULT_FILL};
use recal::{
    apply_checked, fit, fit_global_temperature, group_ece_table, group_rank_analysis, load_map,
    read_logits_csv, read_tensor, save_map, write_logits_csv, write_tensor, CalibrationConfig,
    ConfidenceComparisonMode, LogitsTable, MetricsReport, PoolSpec, TemperatureFitConfig,
};

type CliResult = Result<(), Box<dyn Error>>;

#[derive(Parser)]
#[command(
    name = "recal",
    version,
    about = "Group-wise recursive temperature calibration of classifier logits"
)]
struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a calibration map on labeled validation logits.
    Calibrate(CalibrateArgs),
    /// Apply a calibration map to logits.
    Apply(ApplyArgs),
    /// Report ECE, Brier, NLL and error rate of labeled logits.
    Evaluate(EvaluateArgs),
    /// Per-group ECE of original logits against transformed logits, and group ranks.
    GroupAnalysis(GroupAnalysisArgs),
    /// Apply an image transformation to a tensor file.
    Transform(TransformArgs),
    /// Generate synthetic logits.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Print the parameters of a transformation pool.
    Pool(PoolArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Recal,
    Ts,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, value_enum, default_value = "recal")]
    method: Method,
    /// Pool as kind:low:high:count, e.g. z:0.1:0.9:20. Required for recal.
    #[arg(long)]
    pool: Option<PoolSpec>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Stop when the validation ECE moves by less than this; `inf` runs one iteration.
    #[arg(long, default_value_t = 1e-4)]
    delta: f64,
    #[arg(long, default_value_t = DEFAULT_BIN_COUNT)]
    bins: usize,
    #[arg(long, default_value = "transformed_max")]
    mode: ConfidenceComparisonMode,
    /// Labeled validation logits.
    #[arg(long)]
    val: PathBuf,
    /// Directory holding t_0.csv, t_1.csv, ... in pool order. Required for recal.
    #[arg(long)]
    val_t: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ApplyArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Directory holding t_<index>.csv; only tables the map uses are read.
    #[arg(long)]
    test_t: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Warn when the map's fingerprint differs from this value.
    #[arg(long)]
    expect_fingerprint: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    logits: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BIN_COUNT)]
    bins: usize,
    /// Write per-bin counts, confidence and accuracy as CSV.
    #[arg(long)]
    bins_out: Option<PathBuf>,
}

#[derive(Args)]
struct GroupAnalysisArgs {
    /// Labeled original logits.
    #[arg(long)]
    logits: PathBuf,
    /// Transformed logits, one file per transformation parameter.
    #[arg(long, required = true, num_args = 1..)]
    transformed: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BIN_COUNT)]
    bins: usize,
    #[arg(long, default_value = "transformed_max")]
    mode: ConfidenceComparisonMode,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ranks_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImageTransform {
    Zoom,
    Brightness,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long, value_enum)]
    kind: ImageTransform,
    /// Zoom scale or brightness factor in (0, 1].
    #[arg(long)]
    param: f64,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Value of the border left around a zoomed-out image.
    #[arg(long, default_value_t = DEFAULT_FILL)]
    fill: f32,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Dirichlet class probabilities, sampled labels, sharpened log-probability logits.
    Table {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        sharpen: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Noisy contraction of existing logits toward uniform.
    Lossy {
        #[arg(long)]
        logits: PathBuf,
        #[arg(long)]
        lossiness: f64,
        #[arg(long, default_value_t = 0.5)]
        noise_sd: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-cohort validation and test splits with transformed tables.
    Scenario {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 3.0)]
        a_sharp: f64,
        #[arg(long, default_value_t = 0.4)]
        gap: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct PoolArgs {
    #[arg(long)]
    pool: PoolSpec,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn transformed_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("t_{index}.csv"))
}

/// Fails early when an output file could not be created.
fn check_output(path: &Path) -> CliResult {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = parent {
        if !dir.is_dir() {
            return Err(format!("output directory {} does not exist", dir.display()).into());
        }
    }
    Ok(())
}

fn check_input(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(format!("{}: no such file", path.display()).into())
    }
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn calibrate(args: CalibrateArgs) -> CliResult {
    check_input(&args.val)?;
    check_output(&args.out)?;
    let config = CalibrationConfig {
        max_iterations: args.max_iters,
        stopping_delta: args.delta,
        ece_bins: args.bins,
        confidence_comparison_mode: args.mode,
    };
    config.validate()?;
    let validation = read_logits_csv(&args.val)?;
    let tc = TemperatureFitConfig::default();

    let (outcome, seconds) = match args.method {
        Method::Ts => {
            let start = Instant::now();
            let outcome = fit_global_temperature(&validation, config, tc)?;
            (outcome, start.elapsed().as_secs_f64())
        }
        Method::Recal => {
            let spec = args.pool.ok_or("--pool is required for --method recal")?;
            let dir = args
                .val_t
                .as_deref()
                .ok_or("--val-t is required for --method recal")?;
            let pool = spec.build(args.seed)?;
            let paths: Vec<_> = (0..pool.len()).map(|j| transformed_path(dir, j)).collect();
            for p in &paths {
                check_input(p)?;
            }
            let transformed = paths
                .iter()
                .map(read_logits_csv)
                .collect::<recal::Result<Vec<_>>>()?;
            info!(
                "pool {spec} seed {}: {} transformed tables",
                args.seed,
                transformed.len()
            );
            let start = Instant::now();
            let outcome = fit(&validation, &transformed, &pool, config, tc)?;
            (outcome, start.elapsed().as_secs_f64())
        }
    };
    save_map(&outcome.map, &args.out)?;
    println!("learning_time_seconds={seconds}");
    println!("iterations={}", outcome.map.iterations.len());
    println!("ece_trace={}", join_floats(&outcome.ece_trace));
    println!("fingerprint={}", outcome.map.fingerprint);
    Ok(())
}

fn apply(args: ApplyArgs) -> CliResult {
    check_input(&args.map)?;
    check_input(&args.test)?;
    check_output(&args.out)?;
    let map = load_map(&args.map)?;
    let test = read_logits_csv(&args.test)?;
    let referenced = map.referenced_transforms();
    let mut transformed = BTreeMap::new();
    if !referenced.is_empty() {
        let dir = args
            .test_t
            .as_deref()
            .ok_or("--test-t is required: the map uses transformed logits")?;
        for j in referenced {
            let path = transformed_path(dir, j);
            check_input(&path)?;
            debug!("reading {}", path.display());
            transformed.insert(j, read_logits_csv(&path)?);
        }
    }
    let calibrated = apply_checked(&test, transformed, &map, args.expect_fingerprint.as_deref())?;
    write_logits_csv(&calibrated, &args.out)?;
    println!(
        "calibrated {} samples with {} iterations",
        calibrated.sample_count(),
        map.iterations.len()
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> CliResult {
    check_input(&args.logits)?;
    if let Some(p) = &args.bins_out {
        check_output(p)?;
    }
    let table = read_logits_csv(&args.logits)?;
    let report = MetricsReport::evaluate(&table, args.bins)?;
    print!("{}", report.to_text());
    if let Some(p) = &args.bins_out {
        fs::write(p, report.bins.to_csv_string()).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    Ok(())
}

fn group_analysis(args: GroupAnalysisArgs) -> CliResult {
    check_input(&args.logits)?;
    for p in &args.transformed {
        check_input(p)?;
    }
    check_output(&args.out)?;
    if let Some(p) = &args.ranks_out {
        check_output(p)?;
    }
    let z = read_logits_csv(&args.logits)?;
    let z_t = args
        .transformed
        .iter()
        .map(read_logits_csv)
        .collect::<recal::Result<Vec<LogitsTable>>>()?;
    let rows = group_ece_table(&z, &z_t, args.bins, args.mode)?;

    let mut grid =
        String::from("transform,g1_ece,g1_count,g2_ece,g2_count,g3_ece,g3_count,g4_ece,g4_count\n");
    for (path, row) in args.transformed.iter().zip(&rows) {
        grid.push_str(&path.display().to_string());
        for g in row {
            let ece = g.ece.map(|e| e.to_string()).unwrap_or_default();
            write!(grid, ",{ece},{}", g.count).unwrap();
        }
        grid.push('\n');
    }
    fs::write(&args.out, &grid).map_err(|e| format!("{}: {e}", args.out.display()))?;
    print!("{grid}");

    // an empty group has no ECE; it ranks behind every defined one
    let eces: Vec<[f64; 4]> = rows
        .iter()
        .map(|row| row.map(|g| g.ece.unwrap_or(f64::INFINITY)))
        .collect();
    let dist = group_rank_analysis(&eces)?;
    let mut ranks = String::from("group,rank1,rank2,rank3,rank4\n");
    for (g, f) in dist.fractions.iter().enumerate() {
        writeln!(ranks, "{},{},{},{},{}", g + 1, f[0], f[1], f[2], f[3]).unwrap();
    }
    match &args.ranks_out {
        Some(p) => fs::write(p, &ranks).map_err(|e| format!("{}: {e}", p.display()))?,
        None => print!("{ranks}"),
    }
    Ok(())
}

fn transform(args: TransformArgs) -> CliResult {
    check_input(&args.input)?;
    check_output(&args.out)?;
    let images = read_tensor(&args.input)?;
    let out = match args.kind {
        ImageTransform::Zoom => zoom_out_with_fill(&images, args.param, args.fill)?,
        ImageTransform::Brightness => brightness(&images, args.param)?,
    };
    write_tensor(&out, &args.out)?;
    let [n, c, h, w] = out.dims();
    println!("wrote {n}x{c}x{h}x{w} tensor to {}", args.out.display());
    Ok(())
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn synth(cmd: SynthCommand) -> CliResult {
    match cmd {
        SynthCommand::Table {
            n,
            k,
            alpha,
            sharpen,
            seed,
            out,
        } => {
            check_output(&out)?;
            write_logits_csv(&synth_generate(n, k, alpha, sharpen, seed)?, &out)?;
        }
        SynthCommand::Lossy {
            logits,
            lossiness,
            noise_sd,
            seed,
            out,
        } => {
            check_input(&logits)?;
            check_output(&out)?;
            let z = read_logits_csv(&logits)?;
            write_logits_csv(&synth_lossy_logits(&z, lossiness, noise_sd, seed)?, &out)?;
        }
        SynthCommand::Scenario {
            n,
            k,
            a_sharp,
            gap,
            seed,
            out_dir,
        } => {
            let s = synth_cohort_scenario(n, k, a_sharp, gap, seed)?;
            for (split, z, zt, cohort) in [
                (
                    "val",
                    &s.validation,
                    &s.validation_transformed,
                    &s.descriptor.validation_cohort,
                ),
                (
                    "test",
                    &s.test,
                    &s.test_transformed,
                    &s.descriptor.test_cohort,
                ),
            ] {
                let t_dir = out_dir.join(format!("{split}_t"));
                create_dir(&t_dir)?;
                write_logits_csv(z, out_dir.join(format!("{split}.csv")))?;
                for (j, t) in zt.iter().enumerate() {
                    write_logits_csv(t, transformed_path(&t_dir, j))?;
                }
                let mut text = String::from("cohort\n");
                for &a in cohort.iter() {
                    text.push_str(if a { "a\n" } else { "b\n" });
                }
                let path = out_dir.join(format!("{split}_cohorts.csv"));
                fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            let pool = &s.descriptor.pool;
            let (lo, hi) = pool.range();
            println!(
                "pool={}:{lo}:{hi}:{} seed={seed}",
                pool.kind().code(),
                pool.len()
            );
        }
    }
    Ok(())
}

fn pool(args: PoolArgs) -> CliResult {
    let pool = args.pool.build(args.seed)?;
    println!("index,kind,parameter");
    for (j, spec) in pool.entries().iter().enumerate() {
        println!("{j},{},{}", spec.kind(), spec.parameter());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let result = match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Apply(a) => apply(a),
        Command::Evaluate(a) => evaluate(a),
        Command::GroupAnalysis(a) => group_analysis(a),
        Command::Transform(a) => transform(a),
        Command::Synth(c) => synth(c),
        Command::Pool(a) => pool(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
