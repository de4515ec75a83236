use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use blindkernel::dataset::{self, BenchmarkOptions};
use blindkernel::eval::{self, EvalOptions};
use blindkernel::generator::GeneratorKind;
use blindkernel::image::{self, ImagePlane};
use blindkernel::kernel::{self, Kernel};
use blindkernel::trainer::{self, TrainConfig};
use blindkernel::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

// Training churns through many short-lived half-megabyte buffers; the
// system allocator keeps returning them to the OS.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const THREADS_ENV: &str = "BLINDKERNEL_THREADS";

#[derive(Parser, Debug)]
#[command(name = "blindkernel", version, about = "Estimate the SR downscaling kernel of a single image")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the ×2 and ×4 kernels of one image.
    Estimate(EstimateArgs),
    /// Build a random-kernel benchmark from a directory of images.
    MakeDataset(MakeDatasetArgs),
    /// Run estimation on every benchmark entry and score the kernels.
    Evaluate(EvaluateArgs),
    /// Derive a ×4 kernel from a ×2 kernel file.
    DeriveScale(DeriveScaleArgs),
    /// Write the procedural ten-image test corpus.
    MiniCorpus(MiniCorpusArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct TrainOverrides {
    /// JSON file with training settings; flags take precedence.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    iterations: Option<usize>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Also write intermediate kernels every N iterations.
    #[arg(long, value_name = "N")]
    checkpoint_every: Option<usize>,
    #[arg(long, value_enum)]
    generator: Option<GeneratorArg>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum GeneratorArg {
    Deep,
    SingleLayer,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Input image (PNG/JPEG/BMP, or `.raw` float plane).
    image: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Scale of the primary kernel reported in the manifest.
    #[arg(long, default_value_t = 2, value_parser = parse_scale)]
    scale: usize,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Args, Debug)]
struct MakeDatasetArgs {
    corpus: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = parse_scale)]
    scale: usize,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplicative kernel noise amplitude in [0, 0.25].
    #[arg(long, default_value_t = dataset::DEFAULT_NOISE)]
    noise: f64,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Shave `scale` pixels from each border before the kernel PSNR.
    #[arg(long)]
    border_crop: bool,
    /// Skip loss-trace and kernel heat-map images.
    #[arg(long)]
    no_plots: bool,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Args, Debug)]
struct DeriveScaleArgs {
    kernel: PathBuf,
    /// Output file; `.raw` writes raw floats, anything else text.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MiniCorpusArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_scale(s: &str) -> Result<usize, String> {
    match s {
        "2" => Ok(2),
        "4" => Ok(4),
        _ => Err(format!("scale must be 2 or 4, got `{s}`")),
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Divergence { .. }) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
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

    let result = configure_threads().and_then(|_| match cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::MakeDataset(a) => cmd_make_dataset(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::DeriveScale(a) => cmd_derive_scale(a),
        Command::MiniCorpus(a) => cmd_mini_corpus(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}

/// Defaults, then the config file, then explicit flags.
fn resolve_config(o: &TrainOverrides) -> CliResult<(TrainConfig, serde_json::Value)> {
    let mut cfg = match &o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str::<TrainConfig>(&text).map_err(|e| Error::Parse {
                what: path.display().to_string(),
                message: e.to_string(),
            })?
        }
        None => TrainConfig::default(),
    };
    let mut echo = serde_json::Map::new();
    if let Some(p) = &o.config {
        echo.insert("config".into(), json!(p));
    }
    if let Some(n) = o.iterations {
        cfg.iterations = n;
        echo.insert("iterations".into(), json!(n));
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
        echo.insert("seed".into(), json!(s));
    }
    if let Some(n) = o.checkpoint_every {
        cfg.checkpoint_every = n;
        echo.insert("checkpoint_every".into(), json!(n));
    }
    if let Some(g) = o.generator {
        cfg.generator = match g {
            GeneratorArg::Deep => GeneratorKind::Deep,
            GeneratorArg::SingleLayer => GeneratorKind::SingleLayer,
        };
        echo.insert("generator".into(), json!(cfg.generator));
    }
    cfg.validate()?;
    Ok((cfg, serde_json::Value::Object(echo)))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| {
        Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    std::fs::write(path, text).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn load_input(path: &Path) -> CliResult<ImagePlane> {
    if !path.exists() {
        return Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        }
        .into());
    }
    let is_raw = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("raw"));
    Ok(if is_raw {
        ImagePlane::read_raw(path)?
    } else {
        image::load_image(path, true)?
    })
}

fn cmd_estimate(a: EstimateArgs) -> CliResult<()> {
    let (cfg, overrides) = resolve_config(&a.train)?;
    let img = load_input(&a.image)?;
    create_dir(&a.out)?;
    let checkpoint_dir = a.out.join("checkpoints");
    if a.train.checkpoint_every.is_some() {
        create_dir(&checkpoint_dir)?;
    }
    let start = Instant::now();
    let outcome = trainer::estimate_kernel_with(&img, &cfg, |c| {
        if a.train.checkpoint_every.is_some() {
            c.kernel
                .save(checkpoint_dir.join(format!("kernel_iter{:05}.txt", c.iteration)))?;
        }
        log::info!("iteration {}: g {:.4} d {:.4}", c.iteration, c.last.g_loss, c.last.d_loss);
        Ok(())
    });
    let res = match outcome {
        Ok(r) => r,
        Err(Error::Divergence { iteration, trace }) => {
            trainer::write_loss_trace(&trace, &a.out.join("loss_trace.csv"))?;
            return Err(Error::Divergence { iteration, trace }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let runtime = start.elapsed().as_secs_f64();
    res.kernel_x2.save(a.out.join("kernel_x2.txt"))?;
    res.kernel_x4.save(a.out.join("kernel_x4.txt"))?;
    res.kernel_x2.save(a.out.join("kernel_x2.raw"))?;
    res.kernel_x4.save(a.out.join("kernel_x4.raw"))?;
    res.raw_kernel.save(a.out.join("kernel_x2_unprocessed.txt"))?;
    trainer::write_loss_trace(&res.loss_trace, &a.out.join("loss_trace.csv"))?;
    let last = res.loss_trace.last().copied();
    write_json(
        &a.out.join("manifest.json"),
        &json!({
            "command": "estimate",
            "version": env!("CARGO_PKG_VERSION"),
            "input": a.image,
            "input_dims": img.dims(),
            "scale": a.scale,
            "primary_kernel": if a.scale == 4 { "kernel_x4.txt" } else { "kernel_x2.txt" },
            "seed": res.seed,
            "config": cfg,
            "overrides": overrides,
            "iterations_run": res.iterations_run,
            "final_losses": last,
            "final_regularization": res.final_regularization,
            "runtime_seconds": runtime,
        }),
    )?;
    println!(
        "wrote kernels to {} ({} iterations, {:.1} s)",
        a.out.display(),
        res.iterations_run,
        runtime
    );
    Ok(())
}

fn cmd_make_dataset(a: MakeDatasetArgs) -> CliResult<()> {
    let opts = BenchmarkOptions {
        scale: a.scale,
        count: a.count,
        seed: a.seed,
        noise_amplitude: a.noise,
    };
    let m = dataset::make_benchmark(&a.corpus, &a.out, &opts)?;
    println!(
        "wrote {} entries to {}",
        m.entries.len(),
        a.out.join("manifest.json").display()
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let (cfg, overrides) = resolve_config(&a.train)?;
    let manifest = dataset::load_benchmark(&a.manifest)?;
    create_dir(&a.out)?;
    let opts = EvalOptions {
        border_crop: a.border_crop,
        skip_plots: a.no_plots,
    };
    let report = eval::evaluate_benchmark(&a.manifest, &manifest, &cfg, &a.out, &opts)?;
    write_json(&a.out.join("overrides.json"), &overrides)?;
    let agg = &report.aggregates;
    match (&agg.kernel_l1, &agg.kernel_psnr) {
        (Some(l1), Some(p)) => println!(
            "{} entries, {} failed; kernel L1 median {:.4}, kernel PSNR median {:.2} dB",
            report.rows.len(),
            agg.failures,
            l1.median,
            p.median
        ),
        _ => println!("{} entries, all failed", report.rows.len()),
    }
    Ok(())
}

fn cmd_derive_scale(a: DeriveScaleArgs) -> CliResult<()> {
    let k2 = Kernel::load(&a.kernel)?;
    let k4 = kernel::compose_scale(&k2)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    k4.save(&a.out)?;
    let (h, w) = k4.dims();
    println!("wrote {h}×{w} kernel to {}", a.out.display());
    Ok(())
}

fn cmd_mini_corpus(a: MiniCorpusArgs) -> CliResult<()> {
    let paths = dataset::write_mini_corpus(&a.out, a.seed)?;
    println!("wrote {} images to {}", paths.len(), a.out.display());
    Ok(())
}
