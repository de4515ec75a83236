//! Image quality metrics and benchmark evaluation reports.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, BenchmarkManifest};
use crate::error::{Error, Result};
use crate::image::{self, ImagePlane};
use crate::kernel::{self, Kernel, PSNR_CAP};
use crate::trainer::{self, TraceRow, TrainConfig};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Nearest-neighbour magnification of kernel heat maps.
pub const HEATMAP_ZOOM: usize = 16;

fn same_dims(a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::validation(format!(
            "image dims differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `10·log10(1 / MSE)` for [0, 1] images, capped at 100 dB.
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    same_dims(a, b)?;
    let n = (a.height() * a.width()) as f64;
    let mse = a
        .as_array()
        .iter()
        .zip(b.as_array().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid separable filtering with the same taps along both axes.
fn filter_valid(x: ArrayView2<'_, f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let rows = Array2::from_shape_fn((h, ow), |(i, j)| (0..k).map(|t| x[[i, j + t]] * taps[t]).sum::<f64>());
    Array2::from_shape_fn((oh, ow), |(i, j)| (0..k).map(|t| rows[[i + t, j]] * taps[t]).sum::<f64>())
}

/// Mean SSIM over all valid 11×11 Gaussian-weighted windows.
pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    same_dims(a, b)?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::validation("SSIM needs images at least 11×11"));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (x, y) = (a.as_array(), b.as_array());
    let mu_x = filter_valid(x.view(), &taps);
    let mu_y = filter_valid(y.view(), &taps);
    let xx = filter_valid((x * x).view(), &taps);
    let yy = filter_valid((y * y).view(), &taps);
    let xy = filter_valid((x * y).view(), &taps);
    let mut total = 0.0;
    for (((&mx, &my), (&sxx, &syy)), &sxy) in mu_x
        .iter()
        .zip(mu_y.iter())
        .zip(xx.iter().zip(yy.iter()))
        .zip(xy.iter())
    {
        let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
        total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / mu_x.len() as f64)
}

/// Outcome of one benchmark entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryResult {
    pub id: String,
    pub status: EntryStatus,
    pub kernel_l1: Option<f64>,
    pub kernel_psnr: Option<f64>,
    pub iterations: usize,
    pub runtime_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Ok,
    Failed,
}

/// CSV row: only the columns that are deterministic for a fixed seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub id: String,
    pub status: EntryStatus,
    pub kernel_l1: Option<f64>,
    pub kernel_psnr: Option<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Summary {
            mean,
            median: median(values),
            std: var.sqrt(),
        })
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub kernel_l1: Option<Summary>,
    pub kernel_psnr: Option<Summary>,
    pub runtime_seconds: Option<Summary>,
    pub iterations: Option<Summary>,
    pub failures: usize,
}

impl Aggregates {
    /// Statistics over the successful rows.
    pub fn from_rows(rows: &[EntryResult]) -> Self {
        let ok: Vec<&EntryResult> = rows.iter().filter(|r| r.status == EntryStatus::Ok).collect();
        let collect = |f: &dyn Fn(&EntryResult) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
        Aggregates {
            kernel_l1: Summary::of(&collect(&|r| r.kernel_l1)),
            kernel_psnr: Summary::of(&collect(&|r| r.kernel_psnr)),
            runtime_seconds: Summary::of(&collect(&|r| Some(r.runtime_seconds))),
            iterations: Summary::of(&collect(&|r| Some(r.iterations as f64))),
            failures: rows.len() - ok.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub manifest: PathBuf,
    pub scale: usize,
    pub border_crop: bool,
    pub config: TrainConfig,
    pub rows: Vec<EntryResult>,
    pub aggregates: Aggregates,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalOptions {
    /// Shave `scale` pixels off each side before the kernel PSNR.
    pub border_crop: bool,
    /// Skip loss-trace and heat-map images.
    pub skip_plots: bool,
}

/// Min-max normalized heat map of a kernel, magnified `zoom` times.
pub fn kernel_heatmap(k: &Kernel, zoom: usize) -> Array2<f64> {
    let w = k.weights();
    let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (h, ww) = k.dims();
    Array2::from_shape_fn((h * zoom, ww * zoom), |(i, j)| (w[[i / zoom, j / zoom]] - lo) / span)
}

/// Ground truth and estimate heat maps side by side, separated by a white
/// gutter, bottom-aligned when sizes differ.
pub fn save_kernel_pair(gt: &Kernel, est: &Kernel, path: &Path) -> Result<()> {
    let a = kernel_heatmap(gt, HEATMAP_ZOOM);
    let b = kernel_heatmap(est, HEATMAP_ZOOM);
    let gutter = HEATMAP_ZOOM;
    let h = a.nrows().max(b.nrows());
    let w = a.ncols() + gutter + b.ncols();
    let mut canvas = Array2::from_elem((h, w), 1.0);
    canvas
        .slice_mut(ndarray::s![h - a.nrows().., ..a.ncols()])
        .assign(&a);
    canvas
        .slice_mut(ndarray::s![h - b.nrows().., a.ncols() + gutter..])
        .assign(&b);
    image::save_gray_png(canvas.view(), path)
}

/// Three stacked panels (g_loss, d_loss, reg), each min-max scaled, one
/// column per bucket of iterations.
pub fn save_loss_plot(trace: &[TraceRow], path: &Path) -> Result<()> {
    const W: usize = 600;
    const PANEL: usize = 120;
    let mut canvas = Array2::from_elem((3 * PANEL, W), 1.0);
    if trace.is_empty() {
        return image::save_gray_png(canvas.view(), path);
    }
    let series: [Vec<f64>; 3] = [
        trace.iter().map(|r| r.g_loss).collect(),
        trace.iter().map(|r| r.d_loss).collect(),
        trace.iter().map(|r| r.reg).collect(),
    ];
    for (p, s) in series.iter().enumerate() {
        let top = p * PANEL;
        let finite: Vec<f64> = s.iter().cloned().filter(|v| v.is_finite()).collect();
        let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        for x in 0..W {
            let (a, b) = (x * s.len() / W, ((x + 1) * s.len() / W).max(x * s.len() / W + 1));
            let bucket: Vec<f64> = s[a.min(s.len() - 1)..b.min(s.len())]
                .iter()
                .cloned()
                .filter(|v| v.is_finite())
                .collect();
            if bucket.is_empty() {
                continue;
            }
            let mean = bucket.iter().sum::<f64>() / bucket.len() as f64;
            let y = ((hi - mean) / span * (PANEL - 9) as f64) as usize + 4;
            canvas[[top + y, x]] = 0.0;
        }
        canvas.row_mut(top + PANEL - 1).fill(0.6);
    }
    image::save_gray_png(canvas.view(), path)
}

/// Runs estimation on every manifest entry and scores the estimate against
/// the entry's ground-truth kernel. Entry `i` trains with seed
/// `cfg.seed + i`.
pub fn evaluate_benchmark(
    manifest_path: &Path,
    manifest: &BenchmarkManifest,
    cfg: &TrainConfig,
    out: &Path,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    cfg.validate()?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    for sub in ["kernels", "plots"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut rows = Vec::with_capacity(manifest.entries.len());
    for (i, entry) in manifest.entries.iter().enumerate() {
        let start = Instant::now();
        let entry_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let outcome = (|| -> Result<(f64, f64, usize)> {
            let (gt, lr) = dataset::load_entry(root, entry)?;
            let res = trainer::estimate_kernel(&lr, &entry_cfg)?;
            let est = if entry.scale == 4 { &res.kernel_x4 } else { &res.kernel_x2 };
            let border = if opts.border_crop { entry.scale } else { 0 };
            let dist = kernel::kernel_distance_on(&gt, est, kernel::reference_image(), border)?;
            est.save(out.join("kernels").join(format!("{}.txt", entry.id)))?;
            if !opts.skip_plots {
                save_loss_plot(&res.loss_trace, &out.join("plots").join(format!("{}_loss.png", entry.id)))?;
                save_kernel_pair(&gt, est, &out.join("plots").join(format!("{}_kernels.png", entry.id)))?;
            }
            Ok((dist.l1, dist.image_psnr, res.iterations_run))
        })();
        let runtime_seconds = start.elapsed().as_secs_f64();
        let row = match outcome {
            Ok((l1, p, iterations)) => {
                log::info!("{}: L1 {l1:.4}, PSNR {p:.2} dB, {runtime_seconds:.1} s", entry.id);
                EntryResult {
                    id: entry.id.clone(),
                    status: EntryStatus::Ok,
                    kernel_l1: Some(l1),
                    kernel_psnr: Some(p),
                    iterations,
                    runtime_seconds,
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("{} failed: {e}", entry.id);
                let iterations = match &e {
                    Error::Divergence { iteration, .. } => *iteration,
                    _ => 0,
                };
                EntryResult {
                    id: entry.id.clone(),
                    status: EntryStatus::Failed,
                    kernel_l1: None,
                    kernel_psnr: None,
                    iterations,
                    runtime_seconds,
                    error: Some(e.to_string()),
                }
            }
        };
        rows.push(row);
    }
    let report = EvalReport {
        manifest: manifest_path.to_path_buf(),
        scale: manifest.scale,
        border_crop: opts.border_crop,
        config: cfg.clone(),
        aggregates: Aggregates::from_rows(&rows),
        rows,
    };
    write_report(&report, out)?;
    Ok(report)
}

pub fn csv_rows(report: &EvalReport) -> Vec<CsvRow> {
    report
        .rows
        .iter()
        .map(|r| CsvRow {
            id: r.id.clone(),
            status: r.status,
            kernel_l1: r.kernel_l1,
            kernel_psnr: r.kernel_psnr,
            iterations: r.iterations,
        })
        .collect()
}

/// Writes `report.csv` and `report.json` into `out`.
pub fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    let csv_path = out.join("report.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
    for row in csv_rows(report) {
        w.serialize(row).map_err(|e| csv_error(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let json_path = out.join("report.json");
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))
}

pub fn read_csv_rows(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        what: path.display().to_string(),
        message: e.to_string(),
    }
}
