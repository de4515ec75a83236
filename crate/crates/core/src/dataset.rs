//! Synthetic random-kernel benchmarks: each corpus image is blurred with
//! its own random anisotropic Gaussian and subsampled.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{self, ImagePlane};
use crate::kernel::{self, GaussianSpec, Kernel};
use crate::par;

pub const SCHEMA_VERSION: u32 = 1;
/// Side of every ground-truth kernel.
pub const KERNEL_SIZE: usize = 11;
pub const DEFAULT_NOISE: f64 = 0.25;
const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub id: String,
    /// Source image path as found in the corpus directory.
    pub source: PathBuf,
    /// `(height, width)` of the luminance source.
    pub source_dims: (usize, usize),
    pub spec: GaussianSpec,
    /// Paths below are relative to the manifest's directory.
    pub kernel_path: PathBuf,
    pub lr_path: PathBuf,
    pub lr_raw_path: PathBuf,
    pub scale: usize,
    /// Seed of the kernel's multiplicative noise.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub schema_version: u32,
    pub global_seed: u64,
    pub scale: usize,
    pub count: usize,
    pub noise_amplitude: f64,
    pub corpus: PathBuf,
    pub entries: Vec<BenchmarkEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkOptions {
    pub scale: usize,
    pub count: usize,
    pub seed: u64,
    pub noise_amplitude: f64,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            scale: 2,
            count: 10,
            seed: 0,
            noise_amplitude: DEFAULT_NOISE,
        }
    }
}

/// Draws the random Gaussian parameters and noise seed for one entry.
pub fn draw_spec(rng: &mut impl Rng, noise_amplitude: f64) -> (GaussianSpec, u64) {
    let (lo, hi) = GaussianSpec::LAMBDA_RANGE;
    let lambda1 = rng.random_range(lo..hi);
    let lambda2 = rng.random_range(lo..hi);
    let theta = rng.random_range(-PI..PI);
    let seed = rng.random();
    (
        GaussianSpec {
            lambda1,
            lambda2,
            theta,
            noise_amplitude,
            size: KERNEL_SIZE,
        },
        seed,
    )
}

fn entry_rng(global: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(global);
    rng.set_stream(index as u64);
    rng
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg" | "bmp")
    )
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_corpus(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && is_image_file(&p) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

pub fn make_benchmark(corpus: &Path, out: &Path, opts: &BenchmarkOptions) -> Result<BenchmarkManifest> {
    if opts.scale != 2 && opts.scale != 4 {
        return Err(Error::validation(format!("scale must be 2 or 4, got {}", opts.scale)));
    }
    if opts.count == 0 {
        return Err(Error::validation("count must be positive"));
    }
    if !(0.0..=GaussianSpec::MAX_NOISE).contains(&opts.noise_amplitude) {
        return Err(Error::validation("noise amplitude must lie in [0, 0.25]"));
    }
    let mut sources = Vec::new();
    for path in list_corpus(corpus)? {
        if sources.len() == opts.count {
            break;
        }
        match image::load_image(&path, true) {
            Ok(img) if img.height() >= KERNEL_SIZE && img.width() >= KERNEL_SIZE => sources.push((path, img)),
            Ok(_) => log::warn!("skipping {}: smaller than the kernel", path.display()),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if sources.len() < opts.count {
        return Err(Error::validation(format!(
            "corpus {} has {} usable images, {} requested",
            corpus.display(),
            sources.len(),
            opts.count
        )));
    }

    for sub in ["lr", "kernels"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let results = par::map_indexed(sources.len(), |i| -> Result<BenchmarkEntry> {
        let (path, img) = &sources[i];
        let mut rng = entry_rng(opts.seed, i);
        let (spec, seed) = draw_spec(&mut rng, opts.noise_amplitude);
        let k = kernel::synth_gaussian(&spec, seed)?;
        let lr = image::downscale_with_kernel(img, &k, opts.scale)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let id = format!("{i:04}_{stem}");
        let kernel_path = PathBuf::from("kernels").join(format!("{id}.txt"));
        let lr_path = PathBuf::from("lr").join(format!("{id}.png"));
        let lr_raw_path = PathBuf::from("lr").join(format!("{id}.raw"));
        k.save(out.join(&kernel_path))?;
        lr.save_png(out.join(&lr_path))?;
        lr.write_raw(out.join(&lr_raw_path))?;
        Ok(BenchmarkEntry {
            id,
            source: path.clone(),
            source_dims: img.dims(),
            spec,
            kernel_path,
            lr_path,
            lr_raw_path,
            scale: opts.scale,
            seed,
        })
    });
    let entries = results.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = BenchmarkManifest {
        schema_version: SCHEMA_VERSION,
        global_seed: opts.seed,
        scale: opts.scale,
        count: opts.count,
        noise_amplitude: opts.noise_amplitude,
        corpus: corpus.to_path_buf(),
        entries,
    };
    let path = out.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a manifest and checks every entry's files.
pub fn load_benchmark(manifest_path: &Path) -> Result<BenchmarkManifest> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: BenchmarkManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        what: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Parse {
            what: manifest_path.display().to_string(),
            message: format!("unsupported schema version {}", manifest.schema_version),
        });
    }
    if manifest.entries.len() != manifest.count {
        return Err(Error::Parse {
            what: manifest_path.display().to_string(),
            message: format!("{} entries, count says {}", manifest.entries.len(), manifest.count),
        });
    }
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    for e in &manifest.entries {
        check_entry(root, e)?;
    }
    Ok(manifest)
}

fn check_entry(root: &Path, e: &BenchmarkEntry) -> Result<()> {
    let fail = |message: String| Error::Integrity {
        entry: e.id.clone(),
        message,
    };
    let k = Kernel::load(root.join(&e.kernel_path)).map_err(|err| fail(err.to_string()))?;
    if k.dims() != (KERNEL_SIZE, KERNEL_SIZE) {
        return Err(fail(format!("kernel is {:?}, expected 11×11", k.dims())));
    }
    if (k.sum() - 1.0).abs() > SUM_TOLERANCE {
        return Err(fail(format!("kernel sums to {}", k.sum())));
    }
    let lr = ImagePlane::read_raw(root.join(&e.lr_raw_path)).map_err(|err| fail(err.to_string()))?;
    let want = (
        image::downscaled_len(e.source_dims.0, KERNEL_SIZE, e.scale),
        image::downscaled_len(e.source_dims.1, KERNEL_SIZE, e.scale),
    );
    if lr.dims() != want {
        return Err(fail(format!("LR image is {:?}, expected {:?}", lr.dims(), want)));
    }
    let png = root.join(&e.lr_path);
    if !png.is_file() {
        return Err(fail(format!("missing {}", png.display())));
    }
    Ok(())
}

/// Ground-truth kernel and raw-float LR image of an entry.
pub fn load_entry(root: &Path, e: &BenchmarkEntry) -> Result<(Kernel, ImagePlane)> {
    let k = Kernel::load(root.join(&e.kernel_path))?;
    let lr = ImagePlane::read_raw(root.join(&e.lr_raw_path))?;
    Ok((k, lr))
}

// ---------------------------------------------------------------------------
// Procedural mini-corpus.

pub const MINI_CORPUS_SIZE: usize = 10;
const MINI_SIDE: usize = 288;

/// 5×7 glyphs, one byte per row, low five bits used.
const GLYPHS: [(char, [u8; 7]); 16] = [
    ('A', [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11]),
    ('B', [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E]),
    ('D', [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E]),
    ('E', [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F]),
    ('G', [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F]),
    ('I', [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E]),
    ('K', [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11]),
    ('L', [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F]),
    ('M', [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11]),
    ('N', [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11]),
    ('O', [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E]),
    ('P', [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10]),
    ('R', [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11]),
    ('S', [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E]),
    ('T', [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04]),
    ('X', [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11]),
];

fn glyph(c: char) -> Option<&'static [u8; 7]> {
    GLYPHS.iter().find(|(g, _)| *g == c).map(|(_, rows)| rows)
}

/// Random discs of random gray levels with power-law radii, painted back
/// to front.
fn dead_leaves(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut img = Array2::from_elem((n, n), rng.random::<f64>());
    let (rmin, rmax) = (2.0f64, n as f64 / 5.0);
    for _ in 0..2500 {
        // Density ∝ r⁻³ by inverse transform.
        let u: f64 = rng.random();
        let r = 1.0 / ((1.0 - u) / (rmin * rmin) + u / (rmax * rmax)).sqrt();
        let (cy, cx) = (rng.random::<f64>() * n as f64, rng.random::<f64>() * n as f64);
        let v = rng.random::<f64>();
        let (r0, r1) = ((cy - r).max(0.0) as usize, ((cy + r) as usize + 1).min(n));
        let (c0, c1) = ((cx - r).max(0.0) as usize, ((cx + r) as usize + 1).min(n));
        for i in r0..r1 {
            for j in c0..c1 {
                let (dy, dx) = (i as f64 + 0.5 - cy, j as f64 + 0.5 - cx);
                if dy * dy + dx * dx <= r * r {
                    img[[i, j]] = v;
                }
            }
        }
    }
    img
}

/// Random sinusoids with log-uniform frequencies up to Nyquist and equal
/// amplitudes, which gives a scale-free 1/f² power spectrum; rescaled to [0, 1].
fn pink_noise(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (lo, hi) = ((2.0 * PI / n as f64).ln(), PI.ln());
    let waves: Vec<(f64, f64, f64)> = (0..400)
        .map(|_| {
            let f = (lo + rng.random::<f64>() * (hi - lo)).exp();
            let ang = rng.random::<f64>() * PI;
            (f * ang.cos(), f * ang.sin(), rng.random::<f64>() * 2.0 * PI)
        })
        .collect();
    let img = Array2::from_shape_fn((n, n), |(i, j)| {
        waves
            .iter()
            .map(|(fx, fy, ph)| (fx * j as f64 + fy * i as f64 + ph).sin())
            .sum::<f64>()
    });
    rescale(img)
}

fn rescale(img: Array2<f64>) -> Array2<f64> {
    let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    img.mapv(|v| (v - lo) / span)
}

/// Rotated checkerboard with squares of several sizes in bands.
fn checkerboard(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let ang = rng.random_range(0.0..PI / 2.0);
    let (s, c) = ang.sin_cos();
    let (lo, hi) = (rng.random_range(0.0..0.3), rng.random_range(0.7..1.0));
    Array2::from_shape_fn((n, n), |(i, j)| {
        let (x, y) = (j as f64, i as f64);
        let (u, v) = (c * x + s * y, -s * x + c * y);
        let cell = [6.0, 11.0, 17.0, 29.0][(i * 4 / n).min(3)];
        let parity = ((u / cell).floor() as i64 + (v / cell).floor() as i64).rem_euclid(2);
        if parity == 0 {
            lo
        } else {
            hi
        }
    })
}

/// Lines of block text at several glyph sizes on a shaded background.
fn text_page(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let letters: Vec<char> = GLYPHS.iter().map(|(c, _)| *c).collect();
    let mut img = Array2::from_shape_fn((n, n), |(i, j)| 0.75 + 0.2 * (i + j) as f64 / (2 * n) as f64);
    let mut top = 4;
    while top < n {
        let scale = rng.random_range(2..=5usize);
        let ink = rng.random_range(0.0..0.35);
        let mut left = rng.random_range(2..10);
        while left + 6 * scale < n {
            let ch = letters[rng.random_range(0..letters.len())];
            let rows = glyph(ch).unwrap();
            for (gy, row) in rows.iter().enumerate() {
                for gx in 0..5 {
                    if row & (0x10 >> gx) == 0 {
                        continue;
                    }
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let (y, x) = (top + gy * scale + dy, left + gx * scale + dx);
                            if y < n && x < n {
                                img[[y, x]] = ink;
                            }
                        }
                    }
                }
            }
            left += 6 * scale;
        }
        top += 9 * scale;
    }
    img
}

/// Overlapping rectangles and line segments.
fn geometric(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut img = Array2::from_elem((n, n), 0.5);
    for _ in 0..160 {
        let (h, w) = (rng.random_range(3..n / 4), rng.random_range(3..n / 4));
        let (t, l) = (rng.random_range(0..n - h), rng.random_range(0..n - w));
        let v = rng.random::<f64>();
        img.slice_mut(ndarray::s![t..t + h, l..l + w]).fill(v);
    }
    for _ in 0..40 {
        let (y0, x0) = (rng.random::<f64>() * n as f64, rng.random::<f64>() * n as f64);
        let ang = rng.random::<f64>() * PI;
        let len = rng.random_range(20.0..n as f64 / 2.0);
        let v = if rng.random::<bool>() { 0.05 } else { 0.95 };
        let width = rng.random_range(1..4);
        for step in 0..(len as usize) {
            let (y, x) = (y0 + ang.sin() * step as f64, x0 + ang.cos() * step as f64);
            for d in 0..width {
                let (yy, xx) = (y as i64 + d as i64, x as i64);
                if yy >= 0 && xx >= 0 && (yy as usize) < n && (xx as usize) < n {
                    img[[yy as usize, xx as usize]] = v;
                }
            }
        }
    }
    img
}

type Painter = fn(usize, &mut ChaCha8Rng) -> Array2<f64>;

/// The ten procedural images of the mini-corpus, in file-name order.
pub fn mini_corpus_images(seed: u64) -> Vec<(String, ImagePlane)> {
    let kinds: [(&str, Painter); MINI_CORPUS_SIZE] = [
        ("leaves_a", dead_leaves),
        ("leaves_b", dead_leaves),
        ("leaves_c", dead_leaves),
        ("noise_a", pink_noise),
        ("noise_b", pink_noise),
        ("checker_a", checkerboard),
        ("checker_b", checkerboard),
        ("text_a", text_page),
        ("text_b", text_page),
        ("shapes", geometric),
    ];
    par::map_indexed(kinds.len(), |i| {
        let (name, f) = kinds[i];
        let mut rng = entry_rng(seed, i);
        let data = f(MINI_SIDE, &mut rng).mapv(|v| v.clamp(0.0, 1.0));
        (format!("{i:02}_{name}"), ImagePlane::new(data).expect("finite procedural image"))
    })
}

/// Writes the mini-corpus as 8-bit grayscale PNGs into `dir`.
pub fn write_mini_corpus(dir: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for (name, img) in mini_corpus_images(seed) {
        let p = dir.join(format!("{name}.png"));
        img.save_png(&p)?;
        paths.push(p);
    }
    Ok(paths)
}
