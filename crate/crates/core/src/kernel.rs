//! Explicit SR kernels and the algebra around them: regularization
//! functionals, ×2 → ×4 composition, synthetic anisotropic Gaussians and
//! kernel distances.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{self, ImagePlane};

/// Side of the kernel estimated by the deep linear generator.
pub const ESTIMATED_SIZE: usize = 13;

/// Threshold below which `|Σ k|` is treated as zero by the centroid.
pub const CENTER_SUM_EPS: f64 = 1e-8;

/// ε of the differentiable sparsity surrogate `Σ (k² + ε)^¼`.
pub const SPARSE_EPS: f64 = 1e-8;

/// Sentinel PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

/// A 2-D kernel with odd side lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    weights: Array2<f64>,
}

impl Kernel {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        let (h, w) = weights.dim();
        if h == 0 || w == 0 || h.is_multiple_of(2) || w.is_multiple_of(2) {
            return Err(Error::validation(format!(
                "kernel sides must be odd and positive, got {h}×{w}"
            )));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("kernel contains non-finite values"));
        }
        Ok(Self { weights })
    }

    /// Unit impulse at the center of a `size`×`size` grid.
    pub fn delta(size: usize) -> Self {
        let mut w = Array2::zeros((size, size));
        w[[size / 2, size / 2]] = 1.0;
        Self::new(w).expect("delta size must be odd")
    }

    pub fn zeros(h: usize, w: usize) -> Result<Self> {
        Self::new(Array2::zeros((h, w)))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.weights.dim()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn into_weights(self) -> Array2<f64> {
        self.weights
    }

    pub fn sum(&self) -> f64 {
        self.weights.sum()
    }

    /// Geometric center `((h−1)/2, (w−1)/2)`, zero-based `(row, col)`.
    pub fn center(&self) -> (f64, f64) {
        let (h, w) = self.dims();
        ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0)
    }

    /// Mass centroid `Σ k·(i, j) / Σ k`.
    pub fn centroid(&self) -> Result<(f64, f64)> {
        let total = self.sum();
        if total.abs() < CENTER_SUM_EPS {
            return Err(Error::DegenerateKernel(format!(
                "kernel sum {total:e} too small for a centroid"
            )));
        }
        let (mut ci, mut cj) = (0.0, 0.0);
        for ((i, j), &v) in self.weights.indexed_iter() {
            ci += v * i as f64;
            cj += v * j as f64;
        }
        Ok((ci / total, cj / total))
    }

    pub fn normalize(&self) -> Result<Kernel> {
        let total = self.sum();
        if total == 0.0 || !total.is_finite() {
            return Err(Error::DegenerateKernel(format!(
                "cannot normalize kernel with sum {total}"
            )));
        }
        Ok(Kernel {
            weights: &self.weights / total,
        })
    }

    /// Zero-pads symmetrically to `h`×`w` (both at least the current size and
    /// of the same parity, which odd sizes guarantee).
    pub fn pad_to(&self, h: usize, w: usize) -> Result<Kernel> {
        let (kh, kw) = self.dims();
        if h < kh || w < kw || h.is_multiple_of(2) || w.is_multiple_of(2) {
            return Err(Error::validation(format!(
                "cannot pad {kh}×{kw} kernel to {h}×{w}"
            )));
        }
        let mut out = Array2::zeros((h, w));
        let (t, l) = ((h - kh) / 2, (w - kw) / 2);
        out.slice_mut(s![t..t + kh, l..l + kw]).assign(&self.weights);
        Kernel::new(out)
    }

    /// Translates contents by `(dy, dx)` cells, dropping what falls off.
    pub fn shifted(&self, dy: i64, dx: i64) -> Kernel {
        let (h, w) = self.dims();
        let mut out = Array2::zeros((h, w));
        for ((i, j), &v) in self.weights.indexed_iter() {
            let (ni, nj) = (i as i64 + dy, j as i64 + dx);
            if ni >= 0 && nj >= 0 && (ni as usize) < h && (nj as usize) < w {
                out[[ni as usize, nj as usize]] = v;
            }
        }
        Kernel { weights: out }
    }

    /// Plain-text grid, one row per line, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in self.weights.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Kernel> {
        let perr = |message: String| Error::Parse {
            what: "kernel text".into(),
            message,
        };
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| perr(format!("`{t}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let h = rows.len();
        let w = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != w) {
            return Err(perr("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let arr = Array2::from_shape_vec((h, w), flat).map_err(|e| perr(e.to_string()))?;
        Kernel::new(arr)
    }

    /// Writes text unless the extension is `.raw`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if is_raw(path) {
            image::write_raw(path, self.view())
        } else {
            std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Kernel> {
        let path = path.as_ref();
        if is_raw(path) {
            Kernel::new(image::read_raw(path)?)
        } else {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Kernel::from_text(&text).map_err(|e| match e {
                Error::Parse { message, .. } => Error::Parse {
                    what: path.display().to_string(),
                    message,
                },
                other => other,
            })
        }
    }
}

fn is_raw(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("raw"))
}

/// Boundary-penalty mask: `(e^d − 1) / (e^dmax − 1)` with `d` the Chebyshev
/// distance from the center. Zero at the center, one at the corners.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMask {
    weights: Array2<f64>,
}

impl BoundaryMask {
    pub fn exponential(h: usize, w: usize) -> Self {
        let (ch, cw) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let cheb = |i: usize, j: usize| (i as f64 - ch).abs().max((j as f64 - cw).abs());
        let dmax = ch.max(cw);
        let denom = dmax.exp_m1();
        let weights = Array2::from_shape_fn((h, w), |(i, j)| {
            if denom == 0.0 {
                0.0
            } else {
                cheb(i, j).exp_m1() / denom
            }
        });
        Self { weights }
    }

    pub fn for_kernel(k: &Kernel) -> Self {
        let (h, w) = k.dims();
        Self::exponential(h, w)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }
}

/// `|1 − Σ k|`.
pub fn loss_sum_to_1(k: &Kernel) -> f64 {
    (1.0 - k.sum()).abs()
}

pub fn grad_sum_to_1(k: &Kernel) -> Array2<f64> {
    let r = 1.0 - k.sum();
    Array2::from_elem(k.dims(), -signum0(r))
}

/// `Σ |k ⊙ m|`.
pub fn loss_boundaries(k: &Kernel, m: &BoundaryMask) -> Result<f64> {
    check_mask(k, m)?;
    Ok(Zip::from(k.view())
        .and(m.view())
        .fold(0.0, |acc, &kv, &mv| acc + (kv * mv).abs()))
}

pub fn grad_boundaries(k: &Kernel, m: &BoundaryMask) -> Result<Array2<f64>> {
    check_mask(k, m)?;
    Ok(Zip::from(k.view())
        .and(m.view())
        .map_collect(|&kv, &mv| signum0(kv * mv) * mv))
}

fn check_mask(k: &Kernel, m: &BoundaryMask) -> Result<()> {
    if k.dims() != m.weights.dim() {
        return Err(Error::validation(format!(
            "mask {:?} does not match kernel {:?}",
            m.weights.dim(),
            k.dims()
        )));
    }
    Ok(())
}

/// Exact `Σ |k|^½`, used for reporting.
pub fn loss_sparse(k: &Kernel) -> f64 {
    k.weights.iter().map(|v| v.abs().sqrt()).sum()
}

/// Smooth stand-in `Σ (k² + ε)^¼` that training differentiates.
pub fn loss_sparse_surrogate(k: &Kernel) -> f64 {
    k.weights
        .iter()
        .map(|v| (v * v + SPARSE_EPS).powf(0.25))
        .sum()
}

pub fn grad_sparse_surrogate(k: &Kernel) -> Array2<f64> {
    k.weights
        .mapv(|v| 0.5 * v * (v * v + SPARSE_EPS).powf(-0.75))
}

/// Euclidean distance between the geometric center and the mass centroid.
pub fn loss_center(k: &Kernel) -> Result<f64> {
    let (ci, cj) = k.centroid()?;
    let (i0, j0) = k.center();
    Ok(((ci - i0).powi(2) + (cj - j0).powi(2)).sqrt())
}

pub fn grad_center(k: &Kernel) -> Result<Array2<f64>> {
    let (ci, cj) = k.centroid()?;
    let (i0, j0) = k.center();
    let (di, dj) = (ci - i0, cj - j0);
    let dist = (di * di + dj * dj).sqrt();
    if dist == 0.0 {
        return Ok(Array2::zeros(k.dims()));
    }
    let total = k.sum();
    Ok(Array2::from_shape_fn(k.dims(), |(i, j)| {
        (di * (i as f64 - ci) + dj * (j as f64 - cj)) / (dist * total)
    }))
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Weights of the four kernel priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegWeights {
    pub sum_to_1: f64,
    pub boundaries: f64,
    pub sparse: f64,
    pub center: f64,
}

impl Default for RegWeights {
    fn default() -> Self {
        Self {
            sum_to_1: 0.5,
            boundaries: 0.5,
            sparse: 5.0,
            center: 1.0,
        }
    }
}

impl RegWeights {
    pub fn zero() -> Self {
        Self {
            sum_to_1: 0.0,
            boundaries: 0.0,
            sparse: 0.0,
            center: 0.0,
        }
    }
}

/// Individual prior values for one kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegTerms {
    pub sum_to_1: f64,
    pub boundaries: f64,
    pub sparse: f64,
    pub center: f64,
}

impl RegTerms {
    pub fn weighted(&self, w: &RegWeights) -> f64 {
        w.sum_to_1 * self.sum_to_1
            + w.boundaries * self.boundaries
            + w.sparse * self.sparse
            + w.center * self.center
    }
}

pub fn regularization_terms(k: &Kernel) -> Result<RegTerms> {
    let mask = BoundaryMask::for_kernel(k);
    Ok(RegTerms {
        sum_to_1: loss_sum_to_1(k),
        boundaries: loss_boundaries(k, &mask)?,
        sparse: loss_sparse(k),
        center: loss_center(k)?,
    })
}

/// `α L_sum + β L_boundaries + γ L_sparse + δ L_center` with the exact
/// sparsity term.
pub fn regularization(k: &Kernel, w: &RegWeights) -> Result<f64> {
    Ok(regularization_terms(k)?.weighted(w))
}

/// Training form of the regularizer: value (with the sparsity surrogate)
/// and gradient with respect to every kernel cell.
pub fn regularization_with_grad(k: &Kernel, w: &RegWeights) -> Result<(f64, Array2<f64>)> {
    let mask = BoundaryMask::for_kernel(k);
    let value = w.sum_to_1 * loss_sum_to_1(k)
        + w.boundaries * loss_boundaries(k, &mask)?
        + w.sparse * loss_sparse_surrogate(k)
        + w.center * loss_center(k)?;
    let mut grad = grad_sum_to_1(k) * w.sum_to_1;
    grad.scaled_add(w.boundaries, &grad_boundaries(k, &mask)?);
    grad.scaled_add(w.sparse, &grad_sparse_surrogate(k));
    grad.scaled_add(w.center, &grad_center(k)?);
    Ok((value, grad))
}

/// Spreads cells `s` apart: `out[s·i, s·j] = k[i, j]`, zeros elsewhere.
pub fn dilate(k: &Kernel, s: usize) -> Result<Kernel> {
    if s == 0 {
        return Err(Error::validation("dilation factor must be positive"));
    }
    let (h, w) = k.dims();
    let mut out = Array2::zeros((s * (h - 1) + 1, s * (w - 1) + 1));
    for ((i, j), &v) in k.weights.indexed_iter() {
        out[[s * i, s * j]] = v;
    }
    Kernel::new(out)
}

/// Full (zero-padded) composition `out[t] = Σ_{a+b=t} x[a]·y[b]`.
pub fn full_compose(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Array2<f64> {
    let (xh, xw) = x.dim();
    let (yh, yw) = y.dim();
    let mut out = Array2::zeros((xh + yh - 1, xw + yw - 1));
    for ((a, b), &xv) in x.indexed_iter() {
        if xv == 0.0 {
            continue;
        }
        let mut win = out.slice_mut(s![a..a + yh, b..b + yw]);
        win.scaled_add(xv, &y);
    }
    out
}

/// ×4 kernel from a ×2 kernel: `k₂` composed with its 2-dilated copy, so
/// that one ×4 downscale equals two successive ×2 downscales.
pub fn compose_scale(k2: &Kernel) -> Result<Kernel> {
    let dil = dilate(k2, 2)?;
    Kernel::new(full_compose(k2.view(), dil.view()))
}

/// Parameters of an anisotropic Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    /// Standard deviation along the (rotated) horizontal axis, pixels.
    pub lambda1: f64,
    /// Standard deviation along the (rotated) vertical axis, pixels.
    pub lambda2: f64,
    /// Rotation in radians.
    pub theta: f64,
    pub noise_amplitude: f64,
    pub size: usize,
}

impl GaussianSpec {
    pub const LAMBDA_RANGE: (f64, f64) = (0.6, 5.0);
    pub const MAX_NOISE: f64 = 0.25;

    pub fn isotropic(sigma: f64, size: usize) -> Self {
        Self {
            lambda1: sigma,
            lambda2: sigma,
            theta: 0.0,
            noise_amplitude: 0.0,
            size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = Self::LAMBDA_RANGE;
        let ok_lambda = |l: f64| (lo..=hi).contains(&l);
        if !ok_lambda(self.lambda1) || !ok_lambda(self.lambda2) {
            return Err(Error::validation(format!(
                "gaussian axis lengths must lie in [{lo}, {hi}]: {self:?}"
            )));
        }
        if !(-PI..=PI).contains(&self.theta) {
            return Err(Error::validation(format!("theta out of [-π, π]: {}", self.theta)));
        }
        if !(0.0..=Self::MAX_NOISE).contains(&self.noise_amplitude) {
            return Err(Error::validation(format!(
                "noise amplitude out of [0, 0.25]: {}",
                self.noise_amplitude
            )));
        }
        if self.size.is_multiple_of(2) {
            return Err(Error::validation("gaussian kernel size must be odd"));
        }
        Ok(())
    }

    /// Noiseless, unnormalized density on the integer grid around the center.
    /// `(x, y)` is `(col − c, row − c)`; `lambda1` spreads along `x` at θ = 0.
    pub fn grid(&self) -> Array2<f64> {
        let c = (self.size as f64 - 1.0) / 2.0;
        let (sn, cs) = self.theta.sin_cos();
        let (i1, i2) = (1.0 / self.lambda1.powi(2), 1.0 / self.lambda2.powi(2));
        // Σ⁻¹ = R diag(1/λ1², 1/λ2²) Rᵀ
        let a = cs * cs * i1 + sn * sn * i2;
        let b = cs * sn * (i1 - i2);
        let d = sn * sn * i1 + cs * cs * i2;
        Array2::from_shape_fn((self.size, self.size), |(i, j)| {
            let (x, y) = (j as f64 - c, i as f64 - c);
            (-0.5 * (a * x * x + 2.0 * b * x * y + d * y * y)).exp()
        })
    }
}

/// Gaussian grid with per-cell multiplicative noise `(1 + u)`,
/// `u ~ U(−a, a)`, before normalization.
pub fn synth_gaussian_raw(spec: &GaussianSpec, seed: u64) -> Result<Array2<f64>> {
    spec.validate()?;
    let mut grid = spec.grid();
    let a = spec.noise_amplitude;
    if a > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        grid.mapv_inplace(|v| v * (1.0 + rng.random_range(-a..=a)));
    }
    Ok(grid)
}

/// Unit-sum anisotropic Gaussian kernel.
pub fn synth_gaussian(spec: &GaussianSpec, seed: u64) -> Result<Kernel> {
    Kernel::new(synth_gaussian_raw(spec, seed)?)?.normalize()
}

/// Pixel-centered antialiased cubic kernel for ×`s` downscaling: the
/// separable taps `cubic(d/s)/s` at integer offsets, normalized.
pub fn bicubic_kernel(s: usize, size: usize) -> Result<Kernel> {
    if size.is_multiple_of(2) || s == 0 {
        return Err(Error::validation("bicubic kernel needs odd size and positive scale"));
    }
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| image::cubic((i as f64 - c) / s as f64) / s as f64)
        .collect();
    let k = Array2::from_shape_fn((size, size), |(i, j)| taps[i] * taps[j]);
    Kernel::new(k)?.normalize()
}

/// Comparison between two kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelDistance {
    /// `Σ |a − b|` after integer alignment of `b`.
    pub l1: f64,
    /// PSNR between ×2 downscales of the reference image under `a` and the
    /// aligned `b`, capped at 100 dB.
    pub image_psnr: f64,
    /// Integer shift `(dy, dx)` applied to `b`.
    pub shift: (i64, i64),
}

/// Shift search radius around the centroid-derived offset.
const ALIGN_RADIUS: i64 = 2;

/// Compares two kernels after zero-padding them to a common size and
/// shifting `b` by the integer offset, near the centroid difference, that
/// minimizes the L1 distance.
pub fn kernel_distance(a: &Kernel, b: &Kernel) -> Result<KernelDistance> {
    kernel_distance_on(a, b, reference_image(), 0)
}

/// [`kernel_distance`] against a caller-chosen image, optionally shaving
/// `border` pixels from each side of both downscales before the PSNR.
pub fn kernel_distance_on(
    a: &Kernel,
    b: &Kernel,
    img: &ImagePlane,
    border: usize,
) -> Result<KernelDistance> {
    let (ah, aw) = a.dims();
    let (bh, bw) = b.dims();
    let (h, w) = (ah.max(bh), aw.max(bw));
    let margin = (h.max(w) / 2) as i64;
    let (ph, pw) = (h + 2 * margin as usize, w + 2 * margin as usize);
    let pa = a.pad_to(ph, pw)?;
    let pb = b.pad_to(ph, pw)?;

    let base = match (pa.centroid(), pb.centroid()) {
        (Ok((ai, aj)), Ok((bi, bj))) => (
            ((ai - bi).round() as i64).clamp(-margin, margin),
            ((aj - bj).round() as i64).clamp(-margin, margin),
        ),
        _ => (0, 0),
    };
    let mut best: Option<(f64, (i64, i64))> = None;
    for dy in -ALIGN_RADIUS..=ALIGN_RADIUS {
        for dx in -ALIGN_RADIUS..=ALIGN_RADIUS {
            let shift = (
                (base.0 + dy).clamp(-margin, margin),
                (base.1 + dx).clamp(-margin, margin),
            );
            let moved = pb.shifted(shift.0, shift.1);
            let l1: f64 = Zip::from(pa.view())
                .and(moved.view())
                .fold(0.0, |acc, x, y| acc + (x - y).abs());
            // Prefer the smaller shift on ties so identical inputs stay put.
            let better = match best {
                None => true,
                Some((bl, bs)) => {
                    l1 < bl || (l1 == bl && shift.0.abs() + shift.1.abs() < bs.0.abs() + bs.1.abs())
                }
            };
            if better {
                best = Some((l1, shift));
            }
        }
    }
    let (l1, shift) = best.expect("search window is non-empty");
    let moved = pb.shifted(shift.0, shift.1);

    let da = image::downscale_with_kernel(img, &pa, 2)?;
    let db = image::downscale_with_kernel(img, &moved, 2)?;
    let (da, db) = if border > 0 {
        let (h, w) = da.dims();
        if 2 * border >= h || 2 * border >= w {
            return Err(Error::validation("border crop removes the whole image"));
        }
        (
            da.center_crop(h - 2 * border, w - 2 * border)?,
            db.center_crop(h - 2 * border, w - 2 * border)?,
        )
    } else {
        (da, db)
    };
    let image_psnr = crate::eval::psnr(&da, &db)?;
    Ok(KernelDistance {
        l1,
        image_psnr,
        shift,
    })
}

/// Fixed 128×128 test image used by [`kernel_distance`]: oriented gratings,
/// hard-edged shapes and smoothed noise, values in [0, 1].
pub fn reference_image() -> &'static ImagePlane {
    use std::sync::OnceLock;
    static IMG: OnceLock<ImagePlane> = OnceLock::new();
    IMG.get_or_init(|| {
        let n = 128;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1234);
        let noise = Array2::from_shape_fn((n, n), |_| rng.random::<f64>());
        // 3×3 box smoothing, edge-clamped.
        let smooth = Array2::from_shape_fn((n, n), |(r, c)| {
            let mut acc = 0.0;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let rr = (r as i64 + dr).clamp(0, n as i64 - 1) as usize;
                    let cc = (c as i64 + dc).clamp(0, n as i64 - 1) as usize;
                    acc += noise[[rr, cc]];
                }
            }
            acc / 9.0
        });
        let data = Array2::from_shape_fn((n, n), |(r, c)| {
            let (y, x) = (r as f64, c as f64);
            let grating = 0.5 + 0.5 * (0.35 * x + 0.2 * y).sin() * (0.07 * (x - y)).cos();
            let disc = if (x - 40.0).powi(2) + (y - 84.0).powi(2) < 400.0 { 1.0 } else { 0.0 };
            let bar = if (70.0..100.0).contains(&x) && (20.0..50.0).contains(&y) { 1.0 } else { 0.0 };
            let check = if ((r / 6) + (c / 6)) % 2 == 0 && r > 96 { 1.0 } else { 0.0 };
            (0.35 * grating + 0.25 * disc + 0.2 * bar + 0.1 * check + 0.25 * smooth[[r, c]])
                .clamp(0.0, 1.0)
        });
        ImagePlane::new(data).expect("reference image is finite")
    })
}
