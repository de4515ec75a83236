//! Single-channel image planes and the operators that act on them.
//!
//! Every "convolution" here is a cross-correlation without filter flip:
//! `out[i][j] = Σ_ab img[i + a][j + b] · k[a][b]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::par;

/// Magic number leading every raw-float file ("BKRF", little-endian).
pub const RAW_MAGIC: u32 = u32::from_le_bytes(*b"BKRF");

/// Luminance weights for RGB → Y.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// A single-channel floating-point image, row-major, indexed `[row, col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    data: Array2<f64>,
}

/// A square crop window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CropSpec {
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

impl ImagePlane {
    /// Wraps an array. Values must be finite; range is not enforced so that
    /// intermediate network outputs can be carried too.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::validation("image has zero area"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("image contains non-finite values"));
        }
        Ok(Self { data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut((usize, usize)) -> f64) -> Self {
        Self::new(Array2::from_shape_fn((height, width), f)).expect("from_fn produced invalid plane")
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self::from_fn(height, width, |_| value)
    }

    pub(crate) fn from_array_unchecked(data: Array2<f64>) -> Self {
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[[row, col]]
    }

    /// Clamps every value into [0, 1].
    pub fn clamped(mut self) -> Self {
        self.data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        self
    }

    pub fn crop(&self, spec: &CropSpec) -> Result<ImagePlane> {
        spec.check(self.height(), self.width())?;
        let view = self.data.slice(s![
            spec.top..spec.top + spec.size,
            spec.left..spec.left + spec.size
        ]);
        Ok(Self {
            data: view.to_owned(),
        })
    }

    /// Centered sub-window of the given size.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<ImagePlane> {
        if height > self.height() || width > self.width() {
            return Err(Error::validation(format!(
                "center crop {height}×{width} exceeds image {}×{}",
                self.height(),
                self.width()
            )));
        }
        let top = (self.height() - height) / 2;
        let left = (self.width() - width) / 2;
        Ok(Self {
            data: self
                .data
                .slice(s![top..top + height, left..left + width])
                .to_owned(),
        })
    }

    /// Quantizes to 8 bits and writes a grayscale PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        save_gray_png(self.view(), path)
    }

    pub fn write_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        write_raw(path, self.view())
    }

    pub fn read_raw(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_raw(path)?)
    }
}

impl CropSpec {
    pub fn new(top: usize, left: usize, size: usize) -> Self {
        Self { top, left, size }
    }

    pub fn check(&self, height: usize, width: usize) -> Result<()> {
        if self.size == 0 || self.top + self.size > height || self.left + self.size > width {
            return Err(Error::validation(format!(
                "crop {self:?} does not fit in {height}×{width}"
            )));
        }
        Ok(())
    }

    /// Whether two crop windows share at least one pixel.
    pub fn overlaps(&self, other: &CropSpec) -> bool {
        self.top < other.top + other.size
            && other.top < self.top + self.size
            && self.left < other.left + other.size
            && other.left < self.left + self.size
    }
}

/// Loads a raster image as a plane with values in [0, 1].
///
/// With `to_luminance`, color images are combined as 0.299R + 0.587G + 0.114B.
/// Without it the file must already be single-channel.
pub fn load_image(path: impl AsRef<Path>, to_luminance: bool) -> Result<ImagePlane> {
    use image::DynamicImage;

    let path = path.as_ref();
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::validation(format!(
            "{} has zero area",
            path.display()
        )));
    }
    let is_color = img.color().has_color();
    if is_color && !to_luminance {
        return Err(Error::validation(format!(
            "{} is a color image; enable luminance conversion",
            path.display()
        )));
    }
    let sixteen = matches!(
        img.color(),
        image::ColorType::L16
            | image::ColorType::La16
            | image::ColorType::Rgb16
            | image::ColorType::Rgba16
    );

    let data = match (&img, sixteen, is_color) {
        (_, false, false) => {
            let g = img.to_luma8();
            Array2::from_shape_fn((h, w), |(r, c)| g.get_pixel(c as u32, r as u32)[0] as f64 / 255.0)
        }
        (_, true, false) => {
            let g = img.to_luma16();
            Array2::from_shape_fn((h, w), |(r, c)| {
                g.get_pixel(c as u32, r as u32)[0] as f64 / 65535.0
            })
        }
        (DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_), true, true) => {
            let rgb = img.to_rgb16();
            Array2::from_shape_fn((h, w), |(r, c)| {
                luma(rgb.get_pixel(c as u32, r as u32).0.map(|v| v as f64 / 65535.0))
            })
        }
        _ => {
            let rgb = img.to_rgb8();
            Array2::from_shape_fn((h, w), |(r, c)| {
                luma(rgb.get_pixel(c as u32, r as u32).0.map(|v| v as f64 / 255.0))
            })
        }
    };
    Ok(ImagePlane::from_array_unchecked(data).clamped())
}

fn luma(rgb: [f64; 3]) -> f64 {
    rgb[0] * LUMA_WEIGHTS[0] + rgb[1] * LUMA_WEIGHTS[1] + rgb[2] * LUMA_WEIGHTS[2]
}

pub(crate) fn save_gray_png(data: ArrayView2<'_, f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = data.dim();
    let buf = image::GrayImage::from_fn(w as u32, h as u32, |c, r| {
        image::Luma([(data[[r as usize, c as usize]].clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    buf.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes the raw float format: three little-endian u32 (magic, height,
/// width) followed by row-major little-endian f32 values.
pub fn write_raw(path: impl AsRef<Path>, data: ArrayView2<'_, f64>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let (h, w) = data.dim();
    let mut bytes = Vec::with_capacity(12 + 4 * h * w);
    bytes.extend_from_slice(&RAW_MAGIC.to_le_bytes());
    bytes.extend_from_slice(&(h as u32).to_le_bytes());
    bytes.extend_from_slice(&(w as u32).to_le_bytes());
    for v in data.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let parse_err = |message: String| Error::Parse {
        what: path.display().to_string(),
        message,
    };
    if bytes.len() < 12 {
        return Err(parse_err("truncated header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != RAW_MAGIC {
        return Err(parse_err("bad magic".into()));
    }
    let (h, w) = (word(1) as usize, word(2) as usize);
    if bytes.len() != 12 + 4 * h * w {
        return Err(parse_err(format!(
            "expected {} payload bytes for {h}×{w}, found {}",
            4 * h * w,
            bytes.len() - 12
        )));
    }
    let values = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Array2::from_shape_vec((h, w), values).map_err(|e| parse_err(e.to_string()))
}

/// Output length along one axis of a valid correlation followed by
/// keeping indices ≡ 0 (mod s).
pub fn downscaled_len(len: usize, kernel_len: usize, s: usize) -> usize {
    if kernel_len > len {
        return 0;
    }
    (len - kernel_len + 1).div_ceil(s)
}

/// `(img ⋆ k) ↓ s` with valid-region correlation and even-phase subsampling.
pub fn downscale_with_kernel(img: &ImagePlane, k: &Kernel, s: usize) -> Result<ImagePlane> {
    if s == 0 {
        return Err(Error::validation("scale must be positive"));
    }
    let (kh, kw) = k.dims();
    if kh > img.height() || kw > img.width() {
        return Err(Error::validation(format!(
            "kernel {kh}×{kw} larger than image {}×{}",
            img.height(),
            img.width()
        )));
    }
    Ok(ImagePlane::from_array_unchecked(correlate_strided(
        img.view(),
        k.view(),
        s,
    )))
}

/// Valid cross-correlation sampled at stride `s` (even phase).
pub(crate) fn correlate_strided(
    img: ArrayView2<'_, f64>,
    k: ArrayView2<'_, f64>,
    s: usize,
) -> Array2<f64> {
    let (h, w) = img.dim();
    let (kh, kw) = k.dim();
    let oh = downscaled_len(h, kh, s);
    let ow = downscaled_len(w, kw, s);
    let mut out = vec![0.0; oh * ow];
    let img_std = img.as_standard_layout();
    let img_s = img_std.as_slice().unwrap();
    let k_std = k.as_standard_layout();
    let k_s = k_std.as_slice().unwrap();
    par::for_each_chunk_mut(&mut out, ow.max(1), |i, row| {
        for (j, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for a in 0..kh {
                let base = (s * i + a) * w + s * j;
                let src = &img_s[base..base + kw];
                let kr = &k_s[a * kw..(a + 1) * kw];
                for (x, y) in src.iter().zip(kr) {
                    acc += x * y;
                }
            }
            *o = acc;
        }
    });
    Array2::from_shape_vec((oh, ow), out).unwrap()
}

/// Cubic convolution kernel with a = −0.5.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Per-output-pixel taps (input indices, normalized weights) for
/// antialiased cubic downscaling along one axis, with symmetric boundary
/// extension.
pub(crate) fn bicubic_contributions(in_len: usize, s: usize) -> Vec<Vec<(usize, f64)>> {
    let out_len = in_len.div_ceil(s);
    let scale = 1.0 / s as f64;
    let kernel_width = 4.0 * s as f64;
    let taps = kernel_width.ceil() as i64 + 2;
    let n = in_len as i64;
    (0..out_len)
        .map(|u0| {
            let u = (u0 + 1) as f64;
            // 1-based input coordinate of this output sample.
            let x = u / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (x - kernel_width / 2.0).floor() as i64;
            let mut row: Vec<(usize, f64)> = (0..taps)
                .map(|p| {
                    let idx = left + p;
                    let wgt = scale * cubic(scale * (x - idx as f64));
                    // Mirror 1-based idx into [1, n] by the [1..n, n..1] cycle.
                    let m = (idx - 1).rem_euclid(2 * n);
                    let mirrored = if m < n { m } else { 2 * n - 1 - m };
                    (mirrored as usize, wgt)
                })
                .filter(|(_, w)| *w != 0.0)
                .collect();
            let total: f64 = row.iter().map(|(_, w)| w).sum();
            for (_, w) in &mut row {
                *w /= total;
            }
            row
        })
        .collect()
}

/// Antialiased bicubic downscaling by an integer factor, following the
/// common default-resize convention (cubic a = −0.5, support widened by the
/// factor, symmetric boundaries, half-pixel centers).
pub fn bicubic_downscale(img: &ImagePlane, s: usize) -> Result<ImagePlane> {
    if s != 2 && s != 4 {
        return Err(Error::validation(format!("bicubic scale must be 2 or 4, got {s}")));
    }
    let (h, w) = img.dims();
    let rows = bicubic_contributions(h, s);
    let cols = bicubic_contributions(w, s);
    let src = img.view();

    // Columns first, then rows.
    let ow = cols.len();
    let mut tmp = vec![0.0; h * ow];
    par::for_each_chunk_mut(&mut tmp, ow, |r, out| {
        for (o, taps) in out.iter_mut().zip(&cols) {
            *o = taps.iter().map(|&(c, wgt)| src[[r, c]] * wgt).sum();
        }
    });
    let oh = rows.len();
    let mut out = vec![0.0; oh * ow];
    par::for_each_chunk_mut(&mut out, ow, |u, line| {
        for (c, o) in line.iter_mut().enumerate() {
            *o = rows[u].iter().map(|&(r, wgt)| tmp[r * ow + c] * wgt).sum();
        }
    });
    Ok(ImagePlane::from_array_unchecked(
        Array2::from_shape_vec((oh, ow), out).unwrap(),
    ))
}

/// Per-pixel gradient magnitude `|∂x| + |∂y|` from central differences on
/// the edge-replicated image.
pub fn gradient_content_map(img: &ImagePlane) -> Result<Array2<f64>> {
    let (h, w) = img.dims();
    if h < 3 || w < 3 {
        return Err(Error::validation("gradient map needs at least 3×3"));
    }
    let src = img.view();
    let mut out = vec![0.0; h * w];
    par::for_each_chunk_mut(&mut out, w, |r, line| {
        let up = r.saturating_sub(1);
        let down = (r + 1).min(h - 1);
        for (c, o) in line.iter_mut().enumerate() {
            let left = c.saturating_sub(1);
            let right = (c + 1).min(w - 1);
            let dx = 0.5 * (src[[r, right]] - src[[r, left]]);
            let dy = 0.5 * (src[[down, c]] - src[[up, c]]);
            *o = dx.abs() + dy.abs();
        }
    });
    Ok(Array2::from_shape_vec((h, w), out).unwrap())
}
