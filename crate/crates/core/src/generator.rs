//! The deep linear downscaling generator.
//!
//! Six bias-free convolutions with no activations between them, followed by
//! ×2 subsampling. Being linear and shift-invariant, the whole stack is one
//! 13×13 correlation kernel; [`GeneratorParams::extract_kernel`] computes it
//! by composing the filter banks, and the composition is differentiable so
//! kernel priors can be pushed back onto every filter.

use std::path::Path;

use ndarray::{s, Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conv::{self, FeatureMap};
use crate::error::{Error, Result};
use crate::image::{self, ImagePlane};
use crate::kernel::Kernel;

/// `(out_channels, in_channels, height, width)`.
pub type LayerShape = [usize; 4];

pub const DEEP_SHAPES: [LayerShape; 6] = [
    [64, 1, 7, 7],
    [64, 64, 5, 5],
    [64, 64, 3, 3],
    [64, 64, 1, 1],
    [64, 64, 1, 1],
    [1, 64, 1, 1],
];

pub const SINGLE_LAYER_SHAPES: [LayerShape; 1] = [[1, 1, 13, 13]];

/// Downscaling factor built into the generator.
pub const GENERATOR_SCALE: usize = 2;
/// Init spread relative to a `fan_in^-½` draw.
pub const INIT_NOISE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    Deep,
    SingleLayer,
}

impl GeneratorKind {
    pub fn shapes(self) -> &'static [LayerShape] {
        match self {
            GeneratorKind::Deep => &DEEP_SHAPES,
            GeneratorKind::SingleLayer => &SINGLE_LAYER_SHAPES,
        }
    }
}

/// Filter banks of a linear generator, applied first to last.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    layers: Vec<Array4<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ShapeManifest {
    layers: Vec<LayerShape>,
}

/// Intermediate compositions kept for the backward pass of extraction.
/// `partials[l]` is the composition of layers `l..` seen from the output,
/// shaped `(out_channels of layer l, h, w)`.
#[derive(Debug, Clone)]
pub struct ExtractionTape {
    partials: Vec<Array3<f64>>,
}

impl GeneratorParams {
    pub fn from_layers(layers: Vec<Array4<f64>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::validation("generator needs at least one layer"));
        }
        if layers[0].dim().1 != 1 || layers.last().unwrap().dim().0 != 1 {
            return Err(Error::validation("generator must map one channel to one channel"));
        }
        for pair in layers.windows(2) {
            if pair[0].dim().0 != pair[1].dim().1 {
                return Err(Error::validation(format!(
                    "channel mismatch between layers: {:?} → {:?}",
                    pair[0].dim(),
                    pair[1].dim()
                )));
            }
        }
        if layers.iter().any(|l| l.dim().2 % 2 == 0 || l.dim().3 % 2 == 0) {
            return Err(Error::validation("filter sides must be odd"));
        }
        if layers.iter().flat_map(|l| l.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite generator weight"));
        }
        Ok(Self { layers })
    }

    /// Deep generator with [`GeneratorParams::init`].
    pub fn deep(seed: u64) -> Self {
        Self::init(GeneratorKind::Deep, seed)
    }

    /// One 13×13 stride-2 filter, for the depth ablation.
    pub fn single_layer(seed: u64) -> Self {
        Self::init(GeneratorKind::SingleLayer, seed)
    }

    /// Filters drawn from `N(1/fan_in, (INIT_NOISE·fan_in^-½)²)`, then scaled
    /// to a unit-sum composite kernel. The mean path composes into a smooth
    /// centered bump; a zero-mean draw would make the unit sum a cancellation
    /// of cells tens of times larger than the kernel's mass.
    pub fn init(kind: GeneratorKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers: Vec<Array4<f64>> = kind
            .shapes()
            .iter()
            .map(|&[o, i, h, w]| {
                let fan_in = (i * h * w) as f64;
                let (mean, std) = (1.0 / fan_in, INIT_NOISE / fan_in.sqrt());
                Array4::from_shape_fn((o, i, h, w), |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mean + z * std
                })
            })
            .collect();
        // Equalize layer RMS (their product, hence the kernel, is unchanged)
        // so a fixed optimizer step is the same relative change everywhere.
        let rms: Vec<f64> = layers
            .iter()
            .map(|l| (l.iter().map(|v| v * v).sum::<f64>() / l.len() as f64).sqrt())
            .collect();
        let geo = (rms.iter().map(|r| r.ln()).sum::<f64>() / rms.len() as f64).exp();
        for (l, r) in layers.iter_mut().zip(&rms) {
            l.mapv_inplace(|v| v * geo / r);
        }
        let mut p = Self { layers };
        let total = p.extract_kernel().sum();
        let per_layer = total.abs().recip().powf(1.0 / p.layers.len() as f64);
        for l in &mut p.layers {
            l.mapv_inplace(|v| v * per_layer);
        }
        if total < 0.0 {
            p.layers.last_mut().unwrap().mapv_inplace(|v| -v);
        }
        p
    }

    pub fn layers(&self) -> &[Array4<f64>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Array4<f64>] {
        &mut self.layers
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers
            .iter()
            .map(|l| {
                let (o, i, h, w) = l.dim();
                [o, i, h, w]
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    /// `(height, width)` of the composite receptive field.
    pub fn receptive_field(&self) -> (usize, usize) {
        self.layers.iter().fold((1, 1), |(h, w), l| {
            let (_, _, kh, kw) = l.dim();
            (h + kh - 1, w + kw - 1)
        })
    }

    /// Runs the filter stack literally: every layer as a valid
    /// correlation, then keep even rows/cols.
    pub fn forward(&self, crop: &ImagePlane) -> Result<ImagePlane> {
        let (rh, rw) = self.receptive_field();
        if crop.height() <= rh || crop.width() <= rw {
            return Err(Error::validation(format!(
                "generator input {}×{} too small for receptive field {rh}×{rw}",
                crop.height(),
                crop.width()
            )));
        }
        let mut x = FeatureMap::from_plane(crop.view());
        for layer in &self.layers {
            x = conv::conv2d(&x, layer.view(), 0);
        }
        let full = x.to_plane();
        let sub = full
            .slice(s![..;GENERATOR_SCALE, ..;GENERATOR_SCALE])
            .to_owned();
        Ok(ImagePlane::from_array_unchecked(sub))
    }

    /// The same map as [`forward`](Self::forward), computed through the
    /// extracted kernel. Cheaper by orders of magnitude; training uses it.
    pub fn downscale(&self, crop: &ImagePlane) -> Result<ImagePlane> {
        let (rh, rw) = self.receptive_field();
        if crop.height() <= rh || crop.width() <= rw {
            return Err(Error::validation(format!(
                "generator input {}×{} too small for receptive field {rh}×{rw}",
                crop.height(),
                crop.width()
            )));
        }
        image::downscale_with_kernel(crop, &self.extract_kernel(), GENERATOR_SCALE)
    }

    /// Product of the layers' absolute sums, an entrywise bound on the
    /// extracted kernel. Finite exactly when extraction cannot overflow.
    pub fn composite_bound(&self) -> f64 {
        self.layers.iter().map(|l| l.iter().map(|v| v.abs()).sum::<f64>()).product()
    }

    /// Collapses all filters into the single kernel `K` with
    /// `forward(x) = downscale_with_kernel(x, K, 2)`.
    pub fn extract_kernel(&self) -> Kernel {
        self.extract_with_tape().0
    }

    pub fn extract_with_tape(&self) -> (Kernel, ExtractionTape) {
        let mut acc = Array3::from_elem((1, 1, 1), 1.0);
        let mut partials = vec![Array3::zeros((0, 0, 0)); self.layers.len()];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let next = compose_layer(&acc, layer);
            partials[l] = std::mem::replace(&mut acc, next);
        }
        let k = acc.index_axis_move(Axis(0), 0);
        (
            Kernel::new(k).expect("odd filters compose to an odd kernel"),
            ExtractionTape { partials },
        )
    }

    /// Backpropagates `dL/dK` through extraction to every filter bank.
    pub fn kernel_backward(&self, tape: &ExtractionTape, dk: &Array2<f64>) -> Vec<Array4<f64>> {
        let mut grads = vec![Array4::zeros((0, 0, 0, 0)); self.layers.len()];
        let mut d_acc = dk.clone().insert_axis(Axis(0));
        for (l, layer) in self.layers.iter().enumerate() {
            let (d_prev, d_w) = compose_layer_backward(&tape.partials[l], layer, &d_acc);
            grads[l] = d_w;
            d_acc = d_prev;
        }
        grads
    }

    /// Writes `generator.json` (layer shapes) and `generator.raw` (all
    /// weights, layer after layer, as one row).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = ShapeManifest {
            layers: self.shapes(),
        };
        let json_path = dir.join("generator.json");
        let json = serde_json::to_string_pretty(&manifest).expect("shapes serialize");
        std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
        let flat: Vec<f64> = self.layers.iter().flat_map(|l| l.iter().copied()).collect();
        let row = Array2::from_shape_vec((1, flat.len()), flat).unwrap();
        image::write_raw(dir.join("generator.raw"), row.view())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let json_path = dir.join("generator.json");
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let manifest: ShapeManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            what: json_path.display().to_string(),
            message: e.to_string(),
        })?;
        let flat = image::read_raw(dir.join("generator.raw"))?;
        let mut values = flat.iter().copied();
        let mut layers = Vec::new();
        for [o, i, h, w] in manifest.layers {
            let chunk: Vec<f64> = values.by_ref().take(o * i * h * w).collect();
            layers.push(Array4::from_shape_vec((o, i, h, w), chunk).map_err(|e| {
                Error::Parse {
                    what: "generator.raw".into(),
                    message: e.to_string(),
                }
            })?);
        }
        if values.next().is_some() {
            return Err(Error::Parse {
                what: "generator.raw".into(),
                message: "more weights than the manifest describes".into(),
            });
        }
        Self::from_layers(layers)
    }
}

/// `B[c, t] = Σ_d Σ_{u+v=t} A[d, u] · W[d, c, v]`, computed as the product
/// `M = Aᵀ·W` over channels `d` followed by scattering `M[u, (c, v)]` onto
/// `B[c, u + v]`.
fn compose_layer(acc: &Array3<f64>, layer: &Array4<f64>) -> Array3<f64> {
    let (d_n, ah, aw) = acc.dim();
    let (o, c_n, kh, kw) = layer.dim();
    debug_assert_eq!(d_n, o);
    let (bh, bw) = (ah + kh - 1, aw + kw - 1);
    let a = acc.view().into_shape_with_order((d_n, ah * aw)).unwrap();
    let w = layer.view().into_shape_with_order((d_n, c_n * kh * kw)).unwrap();
    let m = a.t().dot(&w);
    let m = m.as_slice().unwrap();
    let v_n = kh * kw;
    let mut out = vec![0.0; c_n * bh * bw];
    for u in 0..ah * aw {
        let (ua, ub) = (u / aw, u % aw);
        let row = &m[u * c_n * v_n..(u + 1) * c_n * v_n];
        for c in 0..c_n {
            let plane = &mut out[c * bh * bw..(c + 1) * bh * bw];
            for va in 0..kh {
                let dst = &mut plane[(ua + va) * bw + ub..(ua + va) * bw + ub + kw];
                let src = &row[c * v_n + va * kw..c * v_n + (va + 1) * kw];
                for (x, y) in dst.iter_mut().zip(src) {
                    *x += y;
                }
            }
        }
    }
    Array3::from_shape_vec((c_n, bh, bw), out).unwrap()
}

/// Gradients of [`compose_layer`] with respect to `acc` and `layer`: with
/// `G[u, (c, v)] = dB[c, u + v]`, `dA = W·Gᵀ` and `dW = A·G`.
fn compose_layer_backward(
    acc: &Array3<f64>,
    layer: &Array4<f64>,
    d_out: &Array3<f64>,
) -> (Array3<f64>, Array4<f64>) {
    let (d_n, ah, aw) = acc.dim();
    let (_, c_n, kh, kw) = layer.dim();
    let (_, bh, bw) = d_out.dim();
    let v_n = kh * kw;
    let db = d_out.as_standard_layout();
    let db = db.as_slice().unwrap();
    let mut g = vec![0.0; ah * aw * c_n * v_n];
    for u in 0..ah * aw {
        let (ua, ub) = (u / aw, u % aw);
        let row = &mut g[u * c_n * v_n..(u + 1) * c_n * v_n];
        for c in 0..c_n {
            for va in 0..kh {
                let base = c * bh * bw + (ua + va) * bw + ub;
                row[c * v_n + va * kw..c * v_n + (va + 1) * kw].copy_from_slice(&db[base..base + kw]);
            }
        }
    }
    let g = Array2::from_shape_vec((ah * aw, c_n * v_n), g).unwrap();
    let a = acc.view().into_shape_with_order((d_n, ah * aw)).unwrap();
    let w = layer.view().into_shape_with_order((d_n, c_n * v_n)).unwrap();
    let d_acc = w.dot(&g.t()).into_shape_with_order((d_n, ah, aw)).unwrap();
    let d_layer = a.dot(&g).into_shape_with_order((d_n, c_n, kh, kw)).unwrap();
    (d_acc, d_layer)
}

pub fn init_generator(seed: u64) -> GeneratorParams {
    GeneratorParams::deep(seed)
}

pub fn single_layer_generator(seed: u64) -> GeneratorParams {
    GeneratorParams::single_layer(seed)
}

pub fn generator_forward(p: &GeneratorParams, crop: &ImagePlane) -> Result<ImagePlane> {
    p.forward(crop)
}

pub fn extract_kernel(p: &GeneratorParams) -> Kernel {
    p.extract_kernel()
}

/// Deep-architecture parameters whose composite kernel is exactly `target`
/// (13×13). Offsets split as `p = a + b + c` with `a` in the 7×7 layer,
/// `b ∈ {0, 4}` in the 5×5 layer and `c ∈ {0, 2}` in the 3×3 layer; each of
/// the 16 `(b, c)` groups rides its own channel and the 1×1 layers pass
/// those channels through and sum them.
pub fn embed_kernel(target: &Kernel) -> Result<GeneratorParams> {
    if target.dims() != (13, 13) {
        return Err(Error::validation("embedding expects a 13×13 kernel"));
    }
    let split = |p: usize| {
        let c = if p >= 11 { 2 } else { 0 };
        let b = if p - c >= 7 { 4 } else { 0 };
        (p - b - c, b, c)
    };
    let mut l1 = Array4::zeros((64, 1, 7, 7));
    let mut l2 = Array4::zeros((64, 64, 5, 5));
    let mut l3 = Array4::zeros((64, 64, 3, 3));
    let mut l4 = Array4::zeros((64, 64, 1, 1));
    let mut l5 = Array4::zeros((64, 64, 1, 1));
    let mut l6 = Array4::zeros((1, 64, 1, 1));
    let group = |b: usize, c: usize| (b / 4) * 2 + c / 2;
    for ((pi, pj), &v) in target.weights().indexed_iter() {
        let (ai, bi, ci) = split(pi);
        let (aj, bj, cj) = split(pj);
        let g = group(bi, ci) * 4 + group(bj, cj);
        l1[[g, 0, ai, aj]] = v;
        l2[[g, g, bi, bj]] = 1.0;
        l3[[g, g, ci, cj]] = 1.0;
    }
    for g in 0..16 {
        l4[[g, g, 0, 0]] = 1.0;
        l5[[g, g, 0, 0]] = 1.0;
        l6[[0, g, 0, 0]] = 1.0;
    }
    GeneratorParams::from_layers(vec![l1, l2, l3, l4, l5, l6])
}
