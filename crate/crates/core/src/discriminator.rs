//! Fully-convolutional patch discriminator.
//!
//! A 7×7 convolution (zero-padded to keep the spatial size), five 1×1 blocks
//! of spectral norm → batch norm → ReLU, and a final 1×1 convolution with a
//! sigmoid. The receptive field is exactly 7×7, so every output pixel scores
//! one input patch. Backward passes are written out by hand.

use std::path::Path;

use ndarray::{Array1, Array2, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conv::{self, FeatureMap};
use crate::error::{Error, Result};
use crate::image::{self, ImagePlane};

pub const CHANNELS: usize = 64;
pub const FIRST_KERNEL: usize = 7;
pub const HIDDEN_BLOCKS: usize = 5;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const INIT_STD: f64 = 0.02;
const SN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, one power iteration per forward, running stats
    /// updated.
    Train,
    /// Running statistics and stored power vectors; nothing is mutated.
    Eval,
}

/// Per-pixel realness map with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct DMap(Array2<f64>);

impl DMap {
    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn mean(&self) -> f64 {
        self.0.mean().unwrap_or(0.0)
    }
}

/// One spectral-norm / batch-norm / ReLU block over a 1×1 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenBlock {
    /// Raw (un-normalized) 1×1 filters, `out × in`.
    pub weight: Array2<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    /// Left and right power-iteration vectors.
    pub u: Array1<f64>,
    pub v: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    /// `(64, 1, 7, 7)`.
    pub first: Array4<f64>,
    pub first_bias: Array1<f64>,
    pub hidden: Vec<HiddenBlock>,
    /// `1 × 64`.
    pub last: Array2<f64>,
    pub last_bias: Array1<f64>,
}

/// Gradients for every trainable tensor, in [`DiscriminatorParams::trainable_mut`] order.
#[derive(Debug, Clone)]
pub struct DiscriminatorGrads {
    pub tensors: Vec<Vec<f64>>,
}

impl DiscriminatorGrads {
    pub fn add_assign(&mut self, other: &DiscriminatorGrads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

struct BlockCache {
    w_sn: Array2<f64>,
    sigma: f64,
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardCache {
    h: usize,
    w: usize,
    cols: Array2<f64>,
    /// `acts[0]` is the first layer's output, `acts[i + 1]` block `i`'s.
    acts: Vec<Array2<f64>>,
    blocks: Vec<BlockCache>,
    out: Array2<f64>,
}

impl DiscriminatorParams {
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).unwrap();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| normal.sample(&mut rng)).collect() };
        let first = Array4::from_shape_vec(
            (CHANNELS, 1, FIRST_KERNEL, FIRST_KERNEL),
            draw(CHANNELS * FIRST_KERNEL * FIRST_KERNEL),
        )
        .unwrap();
        let hidden_weights: Vec<Array2<f64>> = (0..HIDDEN_BLOCKS)
            .map(|_| Array2::from_shape_vec((CHANNELS, CHANNELS), draw(CHANNELS * CHANNELS)).unwrap())
            .collect();
        let last = Array2::from_shape_vec((1, CHANNELS), draw(CHANNELS)).unwrap();
        let hidden = hidden_weights
            .into_iter()
            .map(|weight| HiddenBlock {
                weight,
                gamma: Array1::ones(CHANNELS),
                beta: Array1::zeros(CHANNELS),
                running_mean: Array1::zeros(CHANNELS),
                running_var: Array1::ones(CHANNELS),
                u: random_unit(CHANNELS, &mut rng),
                v: random_unit(CHANNELS, &mut rng),
            })
            .collect();
        Self {
            first,
            first_bias: Array1::zeros(CHANNELS),
            hidden,
            last,
            last_bias: Array1::zeros(1),
        }
    }

    /// Number of convolution blocks (first + hidden + last).
    pub fn num_blocks(&self) -> usize {
        self.hidden.len() + 2
    }

    pub fn receptive_field(&self) -> usize {
        self.first.dim().2
    }

    /// Forward pass; in [`Mode::Train`] this advances power iteration and
    /// running statistics.
    pub fn forward(&mut self, crop: &ImagePlane, mode: Mode) -> Result<(DMap, ForwardCache)> {
        self.check_input(crop)?;
        if mode == Mode::Train {
            for b in &mut self.hidden {
                power_iteration(&b.weight, &mut b.u, &mut b.v);
            }
        }
        let (map, cache, stats) = self.run(crop, mode);
        if mode == Mode::Train {
            for (b, (mean, var)) in self.hidden.iter_mut().zip(stats) {
                let n = (cache.h * cache.w) as f64;
                let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                for ch in 0..CHANNELS {
                    b.running_mean[ch] = (1.0 - BN_MOMENTUM) * b.running_mean[ch] + BN_MOMENTUM * mean[ch];
                    b.running_var[ch] =
                        (1.0 - BN_MOMENTUM) * b.running_var[ch] + BN_MOMENTUM * var[ch] * unbiased;
                }
            }
        }
        Ok((map, cache))
    }

    /// Evaluation-mode forward without touching any state.
    pub fn evaluate(&self, crop: &ImagePlane) -> Result<DMap> {
        self.check_input(crop)?;
        Ok(self.run(crop, Mode::Eval).0)
    }

    /// Evaluation-mode forward that also returns the cache for backward.
    pub fn evaluate_with_cache(&self, crop: &ImagePlane) -> Result<(DMap, ForwardCache)> {
        self.check_input(crop)?;
        let (m, c, _) = self.run(crop, Mode::Eval);
        Ok((m, c))
    }

    fn check_input(&self, crop: &ImagePlane) -> Result<()> {
        let rf = self.receptive_field();
        if crop.height() < rf || crop.width() < rf {
            return Err(Error::validation(format!(
                "discriminator input {}×{} smaller than {rf}×{rf}",
                crop.height(),
                crop.width()
            )));
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn run(&self, crop: &ImagePlane, mode: Mode) -> (DMap, ForwardCache, Vec<(Vec<f64>, Vec<f64>)>) {
        let (h, w) = crop.dims();
        let n = h * w;
        let pad = FIRST_KERNEL / 2;
        let x = FeatureMap::from_plane(crop.view());
        let cols = conv::im2col(&x, FIRST_KERNEL, FIRST_KERNEL, pad);
        let mut first = conv::filter_matrix(self.first.view()).dot(&cols);
        add_bias(&mut first, &self.first_bias);

        let mut acts = Vec::with_capacity(self.hidden.len() + 1);
        acts.push(first);
        let mut blocks = Vec::with_capacity(self.hidden.len());
        let mut stats = Vec::with_capacity(self.hidden.len());
        for b in &self.hidden {
            let sigma = b.u.dot(&b.weight.dot(&b.v));
            let w_sn = &b.weight / (sigma + SN_EPS);
            // z is normalized in place into x̂.
            let mut xhat = w_sn.dot(acts.last().unwrap());
            let mut out = Array2::zeros((CHANNELS, n));
            let mut means = Vec::with_capacity(CHANNELS);
            let mut vars = Vec::with_capacity(CHANNELS);
            let mut inv_std = Vec::with_capacity(CHANNELS);
            for (ch, (mut row, mut o)) in xhat.outer_iter_mut().zip(out.outer_iter_mut()).enumerate() {
                let (mean, var) = match mode {
                    Mode::Train => {
                        let m = row.sum() / n as f64;
                        let v = row.iter().map(|z| (z - m) * (z - m)).sum::<f64>() / n as f64;
                        (m, v)
                    }
                    Mode::Eval => (b.running_mean[ch], b.running_var[ch]),
                };
                let is = 1.0 / (var + BN_EPS).sqrt();
                let (g, be) = (b.gamma[ch], b.beta[ch]);
                for (z, y) in row.iter_mut().zip(o.iter_mut()) {
                    *z = (*z - mean) * is;
                    *y = (g * *z + be).max(0.0);
                }
                means.push(mean);
                vars.push(var);
                inv_std.push(is);
            }
            stats.push((means, vars));
            acts.push(out);
            blocks.push(BlockCache {
                w_sn,
                sigma,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            });
        }

        let mut logits = self.last.dot(acts.last().unwrap());
        add_bias(&mut logits, &self.last_bias);
        let out = logits.mapv(sigmoid);
        let map = DMap(Array2::from_shape_vec((h, w), out.row(0).to_vec()).unwrap());
        (
            map,
            ForwardCache {
                h,
                w,
                cols,
                acts,
                blocks,
                out,
            },
            stats,
        )
    }

    /// Backward pass from `dL/dDMap`. Returns parameter gradients (empty when
    /// `param_grads` is false) and `dL/dinput`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_map: &Array2<f64>,
        param_grads: bool,
    ) -> (Option<DiscriminatorGrads>, Array2<f64>) {
        let n = cache.h * cache.w;
        let nn = n as f64;
        let d_logits = Array2::from_shape_fn((1, n), |(_, p)| {
            let s = cache.out[[0, p]];
            d_map[[p / cache.w, p % cache.w]] * s * (1.0 - s)
        });

        let mut hidden_grads: Vec<[Vec<f64>; 3]> = Vec::new();
        let top = cache.acts.last().unwrap();
        let (d_last, d_last_bias) = if param_grads {
            (
                d_logits.dot(&top.t()).into_raw_vec_and_offset().0,
                vec![d_logits.sum()],
            )
        } else {
            (Vec::new(), Vec::new())
        };
        let mut d_act = self.last.t().dot(&d_logits);

        for (i, (b, c)) in self.hidden.iter().zip(&cache.blocks).enumerate().rev() {
            let out = &cache.acts[i + 1];
            let input = &cache.acts[i];
            let mut d_gamma = vec![0.0; CHANNELS];
            let mut d_beta = vec![0.0; CHANNELS];
            // d_act becomes dL/dz in place.
            for ch in 0..CHANNELS {
                let mut row = d_act.row_mut(ch);
                let xh = c.xhat.row(ch);
                let o = out.row(ch);
                let (mut sg, mut sb) = (0.0, 0.0);
                for ((d, &x), &y) in row.iter_mut().zip(xh).zip(o) {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                    sg += *d * x;
                    sb += *d;
                }
                d_gamma[ch] = sg;
                d_beta[ch] = sb;
                let g = b.gamma[ch];
                let is = c.inv_std[ch];
                if c.batch_stats {
                    // Σ dx̂ = γ·Σ dy and Σ dx̂·x̂ = γ·Σ dy·x̂.
                    let (sum_dx, sum_dx_xhat) = (g * sb, g * sg);
                    for (d, &x) in row.iter_mut().zip(xh) {
                        *d = (g * *d * nn - sum_dx - x * sum_dx_xhat) * is / nn;
                    }
                } else {
                    for d in row.iter_mut() {
                        *d *= g * is;
                    }
                }
            }
            let d_z = d_act;
            if param_grads {
                let d_wsn = d_z.dot(&input.t());
                // W_sn = W / σ with σ = uᵀWv.
                let s = c.sigma + SN_EPS;
                let inner: f64 = (&d_wsn * &b.weight).sum();
                let k = inner / (s * s);
                let d_w = Array2::from_shape_fn((CHANNELS, CHANNELS), |(r, q)| {
                    d_wsn[[r, q]] / s - k * b.u[r] * b.v[q]
                });
                hidden_grads.push([d_w.into_raw_vec_and_offset().0, d_gamma, d_beta]);
            }
            d_act = c.w_sn.t().dot(&d_z);
        }
        hidden_grads.reverse();

        let first_mat = conv::filter_matrix(self.first.view());
        let d_cols = first_mat.t().dot(&d_act);
        let pad = FIRST_KERNEL / 2;
        let d_input = conv::col2im(d_cols.view(), 1, cache.h, cache.w, FIRST_KERNEL, FIRST_KERNEL, pad)
            .to_plane();

        let grads = param_grads.then(|| {
            let mut tensors = vec![
                d_act.dot(&cache.cols.t()).into_raw_vec_and_offset().0,
                d_act.sum_axis(Axis(1)).to_vec(),
            ];
            for [dw, dg, db] in hidden_grads {
                tensors.push(dw);
                tensors.push(dg);
                tensors.push(db);
            }
            tensors.push(d_last);
            tensors.push(d_last_bias);
            DiscriminatorGrads { tensors }
        });
        (grads, d_input)
    }

    /// Trainable tensors as flat slices: first filters, first bias, then for
    /// each hidden block (weight, gamma, beta), then last filters and bias.
    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.first.as_slice_mut().unwrap(),
            self.first_bias.as_slice_mut().unwrap(),
        ];
        for b in &mut self.hidden {
            out.push(b.weight.as_slice_mut().unwrap());
            out.push(b.gamma.as_slice_mut().unwrap());
            out.push(b.beta.as_slice_mut().unwrap());
        }
        out.push(self.last.as_slice_mut().unwrap());
        out.push(self.last_bias.as_slice_mut().unwrap());
        out
    }

    /// Largest singular value of each hidden block's normalized weight,
    /// `W / (uᵀWv)`, by a long power iteration.
    pub fn normalized_spectral_norms(&self) -> Vec<f64> {
        self.hidden
            .iter()
            .map(|b| {
                let sigma = b.u.dot(&b.weight.dot(&b.v)) + SN_EPS;
                top_singular_value(&(&b.weight / sigma), 200)
            })
            .collect()
    }

    fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = vec![
            ("first".to_string(), self.first.shape().to_vec(), self.first.iter().copied().collect()),
            ("first_bias".to_string(), vec![CHANNELS], self.first_bias.to_vec()),
        ];
        for (i, b) in self.hidden.iter().enumerate() {
            let n = i + 2;
            out.push((format!("block{n}.weight"), b.weight.shape().to_vec(), b.weight.iter().copied().collect()));
            for (name, t) in [
                ("gamma", &b.gamma),
                ("beta", &b.beta),
                ("running_mean", &b.running_mean),
                ("running_var", &b.running_var),
                ("u", &b.u),
                ("v", &b.v),
            ] {
                out.push((format!("block{n}.{name}"), vec![t.len()], t.to_vec()));
            }
        }
        out.push(("last".to_string(), self.last.shape().to_vec(), self.last.iter().copied().collect()));
        out.push(("last_bias".to_string(), vec![1], self.last_bias.to_vec()));
        out
    }

    /// Writes `discriminator.json` (tensor names and shapes) and
    /// `discriminator.raw` (all values in that order, one row).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tensors = self.named_tensors();
        let manifest = TensorManifest {
            tensors: tensors
                .iter()
                .map(|(name, shape, _)| TensorEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                })
                .collect(),
        };
        let json_path = dir.join("discriminator.json");
        std::fs::write(&json_path, serde_json::to_string_pretty(&manifest).unwrap())
            .map_err(|e| Error::io(&json_path, e))?;
        let flat: Vec<f64> = tensors.into_iter().flat_map(|(_, _, v)| v).collect();
        let row = Array2::from_shape_vec((1, flat.len()), flat).unwrap();
        image::write_raw(dir.join("discriminator.raw"), row.view())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let json_path = dir.join("discriminator.json");
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let manifest: TensorManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            what: json_path.display().to_string(),
            message: e.to_string(),
        })?;
        let flat = image::read_raw(dir.join("discriminator.raw"))?;
        let mut values = flat.iter().copied();
        let mut p = Self::init(0);
        let expected = p.named_tensors();
        if expected.len() != manifest.tensors.len() {
            return Err(Error::Parse {
                what: json_path.display().to_string(),
                message: "unexpected tensor count".into(),
            });
        }
        let mut loaded: Vec<Vec<f64>> = Vec::new();
        for ((name, shape, _), entry) in expected.iter().zip(&manifest.tensors) {
            if *name != entry.name || *shape != entry.shape {
                return Err(Error::Parse {
                    what: json_path.display().to_string(),
                    message: format!("tensor {} has unexpected name or shape", entry.name),
                });
            }
            let n: usize = shape.iter().product();
            let chunk: Vec<f64> = values.by_ref().take(n).collect();
            if chunk.len() != n {
                return Err(Error::Parse {
                    what: "discriminator.raw".into(),
                    message: "truncated payload".into(),
                });
            }
            loaded.push(chunk);
        }
        let mut it = loaded.into_iter();
        let mut fill = |dst: &mut [f64]| dst.copy_from_slice(&it.next().unwrap());
        fill(p.first.as_slice_mut().unwrap());
        fill(p.first_bias.as_slice_mut().unwrap());
        for b in &mut p.hidden {
            fill(b.weight.as_slice_mut().unwrap());
            fill(b.gamma.as_slice_mut().unwrap());
            fill(b.beta.as_slice_mut().unwrap());
            fill(b.running_mean.as_slice_mut().unwrap());
            fill(b.running_var.as_slice_mut().unwrap());
            fill(b.u.as_slice_mut().unwrap());
            fill(b.v.as_slice_mut().unwrap());
        }
        fill(p.last.as_slice_mut().unwrap());
        fill(p.last_bias.as_slice_mut().unwrap());
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorManifest {
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn add_bias(x: &mut Array2<f64>, bias: &Array1<f64>) {
    *x += &bias.view().insert_axis(Axis(1));
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let v = Array1::from_shape_fn(n, |_| {
        let z: f64 = StandardNormal.sample(rng);
        z
    });
    normalized(v)
}

fn normalized(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    v / (n + SN_EPS)
}

/// One power-iteration step on `w` (rows = outputs): `v ← Wᵀu/‖·‖`,
/// `u ← Wv/‖·‖`.
pub fn power_iteration(w: &Array2<f64>, u: &mut Array1<f64>, v: &mut Array1<f64>) {
    *v = normalized(w.t().dot(u));
    *u = normalized(w.dot(v));
}

/// Spectral normalization of a filter bank reshaped to `out × (in·h·w)`:
/// runs `iterations` power steps on `(u, v)` and divides by `σ̂ = uᵀWv`.
pub fn spectral_normalize(
    bank: &Array4<f64>,
    u: &mut Array1<f64>,
    v: &mut Array1<f64>,
    iterations: usize,
) -> (Array4<f64>, f64) {
    let w = conv::filter_matrix(bank.view());
    for _ in 0..iterations {
        power_iteration(&w, u, v);
    }
    let sigma = u.dot(&w.dot(v));
    (bank / (sigma + SN_EPS), sigma)
}

/// Top singular value by power iteration on `WᵀW` from a fixed start.
pub fn top_singular_value(w: &Array2<f64>, iterations: usize) -> f64 {
    let n = w.ncols();
    let mut v = normalized(Array1::from_shape_fn(n, |i| 1.0 + (i as f64 * 0.37).sin()));
    let mut s = 0.0;
    for _ in 0..iterations {
        let wv = w.dot(&v);
        s = wv.dot(&wv).sqrt();
        v = normalized(w.t().dot(&wv));
    }
    s
}

/// Distance between a D-map and a constant label map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialNorm {
    /// Mean absolute difference.
    #[default]
    L1,
    /// Mean squared difference.
    Mse,
}

impl AdversarialNorm {
    /// Loss value and gradient with respect to each map entry.
    pub fn loss(self, map: &DMap, label: f64) -> (f64, Array2<f64>) {
        let vals = map.values();
        let n = vals.len() as f64;
        match self {
            AdversarialNorm::L1 => {
                let loss = vals.iter().map(|v| (v - label).abs()).sum::<f64>() / n;
                let grad = vals.mapv(|v| {
                    let d = v - label;
                    if d > 0.0 {
                        1.0 / n
                    } else if d < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                });
                (loss, grad)
            }
            AdversarialNorm::Mse => {
                let loss = vals.iter().map(|v| (v - label).powi(2)).sum::<f64>() / n;
                (loss, vals.mapv(|v| 2.0 * (v - label) / n))
            }
        }
    }
}

pub fn init_discriminator(seed: u64) -> DiscriminatorParams {
    DiscriminatorParams::init(seed)
}

pub fn discriminator_forward(
    p: &mut DiscriminatorParams,
    crop: &ImagePlane,
    mode: Mode,
) -> Result<DMap> {
    Ok(p.forward(crop, mode)?.0)
}
