//! Test-time adversarial training of the generator/discriminator pair on a
//! single image, and kernel post-processing.

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator::{AdversarialNorm, DMap, DiscriminatorParams, ForwardCache, Mode};
use crate::error::{Error, Result};
use crate::generator::{GeneratorKind, GeneratorParams, GENERATOR_SCALE};
use crate::image::{self, CropSpec, ImagePlane};
use crate::kernel::{self, Kernel, RegWeights};
use crate::optim::Adam;

/// Cells with magnitude below this are zeroed during post-processing.
pub const NEGLIGIBLE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub g_lr: f64,
    pub d_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub reg_weights: RegWeights,
    pub g_crop: usize,
    pub d_crop: usize,
    pub bootstrap_iters: usize,
    pub bootstrap_weight: f64,
    pub bootstrap_exit_threshold: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub generator: GeneratorKind,
    pub adversarial_norm: AdversarialNorm,
    pub prior_reduction: PriorReduction,
}

/// How the two per-cell priors (boundaries and sparsity) are reduced over
/// kernel cells in the training objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorReduction {
    /// Sum over cells. The sparsity sum outweighs the unit-sum term, and
    /// since batch norm makes the discriminator blind to global intensity
    /// the kernel decays toward zero.
    Sum,
    /// Per-cell mean.
    #[default]
    Mean,
}

impl TrainConfig {
    /// Regularizer weights as applied to a kernel with `cells` entries.
    pub fn effective_reg_weights(&self, cells: usize) -> RegWeights {
        let mut w = self.reg_weights;
        if self.prior_reduction == PriorReduction::Mean {
            w.sparse /= cells as f64;
            w.boundaries /= cells as f64;
        }
        w
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            g_lr: 2e-4,
            d_lr: 2e-4,
            lr_decay_factor: 0.1,
            lr_decay_every: 750,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            reg_weights: RegWeights::default(),
            g_crop: 64,
            // Real crops match G's 26×26 output. At 32 the size difference alone
            // lets D separate real from fake whatever the kernel.
            d_crop: 26,
            bootstrap_iters: 75,
            bootstrap_weight: 5.0,
            bootstrap_exit_threshold: 0.02,
            seed: 0,
            checkpoint_every: 100,
            generator: GeneratorKind::Deep,
            adversarial_norm: AdversarialNorm::L1,
            prior_reduction: PriorReduction::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("g_lr", self.g_lr),
            ("d_lr", self.d_lr),
            ("lr_decay_factor", self.lr_decay_factor),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
            ("adam_eps", self.adam_eps),
            ("bootstrap_weight", self.bootstrap_weight),
            ("bootstrap_exit_threshold", self.bootstrap_exit_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.adam_beta1 >= 1.0 || self.adam_beta2 >= 1.0 {
            return Err(Error::validation("adam betas must be below 1"));
        }
        if self.iterations == 0 || self.lr_decay_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::validation(
                "iterations, lr_decay_every and checkpoint_every must be positive",
            ));
        }
        let w = &self.reg_weights;
        if [w.sum_to_1, w.boundaries, w.sparse, w.center]
            .iter()
            .any(|v| *v < 0.0 || !v.is_finite())
        {
            return Err(Error::validation("regularizer weights must be non-negative"));
        }
        let rf = self.generator.shapes().iter().map(|s| s[2] - 1).sum::<usize>() + 1;
        if self.g_crop <= rf.max(13) {
            return Err(Error::validation(format!("g_crop must be at least 14, got {}", self.g_crop)));
        }
        if self.d_crop < 7 {
            return Err(Error::validation(format!("d_crop must be at least 7, got {}", self.d_crop)));
        }
        Ok(())
    }

    /// `base · factor^⌊t / every⌋`.
    pub fn learning_rate(&self, base: f64, iteration: usize) -> f64 {
        base * self.lr_decay_factor.powi((iteration / self.lr_decay_every) as i32)
    }
}

/// Losses of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub g_loss: f64,
    pub d_loss: f64,
    pub reg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    /// Post-processed ×2 kernel, 13×13, unit sum.
    pub kernel_x2: Kernel,
    /// `compose_scale(kernel_x2)`, 37×37.
    pub kernel_x4: Kernel,
    /// The extracted kernel before post-processing.
    pub raw_kernel: Kernel,
    pub loss_trace: Vec<TraceRow>,
    /// Weighted regularizer of the final raw kernel, with the exact sparsity term.
    pub final_regularization: f64,
    pub iterations_run: usize,
    pub seed: u64,
}

/// Snapshot handed to checkpoint observers.
#[derive(Debug, Clone)]
pub struct Checkpoint<'a> {
    /// Number of completed iterations.
    pub iteration: usize,
    pub kernel: Kernel,
    pub generator: &'a GeneratorParams,
    pub bootstrap_active: bool,
    pub last: TraceRow,
}

/// Crop sampler with probability proportional to the gradient mass inside
/// each candidate window.
#[derive(Debug, Clone)]
pub struct CropSampler {
    size: usize,
    positions_w: usize,
    positions_h: usize,
    weights: Option<WeightedIndex<f64>>,
}

/// Summed-area table with a zero first row and column.
pub fn integral_image(map: &Array2<f64>) -> Array2<f64> {
    let (h, w) = map.dim();
    let mut out = Array2::zeros((h + 1, w + 1));
    for i in 0..h {
        let mut row = 0.0;
        for j in 0..w {
            row += map[[i, j]];
            out[[i + 1, j + 1]] = out[[i, j + 1]] + row;
        }
    }
    out
}

/// Sums of `map` over every `size × size` window, indexed by top-left.
pub fn window_sums(map: &Array2<f64>, size: usize) -> Array2<f64> {
    let (h, w) = map.dim();
    let ii = integral_image(map);
    let (ph, pw) = (h + 1 - size, w + 1 - size);
    Array2::from_shape_fn((ph, pw), |(t, l)| {
        ii[[t + size, l + size]] - ii[[t, l + size]] - ii[[t + size, l]] + ii[[t, l]]
    })
}

impl CropSampler {
    pub fn new(grad_map: &Array2<f64>, size: usize) -> Result<Self> {
        let (h, w) = grad_map.dim();
        if size == 0 || size > h || size > w {
            return Err(Error::validation(format!("cannot take {size}×{size} crops from {h}×{w}")));
        }
        let sums = window_sums(grad_map, size);
        // Cancellation in the summed-area table can leave tiny negatives.
        let cleaned: Vec<f64> = sums.iter().map(|v| v.max(0.0)).collect();
        let weights = if cleaned.iter().sum::<f64>() > 0.0 {
            WeightedIndex::new(cleaned).ok()
        } else {
            None
        };
        Ok(Self {
            size,
            positions_h: h + 1 - size,
            positions_w: w + 1 - size,
            weights,
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> CropSpec {
        let n = self.positions_h * self.positions_w;
        let idx = match &self.weights {
            Some(wi) => wi.sample(rng),
            None => rng.random_range(0..n),
        };
        CropSpec::new(idx / self.positions_w, idx % self.positions_w, self.size)
    }
}

pub fn sample_crop(
    img: &ImagePlane,
    size: usize,
    grad_map: &Array2<f64>,
    rng: &mut impl Rng,
) -> Result<CropSpec> {
    if grad_map.dim() != img.dims() {
        return Err(Error::validation("gradient map and image dims differ"));
    }
    Ok(CropSampler::new(grad_map, size)?.sample(rng))
}

/// `dL/dK` for `out = downscale_with_kernel(crop, K, s)` given `dL/dout`.
fn kernel_grad_from_output(crop: &ImagePlane, d_out: &Array2<f64>, kh: usize, kw: usize, s: usize) -> Array2<f64> {
    let src = crop.view();
    let (oh, ow) = d_out.dim();
    Array2::from_shape_fn((kh, kw), |(a, b)| {
        let mut acc = 0.0;
        for i in 0..oh {
            for j in 0..ow {
                acc += d_out[[i, j]] * src[[s * i + a, s * j + b]];
            }
        }
        acc
    })
}

fn d_forward(d: &mut DiscriminatorParams, x: &ImagePlane, mode: Mode) -> Result<(DMap, ForwardCache)> {
    match mode {
        Mode::Train => d.forward(x, mode),
        Mode::Eval => d.evaluate_with_cache(x),
    }
}

/// Value and gradients of the generator objective on one crop.
#[derive(Debug, Clone)]
pub struct GObjective {
    pub adversarial: f64,
    pub bootstrap: f64,
    /// Mean absolute difference to the bicubic target (before weighting).
    pub bootstrap_distance: f64,
    pub reg: f64,
    pub total: f64,
    pub kernel: Kernel,
    pub grads: Vec<ndarray::Array4<f64>>,
}

/// Generator objective `|D(G(crop)) − 1| + bootstrap + R(K)` and its
/// gradient with respect to every generator filter. `D` is not updated,
/// though in [`Mode::Train`] its running state advances.
pub fn g_objective(
    g: &GeneratorParams,
    d: &mut DiscriminatorParams,
    crop: &ImagePlane,
    cfg: &TrainConfig,
    bootstrap: bool,
    mode: Mode,
) -> Result<GObjective> {
    let (k, tape) = g.extract_with_tape();
    let (kh, kw) = k.dims();
    let fake = image::downscale_with_kernel(crop, &k, GENERATOR_SCALE)?;
    let (map, cache) = d_forward(d, &fake, mode)?;
    let (adversarial, d_map) = cfg.adversarial_norm.loss(&map, 1.0);
    let (_, mut d_fake) = d.backward(&cache, &d_map, false);

    let target = bicubic_target(crop, kh)?;
    let diff = fake.as_array() - target.as_array();
    let n = diff.len() as f64;
    let bootstrap_distance = diff.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mut boot_value = 0.0;
    if bootstrap {
        boot_value = cfg.bootstrap_weight * bootstrap_distance;
        let scale = cfg.bootstrap_weight / n;
        d_fake.zip_mut_with(&diff, |g, &v| {
            if v != 0.0 {
                *g += scale * v.signum();
            }
        });
    }

    let mut dk = kernel_grad_from_output(crop, &d_fake, kh, kw, GENERATOR_SCALE);
    let mut weights = cfg.effective_reg_weights(kh * kw);
    if bootstrap {
        // The centroid is singular where the kernel sums to zero, and both it
        // and sparsity fight the bootstrap; they join once it is discarded.
        weights.sparse = 0.0;
        weights.center = 0.0;
    }
    let (reg, d_reg) = kernel::regularization_with_grad(&k, &weights)?;
    dk += &d_reg;
    let grads = g.kernel_backward(&tape, &dk);
    Ok(GObjective {
        adversarial,
        bootstrap: boot_value,
        bootstrap_distance,
        reg,
        total: adversarial + boot_value + reg,
        kernel: k,
        grads,
    })
}

/// Target of the bootstrap term: the crop downscaled by a pixel-centered
/// cubic kernel of the generator's size, so both outputs share a grid.
fn bicubic_target(crop: &ImagePlane, size: usize) -> Result<ImagePlane> {
    image::downscale_with_kernel(crop, &kernel::bicubic_kernel(GENERATOR_SCALE, size)?, GENERATOR_SCALE)
}

/// Discriminator objective `|D(real) − 1| + |D(fake)|` and its gradients,
/// running `D` in the given mode.
pub fn d_objective(
    d: &mut DiscriminatorParams,
    real: &ImagePlane,
    fake: &ImagePlane,
    norm: AdversarialNorm,
    mode: Mode,
) -> Result<(f64, crate::discriminator::DiscriminatorGrads)> {
    let (map_r, cache_r) = d_forward(d, real, mode)?;
    let (loss_r, grad_r) = norm.loss(&map_r, 1.0);
    let (mut grads, _) = d.backward(&cache_r, &grad_r, true);
    let (map_f, cache_f) = d_forward(d, fake, mode)?;
    let (loss_f, grad_f) = norm.loss(&map_f, 0.0);
    let (grads_f, _) = d.backward(&cache_f, &grad_f, true);
    let grads = {
        let g = grads.as_mut().unwrap();
        g.add_assign(grads_f.as_ref().unwrap());
        grads.unwrap()
    };
    Ok((loss_r + loss_f, grads))
}

/// Mutable training state for one image.
pub struct Trainer<'a> {
    img: &'a ImagePlane,
    cfg: TrainConfig,
    pub g: GeneratorParams,
    pub d: DiscriminatorParams,
    g_opt: Adam,
    d_opt: Adam,
    g_sampler: CropSampler,
    d_sampler: CropSampler,
    rng: ChaCha8Rng,
    bootstrap_active: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(img: &'a ImagePlane, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (h, w) = img.dims();
        if h < cfg.g_crop || w < cfg.g_crop || h < cfg.d_crop || w < cfg.d_crop {
            return Err(Error::validation(format!(
                "image {h}×{w} smaller than the {}×{} training crop",
                cfg.g_crop.max(cfg.d_crop),
                cfg.g_crop.max(cfg.d_crop)
            )));
        }
        let grad = image::gradient_content_map(img)?;
        let mut seeder = ChaCha8Rng::seed_from_u64(cfg.seed);
        let g_seed = seeder.random::<u64>();
        let d_seed = seeder.random::<u64>();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let adam = || Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        Ok(Self {
            img,
            cfg: cfg.clone(),
            g: GeneratorParams::init(cfg.generator, g_seed),
            d: DiscriminatorParams::init(d_seed),
            g_opt: adam(),
            d_opt: adam(),
            g_sampler: CropSampler::new(&grad, cfg.g_crop)?,
            d_sampler: CropSampler::new(&grad, cfg.d_crop)?,
            rng,
            bootstrap_active: cfg.bootstrap_iters > 0,
        })
    }

    pub fn bootstrap_active(&self) -> bool {
        self.bootstrap_active
    }

    /// One discriminator update on a real crop and a generated crop.
    pub fn d_step(&mut self, iteration: usize) -> Result<f64> {
        let real = self.img.crop(&self.d_sampler.sample(&mut self.rng))?;
        let g_in = self.img.crop(&self.g_sampler.sample(&mut self.rng))?;
        let fake = self.g.downscale(&g_in)?;
        let (loss, grads) = d_objective(&mut self.d, &real, &fake, self.cfg.adversarial_norm, Mode::Train)?;
        let lr = self.cfg.learning_rate(self.cfg.d_lr, iteration);
        self.d_opt.step(self.d.trainable_mut(), &grads.tensors, lr);
        Ok(loss)
    }

    /// One generator update; returns `(g_loss, reg)`.
    pub fn g_step(&mut self, iteration: usize) -> Result<(f64, f64)> {
        let crop = self.img.crop(&self.g_sampler.sample(&mut self.rng))?;
        if iteration >= self.cfg.bootstrap_iters {
            self.bootstrap_active = false;
        }
        let obj = g_objective(&self.g, &mut self.d, &crop, &self.cfg, self.bootstrap_active, Mode::Train)?;
        if self.bootstrap_active && obj.bootstrap_distance <= self.cfg.bootstrap_exit_threshold {
            self.bootstrap_active = false;
        }
        let lr = self.cfg.learning_rate(self.cfg.g_lr, iteration);
        let params: Vec<&mut [f64]> = self
            .g
            .layers_mut()
            .iter_mut()
            .map(|l| l.as_slice_mut().expect("owned layers are contiguous"))
            .collect();
        let grads: Vec<&[f64]> = obj.grads.iter().map(|g| g.as_slice().unwrap()).collect();
        self.g_opt.step(params, &grads, lr);
        Ok((obj.total, obj.reg))
    }
}

/// Zeroes negligible cells, normalizes, and moves the centroid onto the
/// center cell by the nearest integer offset.
pub fn post_process(k: &Kernel) -> Result<Kernel> {
    let cleaned = Kernel::new(k.weights().mapv(|v| if v.abs() < NEGLIGIBLE { 0.0 } else { v }))?;
    let normed = cleaned.normalize()?;
    let (ci, cj) = normed.centroid()?;
    let (mi, mj) = normed.center();
    let (dy, dx) = ((mi - ci).round() as i64, (mj - cj).round() as i64);
    if dy == 0 && dx == 0 {
        return Ok(normed);
    }
    normed.shifted(dy, dx).normalize()
}

pub fn estimate_kernel(img: &ImagePlane, cfg: &TrainConfig) -> Result<EstimationResult> {
    estimate_kernel_with(img, cfg, |_| Ok(()))
}

/// [`estimate_kernel`] calling `observer` every `checkpoint_every`
/// iterations and after the last one.
pub fn estimate_kernel_with(
    img: &ImagePlane,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&Checkpoint<'_>) -> Result<()>,
) -> Result<EstimationResult> {
    let mut t = Trainer::new(img, cfg)?;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let step = t.d_step(it).and_then(|d_loss| Ok((d_loss, t.g_step(it)?)));
        let (d_loss, (g_loss, reg)) = match step {
            Ok(v) => v,
            Err(Error::DegenerateKernel(why)) => {
                log::warn!("kernel collapsed at iteration {it}: {why}");
                return Err(Error::Divergence { iteration: it, trace });
            }
            Err(e) => return Err(e),
        };
        let row = TraceRow { g_loss, d_loss, reg };
        trace.push(row);
        let finite = g_loss.is_finite() && d_loss.is_finite() && reg.is_finite();
        if !(finite && t.g.composite_bound().is_finite()) {
            return Err(Error::Divergence {
                iteration: it,
                trace,
            });
        }
        let done = it + 1;
        if done % cfg.checkpoint_every == 0 || done == cfg.iterations {
            observer(&Checkpoint {
                iteration: done,
                kernel: t.g.extract_kernel(),
                generator: &t.g,
                bootstrap_active: t.bootstrap_active,
                last: row,
            })?;
        }
        if it % 500 == 0 {
            log::debug!("iteration {it}: g {g_loss:.4} d {d_loss:.4} reg {reg:.4}");
        }
    }
    let raw = t.g.extract_kernel();
    let kernel_x2 = post_process(&raw)?;
    let kernel_x4 = kernel::compose_scale(&kernel_x2)?;
    let (kh, kw) = raw.dims();
    let final_regularization = kernel::regularization(&raw, &cfg.effective_reg_weights(kh * kw))?;
    Ok(EstimationResult {
        kernel_x2,
        kernel_x4,
        raw_kernel: raw,
        loss_trace: trace,
        final_regularization,
        iterations_run: cfg.iterations,
        seed: cfg.seed,
    })
}

/// Writes `iteration,g_loss,d_loss,reg` rows.
pub fn write_loss_trace(trace: &[TraceRow], path: &std::path::Path) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        iteration: usize,
        g_loss: f64,
        d_loss: f64,
        reg: f64,
    }
    let err = |e: csv::Error| Error::Parse {
        what: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for (i, r) in trace.iter().enumerate() {
        w.serialize(Row {
            iteration: i,
            g_loss: r.g_loss,
            d_loss: r.d_loss,
            reg: r.reg,
        })
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::embed_kernel;

    fn textured(n: usize, seed: u64) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImagePlane::from_fn(n, n, |(r, c)| {
            let v = 0.5 + 0.3 * ((r as f64) * 0.4).sin() * ((c as f64) * 0.25).cos();
            (v + 0.2 * rng.random::<f64>()).clamp(0.0, 1.0)
        })
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate(2e-4, 0), 2e-4);
        assert_eq!(cfg.learning_rate(2e-4, 749), 2e-4);
        assert_eq!(cfg.learning_rate(2e-4, 750), 2e-4 * 0.1);
        assert_eq!(cfg.learning_rate(2e-4, 2999), 2e-4 * 0.1f64.powi(3));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { g_crop: 13, ..Default::default() },
            TrainConfig { d_crop: 6, ..Default::default() },
            TrainConfig { g_lr: 0.0, ..Default::default() },
            TrainConfig { iterations: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn integral_window_sums_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let m = Array2::from_shape_fn((32, 32), |_| rng.random::<f64>());
            for size in [1, 5, 17, 32] {
                let fast = window_sums(&m, size);
                for ((t, l), v) in fast.indexed_iter() {
                    let brute: f64 = m.slice(ndarray::s![t..t + size, l..l + size]).sum();
                    assert!((v - brute).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn constant_image_samples_uniformly() {
        let img = ImagePlane::constant(40, 40, 0.3);
        let grad = image::gradient_content_map(&img).unwrap();
        let sampler = CropSampler::new(&grad, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cells = 9 * 9;
        let mut counts = vec![0usize; cells];
        let draws = 10_000;
        for _ in 0..draws {
            let c = sampler.sample(&mut rng);
            counts[c.top * 9 + c.left] += 1;
        }
        let expect = draws as f64 / cells as f64;
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - expect).powi(2) / expect).sum();
        // 80 degrees of freedom: the 0.99 quantile is about 112.3.
        assert!(chi2 < 112.3, "chi2 = {chi2}");
    }

    #[test]
    fn gradient_mass_in_one_quadrant_attracts_crops() {
        let n = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = ImagePlane::from_fn(n, n, |(r, c)| {
            if r < 32 && c < 32 {
                rng.random::<f64>()
            } else {
                0.5
            }
        });
        let grad = image::gradient_content_map(&img).unwrap();
        let quadrant = CropSpec::new(0, 0, 32);
        // Analytic probability from the window sums.
        let sums = window_sums(&grad, 16);
        let total: f64 = sums.sum();
        let mass: f64 = sums
            .indexed_iter()
            .filter(|((t, l), _)| CropSpec::new(*t, *l, 16).overlaps(&quadrant))
            .map(|(_, v)| v)
            .sum();
        assert!(mass / total >= 0.95);
        let mut hits = 0;
        for _ in 0..1000 {
            if sample_crop(&img, 16, &grad, &mut rng).unwrap().overlaps(&quadrant) {
                hits += 1;
            }
        }
        assert!(hits >= 950, "{hits}");
    }

    #[test]
    fn delta_fooling_d_gives_sparse_penalty_only() {
        // A discriminator saying 1 everywhere: zero last filters, huge bias.
        let mut d = DiscriminatorParams::init(0);
        d.last.fill(0.0);
        d.last_bias[0] = 50.0;
        let g = embed_kernel(&Kernel::delta(13)).unwrap();
        let crop = textured(64, 1);
        for (reduction, expected) in [(PriorReduction::Sum, 5.0), (PriorReduction::Mean, 5.0 / 169.0)] {
            let cfg = TrainConfig {
                prior_reduction: reduction,
                ..Default::default()
            };
            let obj = g_objective(&g, &mut d, &crop, &cfg, false, Mode::Eval).unwrap();
            assert!(obj.adversarial < 1e-12);
            let exact = kernel::regularization(&obj.kernel, &cfg.effective_reg_weights(169)).unwrap();
            assert!((exact - expected).abs() < 1e-9, "{reduction:?}: {exact}");
        }
    }

    #[test]
    fn bootstrap_zero_for_bicubic_generator() {
        let g = embed_kernel(&kernel::bicubic_kernel(2, 13).unwrap()).unwrap();
        let mut d = DiscriminatorParams::init(1);
        let obj = g_objective(&g, &mut d, &textured(64, 2), &TrainConfig::default(), true, Mode::Eval).unwrap();
        assert!(obj.bootstrap < 1e-9, "{}", obj.bootstrap);
    }

    #[test]
    fn perfect_and_blind_discriminator_losses() {
        let real = textured(16, 3);
        let fake = textured(12, 4);
        let mut sure = DiscriminatorParams::init(2);
        sure.last.fill(0.0);
        sure.last_bias[0] = 0.0;
        let (blind, _) = d_objective(&mut sure, &real, &fake, AdversarialNorm::L1, Mode::Eval).unwrap();
        assert!((blind - 1.0).abs() < 1e-12);
    }

    #[test]
    fn g_objective_gradient_matches_finite_differences() {
        let mut d = DiscriminatorParams::init(4);
        for i in 0..3 {
            d.forward(&textured(26, 20 + i), Mode::Train).unwrap();
        }
        // Init sums to exactly 1, the kink of |1 - ΣK|; step off it.
        let mut g = GeneratorParams::deep(5);
        g.layers_mut()[5].mapv_inplace(|v| v * 1.1);
        let crop = textured(28, 6);
        let cfg = TrainConfig::default();
        let obj = g_objective(&g, &mut d, &crop, &cfg, true, Mode::Eval).unwrap();
        let value = |p: &GeneratorParams| {
            let mut dd = d.clone();
            g_objective(p, &mut dd, &crop, &cfg, true, Mode::Eval).unwrap().total
        };
        let h = 1e-6;
        for (l, idx) in [(0, [5, 0, 3, 3]), (1, [2, 7, 1, 4]), (2, [9, 9, 0, 2]), (5, [0, 11, 0, 0])] {
            let mut plus = g.clone();
            plus.layers_mut()[l][idx] += h;
            let mut minus = g.clone();
            minus.layers_mut()[l][idx] -= h;
            let fd = (value(&plus) - value(&minus)) / (2.0 * h);
            let an = obj.grads[l][idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel <= 1e-3, "layer {l}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn zero_regularizer_leaves_only_adversarial_and_bootstrap_gradients() {
        let mut d = DiscriminatorParams::init(6);
        d.last.fill(0.0);
        let g = GeneratorParams::deep(7);
        let crop = textured(32, 8);
        let cfg = TrainConfig {
            reg_weights: RegWeights::zero(),
            ..Default::default()
        };
        let obj = g_objective(&g, &mut d, &crop, &cfg, false, Mode::Eval).unwrap();
        assert_eq!(obj.reg, 0.0);
        // D is constant 0.5 so its input gradient vanishes; without bootstrap
        // nothing is left to move G.
        assert!(obj.grads.iter().all(|l| l.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn post_processing_recenters_and_normalizes() {
        let mut w = Array2::zeros((13, 13));
        w[[4, 8]] = 2.0;
        w[[4, 9]] = 1.0;
        w[[0, 0]] = 5e-5;
        let k = post_process(&Kernel::new(w).unwrap()).unwrap();
        assert!((k.sum() - 1.0).abs() < 1e-12);
        assert_eq!(k.weights()[[0, 0]], 0.0);
        let (ci, cj) = k.centroid().unwrap();
        assert!((ci - 6.0).abs() <= 0.5 && (cj - 6.0).abs() <= 0.5);
    }

    #[test]
    fn short_run_is_deterministic_and_well_formed() {
        let img = textured(80, 9);
        let cfg = TrainConfig {
            iterations: 20,
            checkpoint_every: 5,
            seed: 11,
            ..Default::default()
        };
        let mut seen = Vec::new();
        let a = estimate_kernel_with(&img, &cfg, |c| {
            seen.push(c.iteration);
            Ok(())
        })
        .unwrap();
        let b = estimate_kernel(&img, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(seen, vec![5, 10, 15, 20]);
        assert_eq!(a.loss_trace.len(), 20);
        assert_eq!(a.kernel_x2.dims(), (13, 13));
        assert_eq!(a.kernel_x4, kernel::compose_scale(&a.kernel_x2).unwrap());
        assert!((a.kernel_x2.sum() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn small_image_rejected() {
        let img = textured(40, 1);
        assert!(matches!(
            estimate_kernel(&img, &TrainConfig::default()),
            Err(Error::Validation(_))
        ));
    }
}
