//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Criteria 5 and 6 train 20 full estimations,
//! so expect this target to run for the better part of an hour on one core.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use blindkernel::dataset::{self, BenchmarkOptions};
use blindkernel::discriminator::{DiscriminatorParams, Mode};
use blindkernel::eval;
use blindkernel::generator::{self, GeneratorKind, GeneratorParams};
use blindkernel::image::{self, ImagePlane};
use blindkernel::kernel::{self, Kernel};
use blindkernel::trainer::{self, TrainConfig};
use blindkernel::par;
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Calibrated recovery thresholds for the mini-corpus.
const RECOVERY_MAX_MEDIAN_L1: f64 = 0.4;
const RECOVERY_MIN_MEDIAN_PSNR: f64 = 35.0;
const RECOVERY_MAX_SECONDS_PER_IMAGE: f64 = 900.0;

type Oracle = dyn Fn(&Array2<f64>) -> f64;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    // `cargo test --test acceptance -- 1 4 9` runs only those criteria.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let picked: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| picked.is_empty() || picked.contains(&n);

    let criteria: [(&str, Check); 9] = [
        ("extraction equivalence", extraction_equivalence),
        ("dilation identity", dilation_identity),
        ("regularizer correctness", regularizer_correctness),
        ("objective gradients", objective_gradients),
        ("kernel recovery", kernel_recovery),
        ("deep beats single layer", deep_beats_single_layer),
        ("benchmark reproducibility", benchmark_reproducibility),
        ("end-to-end determinism", end_to_end_determinism),
        ("shape ledger", shape_ledger),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !wanted(i + 1) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        let secs = start.elapsed().as_secs_f64();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("criterion {} ({name}): {verdict} {} [{secs:.1} s]", i + 1, out.detail);
        if !out.pass {
            failed += 1;
        }
    }
    if wanted(5) {
        let invariants: [(&str, Check); 2] = [
            ("checkpoint kernel sums", checkpoint_envelope),
            ("checkpoint extraction equivalence", checkpoint_extraction),
        ];
        for (name, check) in invariants {
            let out = check();
            let verdict = if out.pass { "PASS" } else { "FAIL" };
            println!("invariant ({name}): {verdict} {}", out.detail);
            if !out.pass {
                failed += 1;
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} check(s) failed");
        ExitCode::FAILURE
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_plane(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImagePlane {
    ImagePlane::from_fn(h, w, |_| rng.random::<f64>())
}

fn random_unit_kernel(size: usize, rng: &mut ChaCha8Rng) -> Kernel {
    let w = Array2::from_shape_fn((size, size), |_| rng.random::<f64>() + 0.01);
    let total = w.sum();
    Kernel::new(w / total).unwrap()
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// 1. Extraction equivalence.

fn extraction_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        // Zero-mean states, unlike the trainer's init, so nothing cancels by luck.
        let layers: Vec<Array4<f64>> = generator::DEEP_SHAPES
            .iter()
            .map(|&[o, i, h, w]| {
                let std = ((i * h * w) as f64).sqrt().recip();
                Array4::from_shape_fn((o, i, h, w), |_| normal(&mut rng) * std)
            })
            .collect();
        let g = GeneratorParams::from_layers(layers).unwrap();
        let k = g.extract_kernel();
        for _ in 0..10 {
            let x = random_plane(32, 32, &mut rng);
            let net = generator::generator_forward(&g, &x).unwrap();
            let direct = image::downscale_with_kernel(&x, &k, 2).unwrap();
            worst = worst.max(max_abs_diff(net.as_array(), direct.as_array()));
        }
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!("max |Δ| = {worst:.2e} over 50 states × 10 images"),
    }
}

// ---------------------------------------------------------------------------
// 2. Two ×2 steps equal one ×4 step with the composed kernel.

fn dilation_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for t in 0..20 {
        let size = 3 + 2 * (t % 6);
        let k = random_unit_kernel(size, &mut rng);
        let x = random_plane(64, 64, &mut rng);
        let twice = image::downscale_with_kernel(&image::downscale_with_kernel(&x, &k, 2).unwrap(), &k, 2).unwrap();
        let k4 = kernel::compose_scale(&k).unwrap();
        let once = image::downscale_with_kernel(&x, &k4, 4).unwrap();
        // Both grids start at the same pixel; compare where both exist.
        let h = twice.height().min(once.height());
        let w = twice.width().min(once.width());
        for r in 0..h {
            for c in 0..w {
                worst = worst.max((twice.get(r, c) - once.get(r, c)).abs());
                compared += 1;
            }
        }
    }
    Outcome {
        pass: worst <= 1e-6 && compared > 0,
        detail: format!("max |Δ| = {worst:.2e} over {compared} pixels"),
    }
}

// ---------------------------------------------------------------------------
// 3. Regularizers against brute-force formulas and finite differences.

fn oracle_sum_to_1(k: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    for v in k {
        s += v;
    }
    (1.0 - s).abs()
}

fn oracle_mask(h: usize, w: usize) -> Array2<f64> {
    let (ch, cw) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
    let dmax = ch.max(cw);
    Array2::from_shape_fn((h, w), |(i, j)| {
        let d = (i as f64 - ch).abs().max((j as f64 - cw).abs());
        (d.exp() - 1.0) / (dmax.exp() - 1.0)
    })
}

fn oracle_boundaries(k: &Array2<f64>) -> f64 {
    let (h, w) = k.dim();
    let m = oracle_mask(h, w);
    let mut s = 0.0;
    for i in 0..h {
        for j in 0..w {
            s += (k[[i, j]] * m[[i, j]]).abs();
        }
    }
    s
}

fn oracle_sparse(k: &Array2<f64>) -> f64 {
    k.iter().map(|v| v.abs().powf(0.5)).sum()
}

fn oracle_center(k: &Array2<f64>) -> f64 {
    let (h, w) = k.dim();
    let (mut m, mut mi, mut mj) = (0.0, 0.0, 0.0);
    for i in 0..h {
        for j in 0..w {
            m += k[[i, j]];
            mi += k[[i, j]] * i as f64;
            mj += k[[i, j]] * j as f64;
        }
    }
    let (di, dj) = (mi / m - (h - 1) as f64 / 2.0, mj / m - (w - 1) as f64 / 2.0);
    (di * di + dj * dj).sqrt()
}

fn regularizer_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut value_err = 0.0f64;
    let mut grad_err = 0.0f64;
    let h = 1e-6;
    let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
    for t in 0..100 {
        let size = 3 + 2 * (t % 6);
        // Cells bounded away from zero and sums away from one keep every
        // functional smooth at the test point.
        let w = Array2::from_shape_fn((size, size), |_| {
            let v = 0.05 + rng.random::<f64>();
            if rng.random::<f64>() < 0.15 {
                -0.3 * v.min(0.9) - 0.035
            } else {
                v
            }
        });
        let k = Kernel::new(w.clone()).unwrap();
        let mask = kernel::BoundaryMask::for_kernel(&k);
        let values = [
            (kernel::loss_sum_to_1(&k), oracle_sum_to_1(&w)),
            (kernel::loss_boundaries(&k, &mask).unwrap(), oracle_boundaries(&w)),
            (kernel::loss_sparse(&k), oracle_sparse(&w)),
            (kernel::loss_center(&k).unwrap(), oracle_center(&w)),
        ];
        for (got, want) in values {
            value_err = value_err.max((got - want).abs());
        }

        let grads = [
            kernel::grad_sum_to_1(&k),
            kernel::grad_boundaries(&k, &mask).unwrap(),
            kernel::grad_sparse_surrogate(&k),
            kernel::grad_center(&k).unwrap(),
        ];
        let funcs: [&Oracle; 4] = [
            &oracle_sum_to_1,
            &oracle_boundaries,
            // The surrogate differs from Σ|k|^½ by O(ε/k²) ≤ 4e-6 here.
            &|a: &Array2<f64>| kernel::loss_sparse_surrogate(&Kernel::new(a.clone()).unwrap()),
            &oracle_center,
        ];
        for cell in [(0, 0), (size / 2, size / 2), (size - 1, 1), (1, size - 2)] {
            let mut plus = w.clone();
            plus[cell] += h;
            let mut minus = w.clone();
            minus[cell] -= h;
            for (f, g) in funcs.iter().zip(&grads) {
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                grad_err = grad_err.max(rel(fd, g[cell]));
            }
            let exact = (oracle_sparse(&plus) - oracle_sparse(&minus)) / (2.0 * h);
            grad_err = grad_err.max(rel(exact, grads[2][cell]));
        }
    }
    Outcome {
        pass: value_err <= 1e-10 && grad_err <= 1e-4,
        detail: format!("max value |Δ| = {value_err:.2e}, max gradient rel. err = {grad_err:.2e}"),
    }
}

// ---------------------------------------------------------------------------
// 4. Full objectives against finite differences, evaluation mode.

fn textured(n: usize, rng: &mut ChaCha8Rng) -> ImagePlane {
    let (fy, fx) = (0.2 + 0.3 * rng.random::<f64>(), 0.2 + 0.3 * rng.random::<f64>());
    ImagePlane::from_fn(n, n, |(r, c)| {
        let v = 0.5 + 0.3 * (r as f64 * fy).sin() * (c as f64 * fx).cos();
        (v + 0.2 * rng.random::<f64>()).clamp(0.0, 1.0)
    })
}

fn objective_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-6;
    let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
    let mut d = DiscriminatorParams::init(4);
    // Give BatchNorm non-trivial running statistics.
    for _ in 0..3 {
        d.forward(&textured(20, &mut rng), Mode::Train).unwrap();
    }
    let cfg = TrainConfig::default();

    // Generator side.
    let mut g = GeneratorParams::deep(5);
    // A fresh init sums to exactly 1, the kink of |1 − ΣK|.
    g.layers_mut()[5].mapv_inplace(|v| v * 1.1);
    let crop = textured(28, &mut rng);
    let obj = trainer::g_objective(&g, &mut d, &crop, &cfg, false, Mode::Eval).unwrap();
    let g_value = |p: &GeneratorParams| {
        let mut dd = d.clone();
        trainer::g_objective(p, &mut dd, &crop, &cfg, false, Mode::Eval).unwrap().total
    };
    let mut g_err = 0.0f64;
    let mut checked = 0;
    for (l, layer) in g.layers().iter().enumerate() {
        for _ in 0..3 {
            let idx = layer
                .shape()
                .iter()
                .map(|&n| rng.random_range(0..n))
                .collect::<Vec<_>>();
            let idx = [idx[0], idx[1], idx[2], idx[3]];
            let mut plus = g.clone();
            plus.layers_mut()[l][idx] += h;
            let mut minus = g.clone();
            minus.layers_mut()[l][idx] -= h;
            let fd = (g_value(&plus) - g_value(&minus)) / (2.0 * h);
            g_err = g_err.max(rel(fd, obj.grads[l][idx]));
            checked += 1;
        }
    }

    // Discriminator side.
    let real = textured(16, &mut rng);
    let fake = textured(14, &mut rng);
    let norm = cfg.adversarial_norm;
    let mut dm = d.clone();
    let (_, grads) = trainer::d_objective(&mut dm, &real, &fake, norm, Mode::Eval).unwrap();
    let d_value = |p: &DiscriminatorParams| {
        let mut pp = p.clone();
        trainer::d_objective(&mut pp, &real, &fake, norm, Mode::Eval).unwrap().0
    };
    // Central differences on a loss near 1 carry ~3e-10 of roundoff, too much
    // for a relative check on D's smallest entries; below 1e-6 the bound is
    // absolute, 1e-9, which meets the relative one at the cutoff.
    let tiny = 1e-6;
    let mut d_err = 0.0f64;
    let mut d_abs = 0.0f64;
    for t in 0..grads.tensors.len() {
        let len = grads.tensors[t].len();
        let mut picks = vec![0, len / 3, len - 1];
        picks.dedup();
        for i in picks {
            let mut plus = d.clone();
            plus.trainable_mut()[t][i] += h;
            let mut minus = d.clone();
            minus.trainable_mut()[t][i] -= h;
            let fd = (d_value(&plus) - d_value(&minus)) / (2.0 * h);
            let an = grads.tensors[t][i];
            if fd.abs().max(an.abs()) >= tiny {
                d_err = d_err.max(rel(fd, an));
            } else {
                d_abs = d_abs.max((fd - an).abs());
            }
            checked += 1;
        }
    }
    Outcome {
        pass: g_err <= 1e-3 && d_err <= 1e-3 && d_abs <= 1e-9,
        detail: format!(
            "max rel. err G {g_err:.2e}, D {d_err:.2e}; D entries under {tiny:.0e} within {d_abs:.1e} absolute; {checked} entries"
        ),
    }
}
// ---------------------------------------------------------------------------
// 5 and 6. Recovery on the mini-corpus; deep versus single layer.

struct EntryScore {
    l1: f64,
    psnr: f64,
    seconds: f64,
    checkpoint_sums: Vec<(usize, bool, f64)>,
    /// Largest gap between the network and its extracted kernel over all
    /// checkpoints.
    extraction_gap: f64,
}

struct Suite {
    deep: Vec<EntryScore>,
    single: Vec<EntryScore>,
}

fn suite() -> &'static Result<Suite, String> {
    static SUITE: std::sync::OnceLock<Result<Suite, String>> = std::sync::OnceLock::new();
    SUITE.get_or_init(|| run_suite().map_err(|e| e.to_string()))
}

fn run_suite() -> blindkernel::Result<Suite> {
    let dir = tempfile::tempdir().expect("temp dir");
    let corpus = dir.path().join("corpus");
    dataset::write_mini_corpus(&corpus, 0)?;
    let opts = BenchmarkOptions {
        count: dataset::MINI_CORPUS_SIZE,
        noise_amplitude: 0.0,
        ..Default::default()
    };
    let bench = dir.path().join("bench");
    let manifest = dataset::make_benchmark(&corpus, &bench, &opts)?;
    let entries: Vec<_> = manifest
        .entries
        .iter()
        .map(|e| dataset::load_entry(&bench, e))
        .collect::<blindkernel::Result<_>>()?;
    let run = |kind: GeneratorKind| -> blindkernel::Result<Vec<EntryScore>> {
        par::map_indexed(entries.len(), |i| {
            let (gt, lr) = &entries[i];
            let cfg = TrainConfig {
                seed: i as u64,
                generator: kind,
                ..Default::default()
            };
            let mut checkpoint_sums = Vec::new();
            let mut extraction_gap = 0.0f64;
            let probe = lr.center_crop(32, 32)?;
            let mut gap_seconds = 0.0;
            let start = Instant::now();
            let res = trainer::estimate_kernel_with(lr, &cfg, |c| {
                checkpoint_sums.push((c.iteration, c.bootstrap_active, c.kernel.sum()));
                let t = Instant::now();
                let net = generator::generator_forward(c.generator, &probe)?;
                let direct = image::downscale_with_kernel(&probe, &c.kernel, 2)?;
                extraction_gap = extraction_gap.max(max_abs_diff(net.as_array(), direct.as_array()));
                gap_seconds += t.elapsed().as_secs_f64();
                Ok(())
            })?;
            let seconds = start.elapsed().as_secs_f64() - gap_seconds;
            let d = kernel::kernel_distance(gt, &res.kernel_x2)?;
            Ok(EntryScore {
                l1: d.l1,
                psnr: d.image_psnr,
                seconds,
                checkpoint_sums,
                extraction_gap,
            })
        })
        .into_iter()
        .collect()
    };
    Ok(Suite {
        deep: run(GeneratorKind::Deep)?,
        single: run(GeneratorKind::SingleLayer)?,
    })
}

fn scores(rows: &[EntryScore], f: impl Fn(&EntryScore) -> f64) -> Vec<f64> {
    rows.iter().map(f).collect()
}

fn listing(v: &[f64], digits: usize) -> String {
    v.iter().map(|x| format!("{x:.digits$}")).collect::<Vec<_>>().join(" ")
}

fn kernel_recovery() -> Outcome {
    let s = match suite() {
        Ok(s) => s,
        Err(e) => return Outcome { pass: false, detail: format!("suite failed: {e}") },
    };
    let l1 = scores(&s.deep, |r| r.l1);
    let psnr = scores(&s.deep, |r| r.psnr);
    let secs = scores(&s.deep, |r| r.seconds);
    let (ml1, mpsnr) = (eval::median(&l1), eval::median(&psnr));
    let slowest = secs.iter().cloned().fold(0.0, f64::max);
    Outcome {
        pass: ml1 < RECOVERY_MAX_MEDIAN_L1
            && mpsnr > RECOVERY_MIN_MEDIAN_PSNR
            && slowest < RECOVERY_MAX_SECONDS_PER_IMAGE,
        detail: format!(
            "median L1 {ml1:.3} (< {RECOVERY_MAX_MEDIAN_L1}), median PSNR {mpsnr:.2} dB (> {RECOVERY_MIN_MEDIAN_PSNR}), \
             slowest {slowest:.0} s/image; L1 per entry [{}], PSNR [{}]",
            listing(&l1, 3),
            listing(&psnr, 1)
        ),
    }
}

fn deep_beats_single_layer() -> Outcome {
    let s = match suite() {
        Ok(s) => s,
        Err(e) => return Outcome { pass: false, detail: format!("suite failed: {e}") },
    };
    let deep = eval::median(&scores(&s.deep, |r| r.l1));
    let single_l1 = scores(&s.single, |r| r.l1);
    let single = eval::median(&single_l1);
    Outcome {
        pass: deep < single,
        detail: format!("median L1 deep {deep:.3} vs single layer {single:.3}; single per entry [{}]", listing(&single_l1, 3)),
    }
}

fn checkpoint_envelope() -> Outcome {
    let s = match suite() {
        Ok(s) => s,
        Err(e) => return Outcome { pass: false, detail: format!("suite failed: {e}") },
    };
    let iterations = TrainConfig::default().iterations;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut final_worst = 0.0f64;
    for row in &s.deep {
        let exit = row.checkpoint_sums.iter().position(|c| !c.1).unwrap_or(row.checkpoint_sums.len());
        for &(it, _, sum) in &row.checkpoint_sums[exit..] {
            lo = lo.min(sum);
            hi = hi.max(sum);
            if it == iterations {
                final_worst = final_worst.max((sum - 1.0).abs());
            }
        }
    }
    Outcome {
        pass: lo >= 0.5 && hi <= 1.5 && final_worst <= 0.1,
        detail: format!("sums after bootstrap in [{lo:.3}, {hi:.3}], final |Σ − 1| ≤ {final_worst:.3}"),
    }
}

fn checkpoint_extraction() -> Outcome {
    let s = match suite() {
        Ok(s) => s,
        Err(e) => return Outcome { pass: false, detail: format!("suite failed: {e}") },
    };
    let gap = s.deep.iter().chain(&s.single).map(|r| r.extraction_gap).fold(0.0, f64::max);
    Outcome {
        pass: gap <= 1e-6,
        detail: format!("max |G(x) − x⋆K↓2| = {gap:.2e} over every checkpoint"),
    }
}

// ---------------------------------------------------------------------------
// 7. Benchmark reproducibility.

fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn benchmark_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let corpus = dir.path().join("corpus");
    dataset::write_mini_corpus(&corpus, 0).unwrap();
    let opts = BenchmarkOptions {
        count: dataset::MINI_CORPUS_SIZE,
        seed: 17,
        ..Default::default()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let manifest = dataset::make_benchmark(&corpus, &a, &opts).unwrap();
    dataset::make_benchmark(&corpus, &b, &opts).unwrap();

    let files = files_under(&a);
    let identical = files == files_under(&b)
        && files
            .iter()
            .all(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap());

    let mut rederived = 0;
    for e in &manifest.entries {
        let source = image::load_image(&e.source, true).unwrap();
        let k = kernel::synth_gaussian(&e.spec, e.seed).unwrap();
        let stored = Kernel::load(a.join(&e.kernel_path)).unwrap();
        let lr = ImagePlane::read_raw(a.join(&e.lr_raw_path)).unwrap();
        // The raw format stores 32-bit floats.
        let again = image::downscale_with_kernel(&source, &k, e.scale).unwrap();
        let again = again.as_array().mapv(|v| v as f32 as f64);
        if stored == k && again == lr.as_array() {
            rederived += 1;
        }
    }
    let n = manifest.entries.len();
    Outcome {
        pass: identical && rederived == n,
        detail: format!(
            "{} files byte-identical: {identical}; {rederived}/{n} LR images re-derived exactly",
            files.len()
        ),
    }
}

// ---------------------------------------------------------------------------
// 8. The binary is deterministic.

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let img = dataset::mini_corpus_images(0).swap_remove(0).1;
    let input = dir.path().join("input.raw");
    let k = kernel::synth_gaussian(&kernel::GaussianSpec::isotropic(1.5, 11), 0).unwrap();
    image::downscale_with_kernel(&img, &k, 2).unwrap().write_raw(&input).unwrap();

    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_blindkernel"))
            .args(["estimate", input.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap()])
            .status()
            .expect("binary runs");
        (status.success(), out)
    };
    let (ok_a, a) = run("a");
    let (ok_b, b) = run("b");
    let names = ["kernel_x2.txt", "kernel_x4.txt", "kernel_x2.raw", "kernel_x4.raw"];
    let same = ok_a
        && ok_b
        && names
            .iter()
            .all(|f| std::fs::read(a.join(f)).ok().is_some_and(|x| Some(x) == std::fs::read(b.join(f)).ok()));
    Outcome {
        pass: same,
        detail: format!("two runs exited ok: {}, kernel files bit-identical: {same}", ok_a && ok_b),
    }
}

// ---------------------------------------------------------------------------
// 9. Shapes.

fn shape_ledger() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = GeneratorParams::deep(0);
    let g_out = g.forward(&random_plane(64, 64, &mut rng)).unwrap().dims();
    let d_map = DiscriminatorParams::init(0).evaluate(&random_plane(32, 32, &mut rng)).unwrap().dims();
    let k4 = kernel::compose_scale(&g.extract_kernel()).unwrap().dims();
    Outcome {
        pass: g_out == (26, 26) && d_map == (32, 32) && k4 == (37, 37),
        detail: format!("G 64→{g_out:?}, D 32→{d_map:?}, k₂ 13→{k4:?}"),
    }
}
