use std::path::Path;
use std::process::{Command, Output};

use blindkernel::{dataset, eval};
use blindkernel::image::{self, ImagePlane};
use blindkernel::kernel::{self, GaussianSpec, Kernel};

fn blindkernel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blindkernel"))
        .args(args)
        .env_remove("BLINDKERNEL_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small blurred LR image written as raw floats.
fn lr_input(dir: &Path) -> std::path::PathBuf {
    let img = dataset::mini_corpus_images(0).swap_remove(5).1;
    let k = kernel::synth_gaussian(&GaussianSpec::isotropic(1.5, 11), 0).unwrap();
    let lr = image::downscale_with_kernel(&img, &k, 2).unwrap();
    let path = dir.join("lr.raw");
    lr.write_raw(&path).unwrap();
    path
}

#[test]
fn estimate_writes_outputs_and_echoes_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let input = lr_input(dir.path());
    let out = dir.path().join("run");
    let res = blindkernel(&[
        "estimate",
        p(&input),
        "--out",
        p(&out),
        "--iterations",
        "6",
        "--seed",
        "3",
        "--checkpoint-every",
        "2",
        "--scale",
        "4",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["kernel_x2.txt", "kernel_x4.txt", "kernel_x2.raw", "kernel_x4.raw", "loss_trace.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let k2 = Kernel::load(out.join("kernel_x2.txt")).unwrap();
    let k4 = Kernel::load(out.join("kernel_x4.raw")).unwrap();
    assert_eq!(k2.dims(), (13, 13));
    assert_eq!(k4.dims(), (37, 37));
    assert!((k2.sum() - 1.0).abs() < 1e-9);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["overrides"]["iterations"], 6);
    assert_eq!(manifest["overrides"]["seed"], 3);
    assert_eq!(manifest["config"]["iterations"], 6);
    assert_eq!(manifest["iterations_run"], 6);
    assert_eq!(manifest["primary_kernel"], "kernel_x4.txt");

    let mut checkpoints: Vec<_> = std::fs::read_dir(out.join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    checkpoints.sort();
    assert_eq!(checkpoints, ["kernel_iter00002.txt", "kernel_iter00004.txt", "kernel_iter00006.txt"]);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let input = lr_input(dir.path());
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"iterations": 50, "seed": 9, "g_lr": 1e-4}"#).unwrap();
    let out = dir.path().join("run");
    let res = blindkernel(&["estimate", p(&input), "--out", p(&out), "--config", p(&cfg), "--iterations", "3"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["iterations"], 3);
    assert_eq!(manifest["config"]["seed"], 9);
    assert_eq!(manifest["config"]["g_lr"], 1e-4);
}

#[test]
fn usage_and_io_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let missing = dir.path().join("nope.png");
    assert_eq!(code(&blindkernel(&["estimate", p(&missing), "--out", p(&out)])), 1);
    assert_eq!(code(&blindkernel(&["estimate", p(&missing), "--out", p(&out), "--scale", "3"])), 1);
    assert_eq!(code(&blindkernel(&["frobnicate"])), 1);

    let input = lr_input(dir.path());
    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{"iterations": "many"}"#).unwrap();
    assert_eq!(code(&blindkernel(&["estimate", p(&input), "--out", p(&out), "--config", p(&bad_cfg)])), 1);
    assert_eq!(code(&blindkernel(&["estimate", p(&input), "--out", p(&out), "--iterations", "0"])), 1);

    let threads = Command::new(env!("CARGO_BIN_EXE_blindkernel"))
        .args(["derive-scale", p(&missing), "--out", p(&out.join("k.txt"))])
        .env("BLINDKERNEL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&threads), 1);
    assert!(String::from_utf8_lossy(&threads.stderr).contains("BLINDKERNEL_THREADS"));
}

#[test]
fn help_exits_0() {
    assert_eq!(code(&blindkernel(&["--help"])), 0);
    assert_eq!(code(&blindkernel(&["estimate", "--help"])), 0);
}

#[test]
fn divergence_exits_2_and_keeps_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let input = lr_input(dir.path());
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"g_lr": 1e300, "d_lr": 1e300}"#).unwrap();
    let out = dir.path().join("run");
    let res = blindkernel(&["estimate", p(&input), "--out", p(&out), "--config", p(&cfg), "--iterations", "40"]);
    assert_eq!(code(&res), 2, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("loss_trace.csv").is_file());
    assert!(!out.join("kernel_x2.txt").exists());
}

#[test]
fn derive_scale_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let k2 = kernel::synth_gaussian(&GaussianSpec::isotropic(1.2, 13), 0).unwrap();
    let src = dir.path().join("k2.txt");
    k2.save(&src).unwrap();
    let dst = dir.path().join("nested/k4.raw");
    let res = blindkernel(&["derive-scale", p(&src), "--out", p(&dst)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let got = Kernel::load(&dst).unwrap();
    let want = kernel::compose_scale(&k2).unwrap();
    assert_eq!(got.dims(), (37, 37));
    // The raw format keeps 32-bit floats.
    for (a, b) in got.weights().iter().zip(want.weights()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    assert_eq!(code(&blindkernel(&["derive-scale", p(&dir.path().join("none.txt")), "--out", p(&dst)])), 1);
}

#[test]
fn make_dataset_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    assert_eq!(code(&blindkernel(&["mini-corpus", "--out", p(&corpus)])), 0);
    let bench = dir.path().join("bench");
    assert_eq!(code(&blindkernel(&["make-dataset", p(&corpus), "--out", p(&bench), "--count", "11"])), 1);
    let res = blindkernel(&["make-dataset", p(&corpus), "--out", p(&bench), "--count", "2", "--seed", "5", "--noise", "0"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let manifest = bench.join("manifest.json");
    let m = dataset::load_benchmark(&manifest).unwrap();
    assert_eq!(m.entries.len(), 2);
    assert_eq!(ImagePlane::read_raw(bench.join(&m.entries[0].lr_raw_path)).unwrap().dims(), (139, 139));

    let report = dir.path().join("report");
    let res = blindkernel(&[
        "evaluate",
        p(&manifest),
        "--out",
        p(&report),
        "--iterations",
        "4",
        "--border-crop",
        "--no-plots",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let rows = eval::read_csv_rows(&report.join("report.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row.status, eval::EntryStatus::Ok);
        assert_eq!(row.iterations, 4);
        assert!(row.kernel_l1.is_some() && row.kernel_psnr.is_some());
    }
    assert!(report.join("report.json").is_file());

    std::fs::write(&manifest, "{ not json").unwrap();
    assert_eq!(code(&blindkernel(&["evaluate", p(&manifest), "--out", p(&report)])), 1);
}
