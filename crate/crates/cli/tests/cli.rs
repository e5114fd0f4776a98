use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepwarp_core::dataset::gen_phantom;
use deepwarp_core::netpbm::{load_pgm, save_pgm};
use deepwarp_core::rigid::circular_shift;
use deepwarp_core::Image;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deepwarp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = run(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn textured(size: usize, seed: u64) -> Image<f64> {
    gen_phantom(size, seed).unwrap()
}

/// Tiny training flags shared by several tests.
fn train_args<'a>(out: &'a str, seed: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--size", "16", "--depth", "1", "--width", "2", "--n-images", "4", "--warps", "1",
        "--epochs", "2", "--seed", seed, "--out", out,
    ]
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let (c, err) = code(&[]);
    assert_eq!(c, 1);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    let (c, err) = code(&["trian"]);
    assert_eq!(c, 1);
    assert!(err.contains("train"), "suggestion missing: {err}");
    let (c, err) = code(&["register", "phase", "--subjct", "a.pgm"]);
    assert_eq!(c, 1);
    assert!(err.contains("--subject"), "{err}");
    let (c, _) = code(&["warp", "random", "--size", "abc", "--out", "x"]);
    assert_eq!(c, 1);
}

#[test]
fn help_exits_0() {
    assert!(ok(&["--help"]).contains("make-dataset"));
    assert!(ok(&["bench", "--help"]).contains("progression"));
}

#[test]
fn invalid_numbers_fail_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.unt1");
    let mut a = train_args(p(&out), "1");
    a.extend(["--lr", "-1"]);
    assert_eq!(code(&a).0, 1);
    let mut a = train_args(p(&out), "1");
    a.extend(["--validation-fraction", "1.5"]);
    assert_eq!(code(&a).0, 1);
    let mut a = train_args(p(&out), "1");
    a[2] = "15"; // depth 1 needs an even size
    assert_eq!(code(&a).0, 1);
    assert!(!out.exists());
    assert_eq!(code(&["register", "demons", "--subject", "a", "--template", "b", "--out-warped", "c", "--max-step", "0"]).0, 1);
    assert_eq!(code(&["make-dataset", "--n-images", "1", "--out", p(dir.path())]).0, 1);
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.pgm");
    let (c, err) = code(&["register", "phase", "--subject", p(&missing), "--template", p(&missing)]);
    assert_eq!(c, 2);
    assert!(err.contains("missing.pgm"), "{err}");
    let garbage = dir.path().join("bad.unt1");
    std::fs::write(&garbage, b"not a model").unwrap();
    assert_eq!(code(&["inspect", "--model", p(&garbage)]).0, 2);
}

#[test]
fn phase_correlation_reports_shift_and_peak() {
    let dir = tempfile::tempdir().unwrap();
    let t = textured(64, 3);
    let s = circular_shift(&t, 5, -3);
    let (sp, tp) = (dir.path().join("s.pgm"), dir.path().join("t.pgm"));
    save_pgm(&s, &sp).unwrap();
    save_pgm(&t, &tp).unwrap();
    let out = ok(&["register", "phase", "--subject", p(&sp), "--template", p(&tp)]);
    let f: Vec<&str> = out.split_whitespace().collect();
    assert_eq!(&f[..2], &["5", "-3"]);
    let peak: f64 = f[2].parse().unwrap();
    assert!(peak > 0.5 && peak <= 1.0 + 1e-9, "{peak}");
}

#[test]
fn warp_random_apply_invert_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let out = ok(&["warp", "random", "--size", "64", "--amplitude", "4", "--seed", "9", "--out", p(&d("f.wrp1"))]);
    assert!(out.starts_with("mixed amplitude"));
    save_pgm(&textured(64, 4), d("t.pgm")).unwrap();
    ok(&["warp", "apply", "--image", p(&d("t.pgm")), "--field", p(&d("f.wrp1")), "--out", p(&d("s.pgm"))]);
    ok(&["warp", "invert", "--field", p(&d("f.wrp1")), "--out", p(&d("g.wrp1"))]);
    ok(&["warp", "apply", "--image", p(&d("s.pgm")), "--field", p(&d("g.wrp1")), "--out", p(&d("back.pgm"))]);
    let t: Image<f64> = load_pgm(d("t.pgm")).unwrap();
    let s: Image<f64> = load_pgm(d("s.pgm")).unwrap();
    let back: Image<f64> = load_pgm(d("back.pgm")).unwrap();
    let err = |a: &Image<f64>| {
        let mut e = 0.0;
        for i in 8..56 {
            for j in 8..56 {
                e += (a.get(i, j) - t.get(i, j)).abs();
            }
        }
        e / (48.0 * 48.0)
    };
    assert!(err(&back) < 0.03 && err(&back) < err(&s) / 2.0, "{} vs {}", err(&back), err(&s));
}

#[test]
fn demons_subcommand_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    save_pgm(&textured(32, 5), d("t.pgm")).unwrap();
    ok(&["warp", "random", "--size", "32", "--amplitude", "2", "--seed", "1", "--out", p(&d("f.wrp1"))]);
    ok(&["warp", "apply", "--image", p(&d("t.pgm")), "--field", p(&d("f.wrp1")), "--out", p(&d("s.pgm"))]);
    let out = ok(&[
        "register", "demons", "--subject", p(&d("s.pgm")), "--template", p(&d("t.pgm")), "--levels", "2",
        "--iterations", "10", "--out-warped", p(&d("w.pgm")), "--out-field", p(&d("phi.wrp1")), "--trace",
        p(&d("trace.csv")),
    ]);
    let v: Vec<f64> = out.split_whitespace().skip(1).step_by(2).map(|x| x.parse().unwrap()).collect();
    assert!(v[1] > v[0] && v[3] < v[2], "{out}");
    assert!(d("w.pgm").exists() && d("phi.wrp1").exists());
    let trace = std::fs::read_to_string(d("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 20);
}

#[test]
fn make_dataset_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let args = |o: &PathBuf, seed: &'static str| {
        vec!["make-dataset".to_string(), "--n-images".into(), "5".into(), "--warps".into(), "2".into(),
             "--size".into(), "32".into(), "--seed".into(), seed.into(), "--out".into(), p(o).into()]
    };
    let run_s = |v: Vec<String>| ok(&v.iter().map(String::as_str).collect::<Vec<_>>());
    let out = run_s(args(&a, "7"));
    assert!(out.starts_with("10 pairs (8 train, 2 validation) at 32x32"), "{out}");
    run_s(args(&b, "7"));
    run_s(args(&c, "8"));
    let m = |d: &PathBuf| std::fs::read(d.join("manifest.txt")).unwrap();
    assert_eq!(m(&a), m(&b));
    for name in std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()) {
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
    assert_ne!(
        std::fs::read(a.join("b0000_w0.subject.pgm")).unwrap(),
        std::fs::read(c.join("b0000_w0.subject.pgm")).unwrap()
    );
}

#[test]
fn train_infer_inspect_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let (m1, m2, m3) = (d("m1.unt1"), d("m2.unt1"), d("m3.unt1"));
    let mut a = train_args(p(&m1), "3");
    let hist = d("h.csv");
    let snaps = d("snaps");
    a.extend(["--history", p(&hist), "--snapshot-epochs", "1,2", "--snapshot-dir", p(&snaps)]);
    let out = ok(&a);
    assert!(out.starts_with("epochs 2 val_ssim"), "{out}");
    ok(&train_args(p(&m2), "3"));
    ok(&train_args(p(&m3), "4"));
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    assert_ne!(std::fs::read(&m1).unwrap(), std::fs::read(&m3).unwrap());
    assert_eq!(std::fs::read_to_string(&hist).unwrap().lines().count(), 3);
    assert_eq!(std::fs::read(snaps.join("epoch2.unt1")).unwrap(), std::fs::read(&m1).unwrap());
    assert!(snaps.join("epoch1.unt1").exists());

    save_pgm(&textured(16, 1), d("t.pgm")).unwrap();
    ok(&["warp", "random", "--size", "16", "--amplitude", "1", "--out", p(&d("f.wrp1"))]);
    ok(&["warp", "apply", "--image", p(&d("t.pgm")), "--field", p(&d("f.wrp1")), "--out", p(&d("s.pgm"))]);
    let out = ok(&[
        "infer", "--model", p(&m1), "--subject", p(&d("s.pgm")), "--template", p(&d("t.pgm")), "--out-warped",
        p(&d("w.pgm")), "--out-field", p(&d("phi.wrp1")), "--overlay", p(&d("o.ppm")),
    ]);
    assert!(out.starts_with("ssim_before"));
    for f in ["w.pgm", "phi.wrp1", "o.ppm"] {
        assert!(d(f).exists(), "{f}");
    }
    let out = ok(&["inspect", "--model", p(&m1), "--dump-dir", p(&d("dump"))]);
    assert!(out.contains("input_size 16") && out.contains("depth 1") && out.contains("base_width 2"));
    assert!(out.contains("channel_order phi_i,phi_j"));
    // 2 + 2 + 4 + 4 + 2 + 2
    assert!(out.contains("dumped 16 channel images over 6 levels"), "{out}");
    let pgms = std::fs::read_dir(d("dump"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert_eq!(pgms, 16);
    // wrong-size inputs are a runtime error
    save_pgm(&textured(32, 1), d("big.pgm")).unwrap();
    assert_eq!(code(&["infer", "--model", p(&m1), "--subject", p(&d("big.pgm")), "--template", p(&d("big.pgm"))]).0, 2);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    std::fs::write(
        d("c.txt"),
        "# tiny run\nsize = 16\ndepth=1\nwidth=2\nn_images=4\nwarps=1\nepochs=1\nseed=3\n",
    )
    .unwrap();
    let out = ok(&["train", "--config", p(&d("c.txt")), "--out", p(&d("a.unt1")), "--epochs", "2"]);
    assert!(out.starts_with("epochs 2 "), "flag must override config: {out}");
    ok(&train_args(p(&d("b.unt1")), "3"));
    assert_eq!(std::fs::read(d("a.unt1")).unwrap(), std::fs::read(d("b.unt1")).unwrap());
    std::fs::write(d("bad.txt"), "size=16\nbogus=1\n").unwrap();
    let (c, err) = code(&["train", "--config", p(&d("bad.txt")), "--out", p(&d("x.unt1"))]);
    assert_eq!(c, 1);
    assert!(err.contains("bogus"), "{err}");
    std::fs::write(d("hann.txt"), "hann=true\n").unwrap();
    let t = textured(32, 2);
    save_pgm(&circular_shift(&t, 2, 1), d("s.pgm")).unwrap();
    save_pgm(&t, d("t.pgm")).unwrap();
    let out = ok(&["register", "phase", "--config", p(&d("hann.txt")), "--subject", p(&d("s.pgm")), "--template", p(&d("t.pgm"))]);
    assert!(out.starts_with("2 1 "), "{out}");
    assert_eq!(code(&["train", "--config", p(&d("none.txt")), "--out", "x"]).0, 1);
}

#[test]
fn bench_subcommands_run_on_a_small_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    ok(&["make-dataset", "--n-images", "4", "--warps", "2", "--size", "16", "--seed", "2", "--out", p(&d("ds"))]);
    let manifest = d("ds").join("manifest.txt");
    let model = d("m.unt1");
    let mut a = train_args(p(&model), "1");
    a.extend(["--snapshot-epochs", "1,2"]);
    ok(&a);
    let out = ok(&["bench", "inference", "--model", p(&d("m.unt1")), "--dataset", p(&manifest), "--repeats", "3", "--out", p(&d("inf.csv"))]);
    assert!(out.contains("unet"));
    let csv = std::fs::read_to_string(d("inf.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    let out = ok(&[
        "bench", "demons", "--dataset", p(&manifest), "--iterations", "2,4", "--levels", "1,2", "--model",
        p(&d("m.unt1")), "--repeats", "2", "--out", p(&d("dem.csv")),
    ]);
    assert!(out.contains("speed ratio"), "{out}");
    assert_eq!(std::fs::read_to_string(d("dem.csv")).unwrap().lines().count(), 1 + 4 * 2 + 2 * 2);
    let out = ok(&[
        "bench", "progression", "--checkpoint", &format!("1={}", p(&d("epoch1.unt1"))), "--checkpoint",
        &format!("2={}", p(&d("epoch2.unt1"))), "--dataset", p(&manifest), "--out-dir", p(&d("prog")),
    ]);
    assert_eq!(out.lines().count(), 3);
    assert!(d("prog").join("progression.csv").exists());
    assert_eq!(code(&["bench", "progression", "--checkpoint", "x", "--dataset", p(&manifest)]).0, 1);
    assert_eq!(code(&["bench", "demons", "--dataset", p(&manifest), "--iterations", "0"]).0, 1);
    let out = ok(&["bench", "ablation", "--dataset", p(&manifest), "--depth", "1", "--width", "2", "--epochs", "1", "--out-dir", p(&d("abl"))]);
    assert_eq!(out.lines().count(), 4, "{out}");
    for m in ["msessim", "ssim_only", "mse_only"] {
        assert!(d("abl").join(format!("ablation_{m}.csv")).exists());
    }
}
