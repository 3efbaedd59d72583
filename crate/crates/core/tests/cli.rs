mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use c2df::{load_image, save_image};
use common::*;
use tempfile::TempDir;

fn c2df(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_c2df"))
        .args(args)
        .current_dir(cwd)
        .env("C2DF_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A small clean image written into a fresh directory.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let img = fixture("cameraman_64.pgm").crop(20, 20, 24, 24).unwrap();
    save_image(&img, dir.path().join("in.pgm")).unwrap();
    let other = fixture("text_64.pgm").crop(0, 0, 24, 24).unwrap();
    save_image(&other, dir.path().join("other.pgm")).unwrap();
    dir
}

fn sidecar_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

#[test]
fn corrupt_records_noise_level() {
    let dir = workspace();
    let o = c2df(dir.path(), &["corrupt", "in.pgm", "--snr-db", "0", "--seed", "1", "-o", "noisy.pgm"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("noisy.pgm.noise.txt")).unwrap();
    let clean = load_image(dir.path().join("in.pgm")).unwrap();
    assert!((sidecar_value(&text, "sigma") - clean.variance().sqrt()).abs() < 1e-6);
    assert_eq!(sidecar_value(&text, "seed"), 1.0);
    assert!(sidecar_value(&text, "snr_db").abs() < 1e-9);
}

#[test]
fn corrupt_is_deterministic() {
    let dir = workspace();
    for out in ["a.pgm", "b.pgm"] {
        let o = c2df(dir.path(), &["corrupt", "in.pgm", "--sigma", "33", "--seed", "1", "-o", out]);
        assert!(o.status.success());
    }
    assert_eq!(fs::read(dir.path().join("a.pgm")).unwrap(), fs::read(dir.path().join("b.pgm")).unwrap());
    let o = c2df(dir.path(), &["corrupt", "in.pgm", "--sigma", "33", "--seed", "1"]);
    assert!(o.status.success());
    assert_eq!(fs::read(dir.path().join("a.pgm")).unwrap(), fs::read(dir.path().join("in_noisy.pgm")).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = workspace();
    assert_eq!(c2df(dir.path(), &["corrupt", "in.pgm", "--sigma", "33"]).status.code(), Some(2));
    assert_eq!(c2df(dir.path(), &["corrupt", "in.pgm", "--sigma", "3", "--snr-db", "2", "--seed", "1"]).status.code(), Some(2));
    assert_eq!(c2df(dir.path(), &["denoise", "in.pgm", "-o", "x.pgm"]).status.code(), Some(2));
    assert_eq!(c2df(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = workspace();
    let o = c2df(dir.path(), &["denoise", "missing.pgm", "-o", "x.pgm", "--sigma", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.pgm"));
    let o = c2df(dir.path(), &["denoise", "in.pgm", "-o", "x.pgm", "--sigma", "3", "--patch-sizes", "4"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn denoise_prints_metrics_row() {
    let dir = workspace();
    c2df(dir.path(), &["corrupt", "in.pgm", "--sigma", "30", "--seed", "2", "-o", "noisy.pgm"]);
    let o = c2df(
        dir.path(),
        &["denoise", "noisy.pgm", "-o", "out.pgm", "--sigma", "30", "--patch-sizes", "3", "--no-postproc", "--reference", "in.pgm"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "image,sigma,snr_db,psnr_noisy,psnr_denoised,ssim_noisy,ssim_denoised");
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields.len(), 7);
    assert_eq!(fields[0], "noisy.pgm");
    let psnr_noisy: f64 = fields[3].parse().unwrap();
    let psnr_denoised: f64 = fields[4].parse().unwrap();
    assert!(psnr_denoised > psnr_noisy);
    assert!(dir.path().join("out.pgm").exists());
}

#[test]
fn denoise_with_estimated_sigma_and_dumps() {
    let dir = workspace();
    c2df(dir.path(), &["corrupt", "in.pgm", "--sigma", "20", "--seed", "3", "-o", "noisy.pgm"]);
    fs::write(dir.path().join("cfg.txt"), "patch_sizes = 3,5\nepsilon = 0.4\n").unwrap();
    fs::create_dir(dir.path().join("res")).unwrap();
    let o = c2df(
        dir.path(),
        &["denoise", "noisy.pgm", "-o", "res/out.pgm", "--estimate-sigma", "--config", "cfg.txt", "--dump-masks", "--dump-scales"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let res = dir.path().join("res");
    for name in ["out.pgm", "out_n3.pgm", "out_n5.pgm", "out_flatmask.pgm"] {
        assert!(res.join(name).exists(), "{name}");
    }
    assert!(fs::read_dir(&res).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with("out_bin")));
}

#[test]
fn metrics_command() {
    let dir = workspace();
    let o = c2df(dir.path(), &["metrics", "in.pgm", "in.pgm"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "psnr,ssim\ninf,1.000000\n");
}

fn strip_timing(csv: &str) -> Vec<String> {
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn bench_grid_is_reproducible() {
    let dir = workspace();
    let manifest = "image = in.pgm\nimage = other.pgm\nsigma = 20\nsnr_db = 5\nseed = 4\nout = results\n\
                    patch_sizes = 3\nemit_images = true\n";
    fs::write(dir.path().join("bench.txt"), manifest).unwrap();
    let run = || {
        let o = c2df(dir.path(), &["bench", "bench.txt"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(dir.path().join("results").join("bench.csv")).unwrap()
    };
    let first = run();
    let rows: Vec<&str> = first.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].ends_with(",status,wall_secs"));
    assert!(rows[1..].iter().all(|r| r.contains(",ok,")));
    assert_eq!(strip_timing(&first), strip_timing(&run()));
    assert!(rows[1].starts_with("in.pgm,20.000000,"));
    assert!(rows[3].starts_with("other.pgm,20.000000,"));
}

#[test]
fn bench_marks_missing_inputs() {
    let dir = workspace();
    fs::write(dir.path().join("bench.txt"), "image = in.pgm\nimage = nope.pgm\nsigma = 15\npatch_sizes = 3\n").unwrap();
    let o = c2df(dir.path(), &["bench", "bench.txt", "--out", "out"]);
    assert_eq!(o.status.code(), Some(1));
    let csv = fs::read_to_string(dir.path().join("out").join("bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert!(rows[1].contains(",ok,"));
    assert!(rows[2].starts_with("nope.pgm,") && rows[2].contains(",error,"));
}

#[test]
fn bench_writes_only_inside_its_output_directory() {
    let dir = workspace();
    let inputs = dir.path().join("inputs");
    fs::create_dir(&inputs).unwrap();
    fs::copy(dir.path().join("in.pgm"), inputs.join("in.pgm")).unwrap();
    fs::write(inputs.join("bench.txt"), "image = in.pgm\nsigma = 25\npatch_sizes = 3\nemit_images = true\nemit_masks = true\n").unwrap();
    let out = dir.path().join("out");
    let before: Vec<_> = fs::read_dir(&inputs).unwrap().map(|e| e.unwrap().file_name()).collect();
    let o = c2df(&inputs, &["bench", "bench.txt", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let after: Vec<_> = fs::read_dir(&inputs).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(before.len(), after.len());
    assert!(out.join("bench.csv").exists());
    assert!(fs::read_dir(&out).unwrap().count() > 3);
}

#[test]
fn thread_flag_is_validated() {
    let dir = workspace();
    let o = c2df(dir.path(), &["--threads", "0", "metrics", "in.pgm", "in.pgm"]);
    assert_eq!(o.status.code(), Some(2));
    let o = c2df(dir.path(), &["metrics", "in.pgm", "in.pgm", "--threads", "2"]);
    assert!(o.status.success());
}
