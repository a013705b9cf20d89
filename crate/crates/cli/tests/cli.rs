use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hrcam_core::pipeline::RunConfig;

fn hrcam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrcam")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Writes a metrics CSV whose mean rows hold `means[method] = [sens, spec, prec, fallout]`.
fn metrics_csv(dir: &Path, rows: &[(&str, [f64; 4])]) -> PathBuf {
    let mut text = String::from("method,threshold,sensitivity,specificity,precision,fallout\n");
    for (m, r) in rows {
        for t in 1..=9 {
            text.push_str(&format!("{m},0.{t},0.5,0.5,0.5,0.5\n"));
        }
        text.push_str(&format!("{m},mean,{},{},{},{}\n", r[0], r[1], r[2], r[3]));
    }
    let p = dir.join("metrics.csv");
    fs::write(&p, text).unwrap();
    p
}

const HR: [f64; 4] = [0.774, 0.885, 0.151, 0.114];
const GRAD: [f64; 4] = [0.620, 0.863, 0.072, 0.136];
const ZHOU: [f64; 4] = [0.556, 0.848, 0.052, 0.151];

#[test]
fn compare_accepts_the_expected_ordering() {
    let tmp = tempfile::tempdir().unwrap();
    let p = metrics_csv(tmp.path(), &[("hrcam", HR), ("gradcam", GRAD), ("zhou", ZHOU)]);
    let out = hrcam(&["compare", p.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("ordering holds"));
}

#[test]
fn compare_rejects_a_permuted_ordering() {
    let tmp = tempfile::tempdir().unwrap();
    let p = metrics_csv(tmp.path(), &[("hrcam", GRAD), ("gradcam", HR), ("zhou", ZHOU)]);
    let out = hrcam(&["compare", p.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("VIOLATED"));
}

#[test]
fn compare_treats_ties_as_holding() {
    let tmp = tempfile::tempdir().unwrap();
    let p = metrics_csv(tmp.path(), &[("zhou", GRAD), ("gradcam", GRAD), ("hrcam", GRAD)]);
    assert_eq!(code(&hrcam(&["compare", p.to_str().unwrap()])), 0);
}

#[test]
fn compare_needs_every_method() {
    let tmp = tempfile::tempdir().unwrap();
    let p = metrics_csv(tmp.path(), &[("hrcam", HR), ("gradcam", GRAD)]);
    assert_eq!(code(&hrcam(&["compare", p.to_str().unwrap()])), 2);
}

#[test]
fn compare_rejects_unknown_methods_as_bad_data() {
    let tmp = tempfile::tempdir().unwrap();
    let p = metrics_csv(tmp.path(), &[("hrcam", HR), ("gradcam", GRAD), ("zhou", ZHOU), ("lime", ZHOU)]);
    assert_eq!(code(&hrcam(&["compare", p.to_str().unwrap()])), 3);
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(code(&hrcam(&["frobnicate"])), 2);
    assert_eq!(code(&hrcam(&["cam", "--out", "x"])), 2);
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    assert_eq!(code(&hrcam(&["gen-data", "-c", missing.to_str().unwrap()])), 2);
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"learning_rate": 1}"#).unwrap();
    assert_eq!(code(&hrcam(&["gen-data", "-c", bad.to_str().unwrap()])), 2);
    assert_eq!(code(&hrcam(&["--help"])), 0);
}

#[test]
fn init_config_writes_the_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("run.json");
    assert_eq!(code(&hrcam(&["init-config", "-o", p.to_str().unwrap()])), 0);
    let cfg: RunConfig = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
    assert_eq!(cfg, RunConfig::default());
}

fn tiny_config(dir: &Path, per_class: usize, train: usize) -> PathBuf {
    let mut cfg = RunConfig { output_dir: dir.join("run"), ..RunConfig::default() };
    cfg.sim.image_size = 32;
    cfg.sim.per_class_count = per_class;
    cfg.sim.train_count = train;
    cfg.sim.test_count = 2 * per_class - train;
    cfg.model = hrcam_core::backbone::ModelSpec::desk(&[4, 4], 32, false);
    cfg.phase1.epochs = 1;
    cfg.phase2.epochs = 1;
    let p = dir.join("tiny.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                pending.push(p);
            } else {
                let name = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((name, fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn gen_data_creates_the_directory_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), 4, 6);
    let (a, b) = (tmp.path().join("deep/a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = hrcam(&["gen-data", "-c", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let files = dir_bytes(&a);
    assert!(files.iter().any(|(n, _)| n == "manifest.json"));
    assert_eq!(files, dir_bytes(&b));
}

#[test]
fn eval_without_abnormal_test_samples_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    // all five abnormal samples land in the training split
    let cfg = tiny_config(tmp.path(), 5, 9);
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&hrcam(&["gen-data", "-c", c])), 0);
    assert_eq!(code(&hrcam(&["train", "-c", c])), 0);
    let out = hrcam(&["eval", "-c", c]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_eval_and_cam_on_a_tiny_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), 6, 8);
    let c = cfg.to_str().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&hrcam(&["gen-data", "-c", c])), 0);
    let out = hrcam(&["train", "-c", c]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("phase 2 epoch   1"));
    assert!(stdout(&out).contains("backbone unchanged by phase 2: true"));
    let out = hrcam(&["eval", "-c", c, "--methods", "hrcam,zhou"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("eval/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 10);
    // compare needs all three methods
    assert_eq!(code(&hrcam(&["compare", run.join("eval/metrics.csv").to_str().unwrap()])), 2);

    let image = run.join("data/images/s00000.pgm");
    let cams = tmp.path().join("cams");
    let model = run.join("model/model.hrm");
    let out = hrcam(&[
        "cam", "--model", model.to_str().unwrap(), "--image", image.to_str().unwrap(), "--method", "hrcam", "--raw", "--out",
        cams.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> = dir_bytes(&cams).into_iter().map(|(n, _)| n).filter(|n| n.starts_with("s00000")).collect();
    names.sort();
    assert_eq!(names, ["s00000_hrcam.hrt", "s00000_hrcam.pgm", "s00000_hrcam_strip.pgm"]);
    let map = hrcam_core::io::read_pgm(&cams.join("s00000_hrcam.pgm")).unwrap();
    assert_eq!((map.width, map.height), (32, 32));

    let out = hrcam(&[
        "cam", "--model", model.to_str().unwrap(), "--data", run.join("data").to_str().unwrap(), "--limit", "2", "--method",
        "all", "--class", "1", "--out", cams.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().count(), 6);
    let bad_layer = hrcam(&["cam", "--model", model.to_str().unwrap(), "--image", image.to_str().unwrap(), "--method", "gradcam", "--layer", "9", "--out", cams.to_str().unwrap()]);
    assert_eq!(code(&bad_layer), 2);
}
