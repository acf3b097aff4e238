use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mftp::trainer::LOG_CSV_HEADER;

const TINY: [&str; 8] = [
    "--d-model",
    "8",
    "--heads",
    "2",
    "--encoder-layers",
    "1",
    "--decoder-layers",
    "1",
];

fn mftp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mftp"))
        .args(args)
        .env("MFTP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = mftp(args);
    assert!(
        out.status.success(),
        "mftp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, scenes: usize) -> PathBuf {
    let data = dir.join("data");
    ok(&["generate", "--scenes", &scenes.to_string(), "--seed", "9", "--out", s(&data)]);
    data
}

fn train(data: &Path, out: &Path, phase: &str, epochs: &str) {
    let mut args = vec![
        "train", "--phase", phase, "--data", s(data), "--out", s(out), "--epochs", epochs, "--batch-size", "4",
        "--lr", "1e-3",
    ];
    args.extend(TINY);
    ok(&args);
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn generate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = generate(a.path(), 20);
    let db = generate(b.path(), 20);
    for split in ["train", "val", "test"] {
        let fa = files(&da.join(split));
        let fb = files(&db.join(split));
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(x.file_name(), y.file_name());
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
    }
    assert_eq!(files(&da.join("train")).len(), 16);
    assert!(da.join("manifest.json").exists());
}

#[test]
fn bad_arguments_exit_with_one() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("x");
    assert_eq!(mftp(&["generate", "--scenes", "0", "--out", s(&out)]).status.code(), Some(1));
    assert_eq!(mftp(&["generate", "--ratios", "0.5,0.1", "--out", s(&out)]).status.code(), Some(1));
    assert_eq!(mftp(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        mftp(&["distill", "--data", s(&out), "--out", s(&out)]).status.code(),
        Some(1)
    );
    assert_eq!(mftp(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_writes_one_log_row_per_epoch_and_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let data = generate(d.path(), 20);
    let (r1, r2) = (d.path().join("r1"), d.path().join("r2"));
    train(&data, &r1, "teacher", "2");
    train(&data, &r2, "teacher", "2");
    let log = fs::read_to_string(r1.join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], LOG_CSV_HEADER);
    assert_eq!(lines.len(), 3);
    assert_eq!(log, fs::read_to_string(r2.join("train_log.csv")).unwrap());
    assert_eq!(fs::read(r1.join("model.ckpt")).unwrap(), fs::read(r2.join("model.ckpt")).unwrap());
}

#[test]
fn distill_with_zero_gamma_matches_plain_student_training() {
    let d = tempfile::tempdir().unwrap();
    let data = generate(d.path(), 20);
    let teacher = d.path().join("teacher");
    train(&data, &teacher, "teacher", "1");
    let nkd = d.path().join("nkd");
    train(&data, &nkd, "student_nkd", "2");
    let kd0 = d.path().join("kd0");
    ok(&[
        "distill",
        "--teacher",
        s(&teacher.join("model.ckpt")),
        "--gamma",
        "0",
        "--data",
        s(&data),
        "--out",
        s(&kd0),
        "--epochs",
        "2",
        "--batch-size",
        "4",
        "--lr",
        "1e-3",
    ]);
    assert_eq!(
        fs::read_to_string(nkd.join("train_log.csv")).unwrap(),
        fs::read_to_string(kd0.join("train_log.csv")).unwrap()
    );
}

#[test]
fn eval_and_plot_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let data = generate(d.path(), 20);
    let model = d.path().join("model");
    train(&data, &model, "student_nkd", "1");
    let ev = d.path().join("eval");
    ok(&[
        "eval",
        "--checkpoint",
        s(&model.join("model.ckpt")),
        "--data",
        s(&data),
        "--use-map",
        "false",
        "--out",
        s(&ev),
    ]);
    let report = fs::read_to_string(ev.join("report.txt")).unwrap();
    assert!(report.contains("minFDE"), "{report}");
    let preds = fs::read_to_string(ev.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().next().unwrap(), mftp::cli::PREDICTIONS_HEADER);

    let plots = d.path().join("plots");
    ok(&["plot", "--data", s(&data), "--predictions", s(&ev), "--out", s(&plots)]);
    let scene_files = files(&data.join("test"));
    assert_eq!(scene_files.len(), 2);
    for scene_path in scene_files {
        let id = scene_path.file_stem().unwrap().to_str().unwrap().to_string();
        let overlay = fs::read_to_string(plots.join(format!("{id}.overlay"))).unwrap();
        assert!(overlay.starts_with(mftp::cli::OVERLAY_MAGIC));
        let scene_text = fs::read_to_string(&scene_path).unwrap();
        let gt: Vec<String> = overlay.lines().filter(|l| l.starts_with("GT,")).map(|l| l[3..].to_string()).collect();
        let agent: String = gt[0].split(',').next().unwrap().to_string();
        let from_scene: Vec<String> = scene_text
            .lines()
            .filter_map(|l| l.strip_prefix("AGENT,"))
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|f| f[0] == agent && f[2].parse::<i64>().unwrap() > 0)
            .map(|f| [f[0], f[2], f[3], f[4], f[5]].join(","))
            .collect();
        let mine: Vec<&String> = gt.iter().filter(|l| l.starts_with(&format!("{agent},"))).collect();
        assert_eq!(mine.len(), from_scene.len());
        for (a, b) in mine.iter().zip(&from_scene) {
            assert_eq!(*a, b);
        }
        let modes: std::collections::BTreeSet<&str> = overlay
            .lines()
            .filter(|l| l.starts_with(&format!("PRED,{agent},")))
            .map(|l| l.split(',').nth(2).unwrap())
            .collect();
        assert_eq!(modes.len(), 6);
    }
}

#[test]
fn eval_on_an_empty_split_is_a_data_error() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    ok(&["generate", "--scenes", "10", "--ratios", "0.8,0.2,0", "--out", s(&data)]);
    let model = d.path().join("model");
    train(&data, &model, "teacher", "1");
    let out = mftp(&[
        "eval",
        "--checkpoint",
        s(&model.join("model.ckpt")),
        "--data",
        s(&data),
        "--out",
        s(&d.path().join("eval")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let d = tempfile::tempdir().unwrap();
    let data = generate(d.path(), 20);
    let out = d.path().join("abl");
    let mut args = vec![
        "ablate", "--data", s(&data), "--which", "iters", "--values", "1,3", "--seeds", "1", "--epochs", "1",
        "--batch-size", "4", "--out", s(&out),
    ];
    args.extend(TINY);
    ok(&args);
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], mftp::experiments::ABLATION_CSV_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("I_T=1,"));
    assert!(lines[2].starts_with("I_T=3,"));
}
