mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::bar_mask;
use vesseg::dataio::synth::write_drive_layout;
use vesseg::dataio::{read_mask, read_raster, read_tensors, write_mask, write_raster};
use vesseg::mask::BinaryMask;
use vesseg::preprocess::RasterImage;

fn vesseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vesseg")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--dataset",
    "drive",
    "--input-size",
    "32",
    "--channels",
    "4,6,8,8",
    "--strict-dspp-extent",
    "false",
    "--strict-counts",
    "false",
];

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_drive_layout(&dir.path().join("data"), 40, 36, 2, 2, 7).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, tag: &str, extra: &[&str]) -> Output {
        let root = self.path("data");
        let ckpt = self.path(&format!("{tag}.vseg"));
        let csv = self.path(&format!("{tag}.csv"));
        let mut args = vec!["train", "--data-root", p(&root), "--checkpoint", p(&ckpt), "--loss-csv", p(&csv)];
        args.extend_from_slice(TINY);
        args.extend_from_slice(extra);
        vesseg(&args)
    }
}

fn read_losses(path: &Path) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epoch,mean_loss"));
    lines
        .enumerate()
        .map(|(i, l)| {
            let (e, v) = l.split_once(',').unwrap();
            assert_eq!(e.parse::<usize>().unwrap(), i + 1);
            v.parse().unwrap()
        })
        .collect()
}

#[test]
fn train_writes_history_and_is_reproducible() {
    let ws = Workspace::new();
    let extra = ["--epochs", "5", "--seed", "3", "--lr", "0.01"];
    let a = ws.train("a", &extra);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert!(a.stdout.is_empty());
    assert!(String::from_utf8_lossy(&a.stderr).contains("epoch 5 mean_loss"));
    let losses = read_losses(&ws.path("a.csv"));
    assert_eq!(losses.len(), 5);
    assert!(losses[4] < losses[0], "{losses:?}");

    assert_eq!(code(&ws.train("b", &extra)), 0);
    assert_eq!(fs::read(ws.path("a.csv")).unwrap(), fs::read(ws.path("b.csv")).unwrap());
    assert_eq!(fs::read(ws.path("a.vseg")).unwrap(), fs::read(ws.path("b.vseg")).unwrap());

    assert_eq!(code(&ws.train("c", &["--epochs", "5", "--seed", "4", "--lr", "0.01"])), 0);
    assert_ne!(fs::read(ws.path("a.vseg")).unwrap(), fs::read(ws.path("c.vseg")).unwrap());
}

#[test]
fn flags_override_config_file() {
    let ws = Workspace::new();
    let cfg = ws.path("run.json");
    fs::write(&cfg, r#"{"epochs": 2, "batch_size": 1, "augment": false}"#).unwrap();
    assert_eq!(code(&ws.train("f", &["--config", p(&cfg)])), 0);
    assert_eq!(read_losses(&ws.path("f.csv")).len(), 2);
    assert_eq!(code(&ws.train("g", &["--config", p(&cfg), "--epochs", "3"])), 0);
    assert_eq!(read_losses(&ws.path("g.csv")).len(), 3);
}

#[test]
fn resume_continues_from_checkpoint() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.train("r1", &["--epochs", "1"])), 0);
    let ckpt = ws.path("r1.vseg");
    assert_eq!(code(&ws.train("r2", &["--epochs", "1", "--resume", p(&ckpt)])), 0);
    let resumed = vesseg::dataio::load_checkpoint(&ws.path("r2.vseg")).unwrap();
    assert_eq!(resumed.adam.unwrap().step_count, 2);
    let wrong = ws.train("r3", &["--epochs", "1", "--resume", p(&ckpt), "--channels", "4,6,8,10"]);
    assert_eq!(code(&wrong), 1);
}

#[test]
fn exit_codes_follow_error_kind() {
    let ws = Workspace::new();
    let help = vesseg(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(!help.stdout.is_empty());
    assert_eq!(code(&vesseg(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&vesseg(&["train", "--threshold", "1.5", "--checkpoint", "x"])), 1);

    let cfg = ws.path("bad.json");
    fs::write(&cfg, r#"{"epochs": 2, "unknown_key": 1}"#).unwrap();
    let out = ws.train("x", &["--config", p(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_key"));
    assert_eq!(code(&ws.train("x", &["--config", p(&ws.path("absent.json"))])), 1);

    let missing = ws.path("nowhere");
    let out = vesseg(&["train", "--data-root", p(&missing), "--checkpoint", p(&ws.path("m.vseg"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
    let root = ws.path("data");
    let strict = vesseg(&["train", "--data-root", p(&root), "--checkpoint", p(&ws.path("s.vseg"))]);
    assert_eq!(code(&strict), 2);
    assert!(String::from_utf8_lossy(&strict.stderr).contains("expected 20"));

    let blowup = ws.train("n", &["--epochs", "3", "--lr", "1e38", "--lambda", "0"]);
    assert_eq!(code(&blowup), 3, "{}", String::from_utf8_lossy(&blowup.stderr));

    fs::write(ws.path("junk.vseg"), b"nope").unwrap();
    let img = ws.path("data/test/images/01_test.png");
    let out = vesseg(&["predict", "--ckpt", p(&ws.path("junk.vseg")), "--image", p(&img), "--out", p(&ws.path("o.png"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn predict_restores_native_size() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.train("m", &["--epochs", "1"])), 0);
    let ckpt = ws.path("m.vseg");
    let img = ws.path("data/test/images/01_test.png");
    let run = |out: &str, extra: &[&str]| {
        let mut args = vec!["predict", "--ckpt", p(&ckpt), "--image", p(&img)];
        let out = ws.path(out);
        let out = out.to_str().unwrap().to_string();
        args.extend(["--out", out.as_str()]);
        args.extend_from_slice(extra);
        assert_eq!(code(&vesseg(&args)), 0);
        PathBuf::from(out)
    };
    let mask_path = ws.path("full.png");
    let raw_path = ws.path("p.vseg");
    let first = run("p1.png", &["--threshold", "0", "--mask-out", p(&mask_path), "--raw", p(&raw_path)]);
    let second = run("p2.png", &[]);
    let prob = read_raster(&first).unwrap();
    assert_eq!((prob.width(), prob.height(), prob.channels()), (40, 36, 1));
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
    let mask = read_mask(&mask_path).unwrap();
    assert_eq!(mask.count(), 40 * 36);
    let raw = read_tensors(&raw_path).unwrap()[0].to_tensor().unwrap();
    assert_eq!(raw.shape().dims(), [1, 1, 36, 40]);
    for (q, r) in prob.data().iter().zip(raw.data()) {
        assert_eq!(*q, (255.0 * r).round() as u8);
    }
}

fn eval_json(ws: &Workspace, extra: &[&str]) -> serde_json::Value {
    let root = ws.path("data");
    let mut args = vec!["eval", "--data-root", p(&root)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    let out = vesseg(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn eval_of_truth_against_itself_is_perfect() {
    let ws = Workspace::new();
    let table = ws.path("table.csv");
    let v = eval_json(&ws, &["--gt-as-prediction", "--fov", "--table", p(&table)]);
    let mut keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(keys, ["acc", "f1", "per_image", "precision", "se", "sp"]);
    for k in ["se", "sp", "acc", "precision", "f1"] {
        assert_eq!(v[k], 1.0, "{k}");
    }
    assert_eq!(v["per_image"].as_array().unwrap().len(), 2);
    assert_eq!(v["per_image"][0]["name"], "01");
    let rows = fs::read_to_string(&table).unwrap();
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn eval_and_prcurve_run_on_a_checkpoint() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.train("e", &["--epochs", "2"])), 0);
    let ckpt = ws.path("e.vseg");
    let a = eval_json(&ws, &["--ckpt", p(&ckpt), "--fov"]);
    let b = eval_json(&ws, &["--ckpt", p(&ckpt), "--fov"]);
    assert_eq!(a, b);
    let pooled: u64 = a["per_image"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| ["tp", "tn", "fp", "fn"].iter().map(|k| r["counts"][k].as_u64().unwrap()).sum::<u64>())
        .sum();
    let fov_pixels: usize = ["01", "02"]
        .iter()
        .map(|id| read_mask(&ws.path(&format!("data/test/mask/{id}_test_mask.png"))).unwrap().count())
        .sum();
    assert_eq!(pooled as usize, fov_pixels);

    let pr = ws.path("pr.csv");
    let root = ws.path("data");
    let mut args = vec!["prcurve", "--ckpt", p(&ckpt), "--data-root", p(&root), "--out", p(&pr)];
    args.extend_from_slice(TINY);
    assert_eq!(code(&vesseg(&args)), 0);
    let text = fs::read_to_string(&pr).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("threshold,precision,recall"));
    let recalls: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(recalls.len(), 99);
    assert!(recalls.windows(2).all(|w| w[1] <= w[0]));
}

fn widths_csv(dir: &Path, mask: &BinaryMask) -> (Output, String) {
    let m = dir.join("mask.png");
    write_mask(&m, mask).unwrap();
    let (out, csv) = (dir.join("overlay.png"), dir.join("w.csv"));
    let res = vesseg(&["widths", "--mask", p(&m), "--out", p(&out), "--csv", p(&csv)]);
    let text = fs::read_to_string(&csv).unwrap_or_default();
    (res, text)
}

fn widths_of(csv: &str) -> Vec<(usize, usize, f64)> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn widths_command_examples() {
    let dir = tempfile::tempdir().unwrap();
    let (out, csv) = widths_csv(dir.path(), &BinaryMask::new(12, 9));
    assert_eq!(code(&out), 0);
    assert_eq!(csv, "x,y,width\n");

    let line = BinaryMask::from_fn(20, 9, |x, y| y == 4 && (3..17).contains(&x));
    let (_, csv) = widths_csv(dir.path(), &line);
    let rows = widths_of(&csv);
    assert_eq!(rows.len(), 14);
    assert!(rows.iter().all(|r| r.2 == 1.0));

    let bar = bar_mask(30, 15, 5);
    let (_, csv) = widths_csv(dir.path(), &bar);
    let interior: Vec<_> = widths_of(&csv).into_iter().filter(|r| (8..22).contains(&r.0)).collect();
    assert!(!interior.is_empty());
    assert!(interior.iter().all(|r| r.2 == 5.0), "{interior:?}");
    let overlay = read_raster(&dir.path().join("overlay.png")).unwrap();
    assert_eq!((overlay.width(), overlay.height(), overlay.channels()), (30, 15, 3));

    let gray = dir.path().join("gray.png");
    write_raster(&gray, &RasterImage::gray(3, 3, vec![0, 10, 255, 0, 0, 0, 0, 0, 0]).unwrap()).unwrap();
    let res = vesseg(&["widths", "--mask", p(&gray), "--out", p(&dir.path().join("o.png")), "--csv", p(&dir.path().join("c.csv"))]);
    assert_eq!(code(&res), 2);
}

#[test]
fn synth_command_writes_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("chase");
    let out = vesseg(&["synth", "--out", p(&root), "--layout", "chase", "--train", "20", "--test", "8", "--width", "20", "--height", "16"]);
    assert_eq!(code(&out), 0);
    let idx = vesseg::dataio::load_dataset(&root, vesseg::dataio::DatasetKind::Chase, vesseg::dataio::Split::Test).unwrap();
    assert_eq!(idx.entries.len(), 8);
}
