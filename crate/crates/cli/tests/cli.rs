use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use amvnet_core::fusion::{ensemble_labels, Combiner};
use amvnet_core::io::{read_labels, read_scores, write_predictions, RemapTable};

fn reference_text() -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/reference.toml");
    fs::read_to_string(p).unwrap()
}

fn tiny_text() -> String {
    reference_text()
        .replace("scans = 20", "scans = 3")
        .replace("val_scans = 5", "val_scans = 1")
        .replace("num_points = 20000", "num_points = 1500")
        .replace("epochs = 20", "epochs = 2")
        .replace("batch_size = 256", "batch_size = 32")
        .replace("batches_per_scan = 4", "batches_per_scan = 1")
}

/// Swaps the synthetic section for a manifest-backed dataset.
fn dataset_text(base: &str, manifest: &Path) -> String {
    let (head, tail) = base.split_at(base.find("[synthetic]").unwrap());
    let tail = &tail[tail.find("[head]").unwrap()..];
    format!("{head}[dataset]\nmanifest = {:?}\n\n{tail}", manifest.to_str().unwrap())
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn amvnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amvnet")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn run_ok(args: &[&str]) -> String {
    let out = amvnet(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = walk(dir).into_iter().map(|f| (f.strip_prefix(dir).unwrap().display().to_string(), fs::read(&f).unwrap())).collect();
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn synth_is_deterministic_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &tiny_text().replace("scans = 3", "scans = 10"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&["synth", "--config", p(&cfg), "--out", p(&a)]);
    run_ok(&["synth", "--config", p(&cfg), "--out", p(&b)]);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    assert_eq!(fs::read_dir(a.join("scans")).unwrap().count(), 40);
    assert!(a.join("manifest.toml").is_file());
    assert_eq!(fs::read_to_string(a.join("config.toml")).unwrap(), fs::read_to_string(&cfg).unwrap());

    let c = tmp.path().join("c");
    run_ok(&["synth", "--config", p(&cfg), "--out", p(&c), "--seed", "7"]);
    assert_ne!(fs::read(a.join("scans/scan_0000.bin")).unwrap(), fs::read(c.join("scans/scan_0000.bin")).unwrap());
    assert_eq!(fs::read_to_string(c.join("seed.txt")).unwrap().trim(), "7");
}

#[test]
fn config_errors_exit_one_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let zero = write_config(tmp.path(), "zero.toml", &tiny_text().replace("scans = 3", "scans = 0"));
    let unknown = write_config(tmp.path(), "unknown.toml", &format!("bogus = 1\n{}", tiny_text()));
    for cfg in [zero, unknown, tmp.path().join("missing.toml")] {
        let r = amvnet(&["synth", "--config", p(&cfg), "--out", p(&out)]);
        assert_eq!(r.status.code(), Some(1), "{}", String::from_utf8_lossy(&r.stderr));
        assert!(!out.exists());
    }
    assert_eq!(amvnet(&["synth"]).status.code(), Some(1));
    assert_eq!(amvnet(&["bogus-command"]).status.code(), Some(1));
    let cfg = write_config(tmp.path(), "ok.toml", &tiny_text());
    assert_eq!(amvnet(&["synth", "--config", p(&cfg)]).status.code(), Some(1), "no output directory");
}

#[test]
fn assert_fractions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &tiny_text());
    let data = tmp.path().join("data");
    run_ok(&["synth", "--config", p(&cfg), "--out", p(&data)]);

    // score files B replaced by A: every point certain below tau = 1
    let manifest = fs::read_to_string(data.join("manifest.toml")).unwrap().replace(".b.amvs", ".a.amvs");
    fs::write(data.join("same.toml"), manifest).unwrap();
    let same = write_config(tmp.path(), "same.toml", &dataset_text(&tiny_text(), &data.join("same.toml")));
    let out = run_ok(&["assert", "--config", p(&same), "--out", p(&tmp.path().join("s"))]);
    assert!(out.contains("fraction=0.0000"), "{out}");

    let one = write_config(tmp.path(), "one.toml", &tiny_text().replace("tau = 0.85", "tau = 1.0"));
    let out = run_ok(&["assert", "--config", p(&one), "--out", p(&tmp.path().join("o"))]);
    assert!(out.contains("fraction=1.0000"), "{out}");
    let hist = fs::read_to_string(tmp.path().join("o/histogram.csv")).unwrap();
    let total: usize = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 3 * 1500);
}

#[test]
fn train_fuse_eval_round() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &tiny_text());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&["train", "--config", p(&cfg), "--out", p(&a)]);
    run_ok(&["train", "--config", p(&cfg), "--out", p(&b)]);
    assert_eq!(fs::read(a.join("checkpoint.amvm")).unwrap(), fs::read(b.join("checkpoint.amvm")).unwrap());
    let trace = fs::read_to_string(a.join("loss_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 2);

    run_ok(&["fuse", "--config", p(&cfg), "--out", p(&a)]);
    run_ok(&["fuse", "--config", p(&cfg), "--out", p(&b)]);
    let preds = dir_bytes(&a.join("predictions"));
    assert_eq!(preds, dir_bytes(&b.join("predictions")));
    assert_eq!(preds.iter().filter(|(n, _)| n.ends_with(".pred")).count(), 3);
    assert_eq!(preds.iter().filter(|(n, _)| n.ends_with(".src")).count(), 3);

    let out = run_ok(&["eval", "--config", p(&cfg), "--out", p(&a)]);
    assert!(out.contains("amvnet"));
    let strata = fs::read_to_string(a.join("strata.csv")).unwrap();
    assert_eq!(strata.lines().count(), 1 + 5);
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("class,iou\n"));
    assert!(metrics.contains("\nmiou,") && metrics.contains("\nfw_iou,"));

    // in-memory fusion through --checkpoint matches the prediction files
    let c = tmp.path().join("c");
    run_ok(&["eval", "--config", p(&cfg), "--out", p(&c), "--checkpoint", p(&a.join("checkpoint.amvm"))]);
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(c.join("metrics.csv")).unwrap());
}

#[test]
fn tau_zero_fusion_reproduces_the_ensemble() {
    let tmp = tempfile::tempdir().unwrap();
    let text = tiny_text();
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let data = tmp.path().join("data");
    run_ok(&["synth", "--config", p(&cfg), "--out", p(&data)]);
    run_ok(&["train", "--config", p(&cfg), "--out", p(&data)]);

    let zero = write_config(tmp.path(), "zero.toml", &text.replace("tau = 0.85", "tau = 0.0"));
    run_ok(&["fuse", "--config", p(&zero), "--out", p(&data), "--checkpoint", p(&data.join("checkpoint.amvm"))]);
    for i in 0..3 {
        let name = format!("scan_{i:04}");
        let f = read_scores(&fs::read(data.join(format!("scans/{name}.a.amvs"))).unwrap()).unwrap();
        let g = read_scores(&fs::read(data.join(format!("scans/{name}.b.amvs"))).unwrap()).unwrap();
        let expected = write_predictions(&ensemble_labels(&f, &g, Combiner::Geometric).unwrap()).unwrap();
        assert_eq!(fs::read(data.join(format!("predictions/{name}.pred"))).unwrap(), expected);
        assert!(fs::read(data.join(format!("predictions/{name}.src"))).unwrap().iter().all(|&s| s == 0));
    }
}

#[test]
fn eval_against_ground_truth_and_bad_lengths() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &tiny_text());
    let data = tmp.path().join("data");
    run_ok(&["synth", "--config", p(&cfg), "--out", p(&data)]);
    let preds = tmp.path().join("gt_preds");
    fs::create_dir_all(&preds).unwrap();
    let remap = RemapTable::identity(8);
    for i in 0..3 {
        let name = format!("scan_{i:04}");
        let gt = read_labels(&fs::read(data.join(format!("scans/{name}.label"))).unwrap(), &remap).unwrap();
        fs::write(preds.join(format!("{name}.pred")), write_predictions(&gt).unwrap()).unwrap();
    }
    let out = tmp.path().join("eval");
    run_ok(&["eval", "--config", p(&cfg), "--out", p(&out), "--predictions", p(&preds)]);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.contains("\nmiou,1\n"), "{metrics}");

    let last = preds.join("scan_0002.pred");
    let bytes = fs::read(&last).unwrap();
    fs::write(&last, &bytes[..bytes.len() - 4]).unwrap();
    let r = amvnet(&["eval", "--config", p(&cfg), "--out", p(&tmp.path().join("bad")), "--predictions", p(&preds)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!tmp.path().join("bad").exists());
}

#[test]
fn divergence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let text = tiny_text().replace("lr_max = 0.01", "lr_max = 1e300");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let r = amvnet(&["train", "--config", p(&cfg), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn sweeps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &tiny_text());
    let out = tmp.path().join("s");
    run_ok(&["sweep", "--config", p(&cfg), "--out", p(&out), "--axis", "neighbors", "--values", "3,7,15"]);
    let csv = fs::read_to_string(out.join("sweep_neighbors.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);

    run_ok(&["sweep", "--config", p(&cfg), "--out", p(&out), "--axis", "tau", "--values", "0.85,1.0"]);
    let csv = fs::read_to_string(out.join("sweep_tau.csv")).unwrap();
    let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    assert_eq!(last[2], "1");

    // the tau = 1 endpoint equals training and fusing everything through the head
    let one = write_config(tmp.path(), "one.toml", &tiny_text().replace("tau = 0.85", "tau = 1.0"));
    let t = tmp.path().join("t");
    run_ok(&["train", "--config", p(&one), "--out", p(&t)]);
    run_ok(&["eval", "--config", p(&one), "--out", p(&t), "--checkpoint", p(&t.join("checkpoint.amvm"))]);
    let metrics = fs::read_to_string(t.join("metrics.csv")).unwrap();
    let miou = metrics.lines().find(|l| l.starts_with("miou,")).unwrap().trim_start_matches("miou,");
    assert_eq!(miou, last[1]);

    let bad = amvnet(&["sweep", "--config", p(&cfg), "--out", p(&out), "--axis", "neighbors", "--values", "2.5"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn project_writes_range_images() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &tiny_text());
    let out = tmp.path().join("p");
    run_ok(&["project", "--config", p(&cfg), "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("projection.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let img = fs::read(out.join("rv/scan_0000.amvi")).unwrap();
    assert_eq!(&img[..4], b"AMVI");
    assert_eq!(img.len(), 16 + 64 * 2048 * 6 * 4);
}
