use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use epl::experiment::{read_manifest, Manifest};
use epl::io::{load_tensor, write_labels, write_pgm};
use epl_core::field::LabelMap;
use sha2::{Digest, Sha256};

fn epl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epl")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = epl(args);
    assert!(
        out.status.success(),
        "epl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree_digest(dir: &Path) -> Vec<u8> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update(fs::read(&f).unwrap());
    }
    h.finalize().to_vec()
}

/// Small, fast experiment config shared by the training commands.
fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    fs::write(
        &path,
        r#"{
            "dataset": {"height": 24, "width": 24, "count": 6},
            "train": {"epochs": 1, "eval_count": 3},
            "ablation": {"seeds": [0]}
        }"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_default_writes_200_samples() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("d");
    ok(&["gen", "--out", s(&out)]);
    let m: Manifest = read_manifest(&out).unwrap();
    assert_eq!(m.samples.len(), 200);
    for rel in &m.samples {
        assert!(out.join(rel).join("image.eplt").is_file());
        assert!(out.join(rel).join("labels.pgm").is_file());
    }
    assert!(out.join("config.json").is_file());
}

#[test]
fn gen_is_deterministic_under_seed() {
    let t = tempfile::tempdir().unwrap();
    let (a, b, c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    ok(&["gen", "--out", s(&a), "--seed", "7", "--count", "10"]);
    ok(&["gen", "--out", s(&b), "--seed", "7", "--count", "10"]);
    ok(&["gen", "--out", s(&c), "--seed", "8", "--count", "10"]);
    assert_eq!(tree_digest(&a), tree_digest(&b));
    assert_ne!(tree_digest(&a), tree_digest(&c));
}

#[test]
fn gen_rejects_bad_class_count() {
    let t = tempfile::tempdir().unwrap();
    let out = epl(&["gen", "--out", s(&t.path().join("d")), "--classes", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("class"));
}

#[test]
fn bad_config_file_fails() {
    let t = tempfile::tempdir().unwrap();
    for (name, body) in [
        ("mu.json", r#"{"loss": {"mu_exp": 5}}"#),
        ("w.json", r#"{"ac": {"w": 4}}"#),
        ("split.json", r#"{"ac": {"splitter": "Q"}}"#),
    ] {
        let p = t.path().join(name);
        fs::write(&p, body).unwrap();
        let out = epl(&["--config", s(&p), "gen", "--out", s(&t.path().join("d"))]);
        assert!(!out.status.success(), "{name}");
    }
}

fn square_pgm(path: &Path) {
    let n = 16;
    let data = (0..n * n)
        .map(|p| u32::from((4..12).contains(&(p / n)) && (4..12).contains(&(p % n))))
        .collect();
    write_labels(path, &LabelMap::new(n, n, 2, data).unwrap()).unwrap();
}

#[test]
fn convert_square_mask() {
    let t = tempfile::tempdir().unwrap();
    let pgm = t.path().join("sq.pgm");
    square_pgm(&pgm);
    let out = t.path().join("e.eplt");
    let render = t.path().join("e.pgm");
    ok(&["convert", "--labels", s(&pgm), "--out", s(&out), "--w", "5", "--splitter", "A", "--render", s(&render)]);
    let e = load_tensor(&out).unwrap();
    assert_eq!(e.dims, vec![4, 2, 16, 16]);
    let mut vals: Vec<u32> = e.data.iter().map(|&v| v as u32).collect();
    vals.sort_unstable();
    vals.dedup();
    assert_eq!(vals, vec![0, 1, 2, 3]);
    assert!(render.is_file());
    assert!(t.path().join("e.eplt.config.json").is_file());

    ok(&["convert", "--labels", s(&pgm), "--out", s(&out), "--splitter", "C"]);
    assert_eq!(load_tensor(&out).unwrap().dims[0], 8);
}

#[test]
fn loss_report_json() {
    let t = tempfile::tempdir().unwrap();
    let pgm = t.path().join("sq.pgm");
    square_pgm(&pgm);
    // a perfect prediction as a probability tensor
    let labels = epl::io::read_labels(&pgm, 2).unwrap();
    let y = epl_core::field::one_hot(&labels, 2).unwrap();
    let pred = t.path().join("p.eplt");
    epl::io::save_tensor(&pred, &epl::io::field_tensor(&y).unwrap()).unwrap();
    for (loss, name) in [("point", "point_l2"), ("line", "line_mu10"), ("dice", "dice")] {
        let text = ok(&["loss", "--pred", s(&pred), "--labels", s(&pgm), "--loss", loss, "--seed", "3"]);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["loss_name"], name);
        assert_eq!(v["seed"], 3);
        assert!(v["value"].as_f64().unwrap().abs() < 1e-9);
        assert!(v["config"].is_object());
    }
}

#[test]
fn gradcheck_emits_report() {
    let text = ok(&["gradcheck", "--loss", "point-l2", "--samples", "32"]);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["loss_name"], "point_l2");
    assert_eq!(v["fraction_passing"], 1.0);
}

#[test]
fn train_pair_and_eval() {
    let t = tempfile::tempdir().unwrap();
    let cfg = small_config(t.path());
    let (on, off) = (t.path().join("on"), t.path().join("off"));
    ok(&["--config", &cfg, "train", "--out", s(&on), "--epl", "on"]);
    ok(&["--config", &cfg, "train", "--out", s(&off), "--epl", "off", "--epochs", "2"]);
    for dir in [&on, &off] {
        for f in ["history.csv", "history.json", "checkpoint.eplt", "checkpoint.json", "config.json", "eval.json", "eval.csv"] {
            assert!(dir.join(f).is_file(), "{f}");
        }
        assert!(fs::read_to_string(dir.join("status.json")).unwrap().contains("complete"));
    }
    let off_cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(off.join("config.json")).unwrap()).unwrap();
    assert_eq!(off_cfg["train"]["epl"], false);
    assert_eq!(off_cfg["train"]["epochs"], 2);
    let hist = fs::read_to_string(off.join("history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 3);
    assert!(hist.starts_with("epoch,ce,point,line,total,miou,trimap_iou,fmeasure"));

    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(on.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(meta["K"], 3);
    let (net, _) = epl::experiment::load_checkpoint(&on).unwrap();
    assert_eq!(net.params().len(), meta["param_count"].as_u64().unwrap() as usize);

    // ground truth scored against itself
    let gt = on.join("ground_truth");
    let ev = t.path().join("ev");
    ok(&["eval", "--pred", s(&gt), "--gt", s(&gt), "--out", s(&ev)]);
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("eval.json")).unwrap()).unwrap();
    assert_eq!(rep["miou"], 1.0);
    let widths: Vec<&String> = rep["trimap_iou"].as_object().unwrap().keys().collect();
    assert_eq!(widths, vec!["1", "10", "3", "5"]);
    let csv = fs::read_to_string(ev.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1 + 4 + 3);

    ok(&["eval", "--pred", s(&on.join("predictions")), "--gt", s(&gt), "--out", s(&ev)]);
}

#[test]
fn train_sc_ablation_and_dataset_input() {
    let t = tempfile::tempdir().unwrap();
    let cfg = small_config(t.path());
    let data = t.path().join("data");
    ok(&["--config", &cfg, "gen", "--out", s(&data)]);
    let out = t.path().join("sc");
    ok(&["--config", &cfg, "train", "--out", s(&out), "--ablate", "sc", "--data", s(&data)]);
    let c: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(c["train"]["conversion"], "sc");
}

#[test]
fn eval_lists_every_missing_prediction() {
    let t = tempfile::tempdir().unwrap();
    let (pred, gt) = (t.path().join("pred"), t.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    let m = LabelMap::filled(4, 4, 3, 1).unwrap();
    for id in ["a", "b", "c"] {
        write_labels(&gt.join(format!("{id}.pgm")), &m).unwrap();
    }
    write_labels(&pred.join("b.pgm"), &m).unwrap();
    let out = epl(&["eval", "--pred", s(&pred), "--gt", s(&gt), "--out", s(&t.path().join("ev"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("2 sample(s)") && err.contains('a') && err.contains('c'), "{err}");
    assert!(fs::read_to_string(t.path().join("ev/status.json")).unwrap().contains("failed"));
}

#[test]
fn ablate_emits_one_row_per_configuration() {
    let t = tempfile::tempdir().unwrap();
    let cfg = small_config(t.path());
    for (sweep, rows) in [("mu", 5), ("splitter", 3), ("weight", 5), ("kernel", 4)] {
        let out = t.path().join(sweep);
        ok(&["--config", &cfg, "ablate", "--sweep", sweep, "--out", s(&out)]);
        let mut r = csv::Reader::from_path(out.join(format!("ablation_{sweep}.csv"))).unwrap();
        let recs: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(recs.len(), rows, "{sweep}");
        assert_eq!(&r.headers().unwrap()[0], "sweep");
    }
}

#[test]
fn failing_training_flags_partial_output() {
    let t = tempfile::tempdir().unwrap();
    let cfg = small_config(t.path());
    let out = t.path().join("div");
    let res = epl(&["--config", &cfg, "train", "--out", s(&out), "--lr", "1e300", "--epochs", "3"]);
    assert!(!res.status.success());
    assert!(fs::read_to_string(out.join("status.json")).unwrap().contains("failed"));
    assert!(out.join("history.csv").is_file());
}

#[test]
fn pgm_with_other_maxval_is_read() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path().join("m.pgm");
    let mut f = fs::File::create(&p).unwrap();
    write_pgm(&mut f, 1, 2, &[0, 1]).unwrap();
    let out = t.path().join("e.eplt");
    ok(&["convert", "--labels", s(&p), "--out", s(&out), "--w", "3"]);
}
