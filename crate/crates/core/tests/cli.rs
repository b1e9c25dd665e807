use std::collections::HashSet;
use std::path::Path;
use std::process::{Command, Output};

use pyroclass::data::load_manifest;
use pyroclass::synthetic::write_corpus;
use pyroclass::train::checkpoint::save_checkpoint;
use pyroclass::{build_model, ModelConfig, Task};

fn pyroclass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pyroclass"))
        .args(args)
        .env_remove("PYROCLASS_THREADS")
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = match std::fs::read_dir(dir) {
        Ok(entries) => entries.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect(),
        Err(_) => Vec::new(),
    };
    names.sort();
    names
}

#[test]
fn help_lists_subcommands_and_model_flags() {
    let out = pyroclass(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = text(&out.stdout);
    for cmd in ["split", "train", "crossval", "evaluate", "infer", "explain", "embed"] {
        assert!(help.contains(cmd), "missing {cmd} in\n{help}");
    }
    let out = pyroclass(&["train", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = text(&out.stdout);
    for flag in ["--depth", "--dropout", "--input-size", "--dense-width", "--decay-mode", "--seed", "--out-dir"] {
        assert!(help.contains(flag), "missing {flag}");
    }
}

#[test]
fn depth_out_of_range_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), Task::Fire, 4, 16, 2, 0).unwrap();
    let manifest = dir.path().join("manifest.csv");
    let out_dir = dir.path().join("out");
    let out = pyroclass(&[
        "train", "--manifest", manifest.to_str().unwrap(), "--task", "fire", "--depth", "6",
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("depth must be 1..5"), "{}", text(&out.stderr));
    assert!(files_in(&out_dir).is_empty());
}

#[test]
fn unknown_label_exits_3_naming_the_row_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), Task::Poses, 3, 16, 1, 0).unwrap();
    let manifest = dir.path().join("manifest.csv");
    let mut lines: Vec<String> = std::fs::read_to_string(&manifest).unwrap().lines().map(String::from).collect();
    lines[2] = lines[2].replace("crawling", "kneeling");
    std::fs::write(&manifest, lines.join("\n")).unwrap();
    let out_dir = dir.path().join("out");
    let out = pyroclass(&["split", "--manifest", manifest.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = text(&out.stderr);
    assert!(err.contains("row 3") && err.contains("kneeling"), "{err}");
    assert!(files_in(&out_dir).is_empty());
}

#[test]
fn missing_manifest_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = pyroclass(&["split", "--manifest", dir.path().join("none.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_thread_count_exits_2() {
    let out = Command::new(env!("CARGO_BIN_EXE_pyroclass"))
        .args(["split", "--manifest", "x.csv"])
        .env("PYROCLASS_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn split_writes_disjoint_manifests_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let full = write_corpus(&dir.path().join("data"), Task::Poses, 20, 16, 10, 2).unwrap();
    let manifest = dir.path().join("data").join("manifest.csv");
    let out_dir = dir.path().join("split");
    let out = pyroclass(&[
        "split", "--manifest", manifest.to_str().unwrap(), "--seed", "9", "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(files_in(&out_dir), ["split.json", "split.provenance.json", "test.csv", "train_val.csv"]);

    let train_val = load_manifest(&out_dir.join("train_val.csv")).unwrap();
    let test = load_manifest(&out_dir.join("test.csv")).unwrap();
    assert_eq!(train_val.len() + test.len(), full.len());
    let paths: HashSet<_> = train_val.records().iter().map(|r| &r.path).collect();
    assert!(test.records().iter().all(|r| !paths.contains(&r.path)));
    let videos: HashSet<_> = train_val.records().iter().map(|r| &r.video_id).collect();
    assert!(test.records().iter().all(|r| !videos.contains(&r.video_id)));

    let prov: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("split.provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["command"], "split");
    assert_eq!(prov["seed"], 9);
    assert_eq!(prov["argv"][0], "split");
}

#[test]
fn infer_prints_one_normalised_line_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_corpus(&dir.path().join("data"), Task::Objects, 1, 24, 1, 3).unwrap();
    let config = ModelConfig::tiny(1, Task::Objects).unwrap();
    let ckpt = dir.path().join("model.ckpt");
    save_checkpoint(&build_model(&config, 1).unwrap(), &ckpt).unwrap();

    let mut args = vec!["infer".to_string(), "--checkpoint".into(), ckpt.display().to_string()];
    args.push("--out-dir".into());
    args.push(dir.path().join("out").display().to_string());
    args.extend(ds.records().iter().map(|r| r.path.display().to_string()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = pyroclass(&args);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));

    let stdout = text(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), ds.len());
    for (line, record) in lines.iter().zip(ds.records()) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["image"], record.path.display().to_string());
        let scores: Vec<f64> = v["scores"].as_array().unwrap().iter().map(|s| s.as_f64().unwrap()).collect();
        assert_eq!(scores.len(), 5);
        assert!((scores.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let best = (0..5).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        assert_eq!(v["class"], Task::Objects.classes()[best]);
    }
}

#[test]
fn evaluate_rejects_manifest_of_another_task() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("data"), Task::Fire, 2, 16, 1, 0).unwrap();
    let ckpt = dir.path().join("model.ckpt");
    save_checkpoint(&build_model(&ModelConfig::tiny(1, Task::Poses).unwrap(), 0).unwrap(), &ckpt).unwrap();
    let out_dir = dir.path().join("out");
    let out = pyroclass(&[
        "evaluate", "--checkpoint", ckpt.to_str().unwrap(),
        "--manifest", dir.path().join("data").join("manifest.csv").to_str().unwrap(),
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(files_in(&out_dir).is_empty());
}

#[test]
fn corrupt_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let image = dir.path().join("x.pgm");
    std::fs::write(&image, b"P5\n2 2\n255\n\x00\x01\x02\x03").unwrap();
    let out = pyroclass(&["infer", "--checkpoint", ckpt.to_str().unwrap(), image.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}
