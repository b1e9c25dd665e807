mod common;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pyroclass::data::augment::{apply_affine, AffineParams};
use pyroclass::data::image::gray_to_tensor;
use pyroclass::data::split::stratified_fold_assignment;
use pyroclass::data::{load_manifest, load_samples, parse_manifest, AugmentSpec, Dataset, GrayImage, SampleRecord};
use pyroclass::metrics::{confusion_matrix, evaluate_scores, row_percent};
use pyroclass::model::ModelConfig;
use pyroclass::synthetic::{synthetic_samples, write_corpus};
use pyroclass::train::checkpoint::load_checkpoint;
use pyroclass::train::{cross_validate, predict_samples, DecayMode, TrainConfig};
use pyroclass::{Task, Tensor};

#[test]
fn checkerboard_upscale_matches_closed_form_bilinear() {
    let img = GrayImage::new(2, 2, vec![0, 255, 255, 0]).unwrap();
    let n = 8;
    let t = gray_to_tensor(&img, n).unwrap();
    // On the unit square the bilinear interpolant of [[0,1],[1,0]] is
    // x(1-y) + y(1-x); output centres map to o·2/n + 1/n - 1/2, clamped.
    let src = |o: usize| ((o as f64 + 0.5) * 2.0 / n as f64 - 0.5).clamp(0.0, 1.0);
    for oy in 0..n {
        for ox in 0..n {
            let (x, y) = (src(ox), src(oy));
            let want = x * (1.0 - y) + y * (1.0 - x);
            let got = t.data()[oy * n + ox] as f64;
            assert!((got - want).abs() < 1e-6, "({ox},{oy}) {got} vs {want}");
        }
    }
    // Hand value at (3, 3): x = y = 0.375, so 2 · 0.375 · 0.625.
    assert!((t.data()[3 * n + 3] as f64 - 0.46875).abs() < 1e-6);
}

#[test]
fn quarter_turn_matches_coordinate_mapping() {
    let n = 9;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data: Vec<f32> = common::uniform(&mut rng, n * n, 0.0, 1.0).iter().map(|&v| v as f32).collect();
    let img = Tensor::new(vec![1, n, n], data.clone()).unwrap();
    let out = apply_affine(&img, &AffineParams::rotation(90.0)).unwrap();
    // Counter-clockwise on screen: output (x, y) reads input (n-1-y, x).
    for y in 1..n - 1 {
        for x in 1..n - 1 {
            let want = data[x * n + (n - 1 - y)];
            assert!((out.data()[y * n + x] - want).abs() < 1e-5);
        }
    }

    let mut symmetric = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            let (dx, dy) = (x as f32 - 4.0, y as f32 - 4.0);
            symmetric[y * n + x] = (-(dx * dx + dy * dy) / 8.0).exp();
        }
    }
    let img = Tensor::new(vec![1, n, n], symmetric.clone()).unwrap();
    let out = apply_affine(&img, &AffineParams::rotation(90.0)).unwrap();
    for y in 1..n - 1 {
        for x in 1..n - 1 {
            assert!((out.data()[y * n + x] - symmetric[y * n + x]).abs() < 1e-5);
        }
    }
}

#[test]
fn class_of_twenty_over_nine_folds() {
    for seed in 0..5 {
        let labels = vec![0usize; 20];
        let folds = stratified_fold_assignment(&labels, 9, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let sizes: Vec<usize> = (0..9).map(|f| folds.iter().filter(|&&a| a == f).count()).collect();
        assert!(sizes.iter().all(|s| (2..=3).contains(s)), "{sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 20);
    }
}

#[test]
fn door_row_of_the_objects_table() {
    // Counts whose row percentages are 73.2, 1.1, 23.5, 0.0, 2.2.
    let row = [732usize, 11, 235, 0, 22];
    let mut preds = Vec::new();
    for (j, &n) in row.iter().enumerate() {
        preds.extend(std::iter::repeat_n(j, n));
    }
    for c in 1..5 {
        preds.push(c);
    }
    let mut labels = vec![0usize; 1000];
    labels.extend(1..5);
    let m = confusion_matrix(&preds, &labels, 5).unwrap();
    let pct = row_percent(&m).unwrap();
    assert_eq!(pct[0], vec![73.2, 1.1, 23.5, 0.0, 2.2]);
    assert!((pct[0].iter().sum::<f64>() - 100.0).abs() < 1e-9);
    for (i, r) in pct.iter().enumerate().skip(1) {
        assert_eq!(r[i], 100.0);
    }
}

#[test]
fn objects_manifest_counts() {
    let counts = [
        ("door", 322usize),
        ("firefighter+window", 4663),
        ("firefighter", 15484),
        ("ladder", 1589),
        ("window", 1620),
    ];
    let mut text = String::from("path,label,task_set,video_id\n");
    for (label, n) in counts {
        for i in 0..n {
            text.push_str(&format!("{label}/{i}.png,{label},objects,v{}\n", i / 10));
        }
    }
    let ds = parse_manifest(text.as_bytes(), "objects.csv", Path::new("/data"), false).unwrap();
    assert_eq!(ds.len(), 23_678);
    for (label, n) in counts {
        assert_eq!(ds.count(label), n);
    }
}

#[test]
fn two_fold_crossval_on_separable_toy_is_perfect() {
    let per_class = 8;
    let samples = synthetic_samples(Task::Fire, per_class, 16, 1).unwrap();
    let records: Vec<SampleRecord> = samples
        .labels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let label = Task::Fire.classes()[c];
            SampleRecord::new(PathBuf::from(format!("toy/{i}.pgm")), label, Task::Fire, &format!("v{i}")).unwrap()
        })
        .collect();
    let ds = Dataset::new(records).unwrap();
    let model = ModelConfig::tiny(1, Task::Fire).unwrap().with_dense_width(32).unwrap().with_dropout(0.0).unwrap();
    let config = TrainConfig {
        batch_size: 1,
        decay_mode: DecayMode::PerEpoch,
        max_epochs: 60,
        patience: 60,
        seed: 2,
        ..TrainConfig::for_classes(2)
    };
    let report = cross_validate(&model, &ds, &samples, &config, 2).unwrap();
    let accs: Vec<f64> = report.folds.iter().map(|f| f.accuracy).collect();
    assert_eq!(accs, vec![1.0, 1.0], "{:?}", report.folds.iter().map(|f| f.report.val_loss.last()).collect::<Vec<_>>());
    assert_eq!(report.std_accuracy, 0.0);
    let again = cross_validate(&model, &ds, &samples, &config, 2).unwrap();
    assert_eq!(report, again);
}

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["pyroclass"];
    argv.extend_from_slice(args);
    pyroclass::cli::run(argv)
}

#[test]
fn cli_evaluate_equals_direct_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_corpus(&data, Task::Fire, 30, 16, 10, 8).unwrap();
    let manifest = data.join("manifest.csv");
    let split = dir.path().join("split");
    let run = dir.path().join("run");
    let (s, r) = (split.to_str().unwrap(), run.to_str().unwrap());
    assert_eq!(cli(&["split", "--manifest", manifest.to_str().unwrap(), "--seed", "1", "--out-dir", s]), 0);
    let train_val = split.join("train_val.csv");
    let test = split.join("test.csv");
    let code = cli(&[
        "train", "--manifest", train_val.to_str().unwrap(), "--task", "fire", "--depth", "1", "--input-size", "16",
        "--dense-width", "16", "--dropout", "0", "--batch-size", "1", "--decay-mode", "per-epoch", "--max-epochs", "30",
        "--patience", "30", "--folds", "3", "--seed", "1", "--out-dir", r,
    ]);
    assert_eq!(code, 0);
    let ckpt = run.join("model.ckpt");
    for (m, name) in [(&test, "test"), (&train_val, "train")] {
        let out = run.join(name);
        assert_eq!(
            cli(&["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", m.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]),
            0
        );
        let model = load_checkpoint(&ckpt).unwrap();
        let ds = load_manifest(m).unwrap();
        let samples = load_samples(&ds, 16, &AugmentSpec::default()).unwrap();
        let scores = predict_samples(&model, &samples, 32).unwrap();
        let (direct, _) = evaluate_scores(&scores, &samples.labels, Task::Fire.classes()).unwrap();
        let written: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
        assert_eq!(written, serde_json::to_value(&direct).unwrap());

        if direct.accuracy == 1.0 {
            let csv = std::fs::read_to_string(out.join("confusion.csv")).unwrap();
            let rows: Vec<Vec<String>> = csv.lines().map(|l| l.split(',').map(String::from).collect()).collect();
            assert_eq!(rows[0][1..], ["100.0", "0.0"]);
            assert_eq!(rows[1][1..], ["0.0", "100.0"]);
        }
    }
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("train").join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["accuracy"], 1.0, "training-set accuracy on the separable fixture");
}
