//! Drive the command-line front end in-process: split a generated corpus,
//! train, evaluate on the held-out videos, explain one frame and embed the
//! test scores. Outputs land in a temporary directory.

use pyroclass::synthetic::write_corpus;
use pyroclass::Task;

fn run(args: &[&str]) {
    println!("$ pyroclass {}", args.join(" "));
    let code = pyroclass::cli::run(std::iter::once("pyroclass").chain(args.iter().copied()));
    assert_eq!(code, 0, "command failed");
}

fn main() -> pyroclass::Result<()> {
    let root = std::env::temp_dir().join("pyroclass-cli-pipeline");
    let data = root.join("corpus");
    write_corpus(&data, Task::Poses, 60, 32, 10, 0)?;
    let s = |p: std::path::PathBuf| p.to_string_lossy().into_owned();
    let (manifest, split, run_dir) = (s(data.join("manifest.csv")), s(root.join("split")), s(root.join("run")));
    let (train_val, test) = (s(root.join("split/train_val.csv")), s(root.join("split/test.csv")));
    let ckpt = s(root.join("run/model.ckpt"));
    let frame = s(data.join("frames/standing_0000.pgm"));

    run(&["split", "--manifest", &manifest, "--seed", "1", "--out-dir", &split]);
    run(&[
        "train", "--manifest", &train_val, "--task", "poses", "--depth", "1", "--input-size", "16", "--dense-width", "32",
        "--batch-size", "1", "--decay-mode", "per-epoch", "--max-epochs", "40", "--patience", "8", "--seed", "1",
        "--out-dir", &run_dir,
    ]);
    run(&["evaluate", "--checkpoint", &ckpt, "--manifest", &test, "--out-dir", &run_dir]);
    run(&["explain", "--checkpoint", &ckpt, "--image", &frame, "--out-dir", &run_dir]);
    run(&["embed", "--checkpoint", &ckpt, "--manifest", &test, "--iterations", "300", "--out-dir", &run_dir]);

    let mut files: Vec<String> = std::fs::read_dir(root.join("run"))?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    files.sort();
    println!("outputs in {run_dir}: {}", files.join(", "));
    Ok(())
}
