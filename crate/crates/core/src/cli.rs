//! Command-line front end: `split`, `train`, `crossval`, `evaluate`,
//! `infer`, `explain` and `embed`.
//!
//! Every subcommand writes `<command>.provenance.json` into `--out-dir`
//! (argv, seed, resolved configuration, versions). Exit codes: 0 success,
//! 1 I/O, 2 bad arguments or configuration, 3 data errors, 4 divergence.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{
    self, balance_classes, load_manifest, load_samples, split_test, stratified_folds, write_manifest, AugmentSpec,
    Dataset,
};
use crate::embed::{collect_outputs, export_embedding, tsne, EmbedConfig};
use crate::error::{Error, Result};
use crate::explain::{cam_path, export_cam, export_overlay, grad_cam, CamLayer};
use crate::io::{write_atomic, write_json};
use crate::metrics::{evaluate_scores, write_confusion_csv, write_roc_csv};
use crate::model::{build_model, ModelConfig};
use crate::task::Task;
use crate::train::checkpoint::{load_checkpoint, save_checkpoint, VERSION as CHECKPOINT_VERSION};
use crate::train::{cross_validate, predict_samples, train, DecayMode, LossKind, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "pyroclass", version, about = "Thermal-image CNN classifier toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stratified, video-grouped train/test split of a manifest.
    Split(SplitArgs),
    /// Train one model and save a checkpoint.
    Train(TrainArgs),
    /// Stratified k-fold cross-validation.
    Crossval(CrossvalArgs),
    /// Confusion matrix, per-class scores and ROC for a labelled manifest.
    Evaluate(EvaluateArgs),
    /// Classify images; one JSON line per image.
    Infer(InferArgs),
    /// Grad-CAM map for one image.
    Explain(ExplainArgs),
    /// t-SNE of the model's output scores.
    Embed(EmbedArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Seed for every randomized step.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for all outputs.
    #[arg(long, default_value = "pyroclass-out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// objects, poses or fire.
    #[arg(long)]
    task: Task,
    /// Number of VGG16 convolutional sections, 1..5.
    #[arg(long, default_value_t = 1)]
    depth: usize,
    /// Dropout rate after each hidden dense layer.
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Square input side; 224 for the full network.
    #[arg(long, default_value_t = 224)]
    input_size: usize,
    /// Units in each hidden dense layer.
    #[arg(long, default_value_t = 4096)]
    dense_width: usize,
    /// Divides every convolutional channel width.
    #[arg(long, default_value_t = 1)]
    width_divisor: usize,
}

impl ModelArgs {
    fn config(&self) -> Result<ModelConfig> {
        ModelConfig::new(self.depth, self.task)?
            .with_input_size(self.input_size)?
            .with_dense_width(self.dense_width)?
            .with_width_divisor(self.width_divisor)?
            .with_dropout(self.dropout)
    }
}

#[derive(Args, Debug, Clone)]
struct OptimArgs {
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Smallest validation-loss drop that counts as improvement.
    #[arg(long, default_value_t = 1e-4)]
    min_delta: f64,
    /// Base learning rate.
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Inverse-time decay: lr / (1 + decay · t).
    #[arg(long, default_value_t = 0.009)]
    decay: f64,
    /// Whether t counts updates (per-update) or epochs (per-epoch).
    #[arg(long, default_value = "per-update")]
    decay_mode: DecayMode,
    /// Defaults to binary for two-class tasks, categorical otherwise.
    #[arg(long)]
    loss: Option<LossKind>,
    /// Pad minority classes with augmented copies before training.
    #[arg(long)]
    balance: bool,
}

impl OptimArgs {
    fn config(&self, num_classes: usize, seed: u64) -> Result<TrainConfig> {
        let base = TrainConfig::for_classes(num_classes);
        let config = TrainConfig {
            base_lr: self.lr,
            decay: self.decay,
            decay_mode: self.decay_mode,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            min_delta: self.min_delta,
            loss: self.loss.unwrap_or(base.loss),
            seed,
        };
        config.validate(num_classes)?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training manifest (usually the train/validation side of `split`).
    #[arg(long)]
    manifest: PathBuf,
    /// Validation manifest; without it one stratified fold of `--manifest` is held out.
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    /// Fold count used for the held-out validation fold.
    #[arg(long, default_value_t = 9)]
    folds: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct CrossvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 9)]
    folds: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Write JSON lines here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(required = true)]
    images: Vec<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Class to explain; defaults to the predicted class.
    #[arg(long)]
    class: Option<String>,
    /// head1x1 (the 1×1 head convolution) or last3x3.
    #[arg(long, default_value = "head1x1")]
    cam_layer: CamLayer,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Clamped to (N - 1) / 3 for small sets.
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    /// t-SNE step size. Lower it (e.g. 50) for sets of a few dozen points.
    #[arg(long, default_value_t = 200.0)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct Versions {
    pyroclass: &'static str,
    checkpoint_format: u32,
}

#[derive(Serialize)]
struct Provenance<'a, C: Serialize> {
    command: &'a str,
    argv: Vec<String>,
    seed: u64,
    config: C,
    versions: Versions,
}

fn write_provenance<C: Serialize>(out_dir: &Path, command: &str, argv: &[String], seed: u64, config: C) -> Result<()> {
    write_json(
        &out_dir.join(format!("{command}.provenance.json")),
        &Provenance {
            command,
            argv: argv.to_vec(),
            seed,
            config,
            versions: Versions {
                pyroclass: env!("CARGO_PKG_VERSION"),
                checkpoint_format: CHECKPOINT_VERSION,
            },
        },
    )
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => 2,
        Error::Manifest { .. }
        | Error::Ingest(_)
        | Error::Decode { .. }
        | Error::Label(_)
        | Error::InvalidInput(_)
        | Error::CannotBalance(_)
        | Error::Stratification(_)
        | Error::UndefinedRow(_)
        | Error::Checkpoint(_) => 3,
        Error::TrainingDiverged { .. } | Error::EmbeddingDiverged { .. } => 4,
        _ => 1,
    }
}

/// Parse `argv` (program name first), run the subcommand and return the
/// process exit code. Diagnostics go to standard error.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let recorded: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let result = thread_pool().and_then(|pool| pool.install(|| dispatch(cli.command, &recorded)));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("PYROCLASS_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("PYROCLASS_THREADS must be a positive integer, got '{v}'")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Ingest(format!("{what} {} does not exist", path.display())))
    }
}

fn load_task_manifest(path: &Path, task: Task) -> Result<Dataset> {
    let ds = load_manifest(path)?;
    match ds.task() {
        Some(t) if t != task => Err(Error::Label(format!(
            "manifest {} holds {t} records, expected {task}",
            path.display()
        ))),
        None => Err(Error::Ingest(format!("manifest {} has no records", path.display()))),
        _ => Ok(ds),
    }
}

fn dispatch(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Split(a) => cmd_split(a, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::Crossval(a) => cmd_crossval(a, argv),
        Command::Evaluate(a) => cmd_evaluate(a, argv),
        Command::Infer(a) => cmd_infer(a, argv),
        Command::Explain(a) => cmd_explain(a, argv),
        Command::Embed(a) => cmd_embed(a, argv),
    }
}

fn cmd_split(a: SplitArgs, argv: &[String]) -> Result<()> {
    if !(a.test_fraction > 0.0 && a.test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("test fraction must be in (0, 1), got {}", a.test_fraction)));
    }
    require_file(&a.manifest, "manifest")?;
    let ds = load_manifest(&a.manifest)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
    let split = split_test(&ds, a.test_fraction, &mut rng)?;
    let out = &a.common.out_dir;
    write_manifest(&out.join("train_val.csv"), &split.train_val)?;
    write_manifest(&out.join("test.csv"), &split.test)?;
    write_json(&out.join("split.json"), &split.summary)?;
    #[derive(Serialize)]
    struct SplitConfig<'a> {
        manifest: &'a Path,
        test_fraction: f64,
    }
    write_provenance(
        out,
        "split",
        argv,
        a.common.seed,
        SplitConfig {
            manifest: &a.manifest,
            test_fraction: a.test_fraction,
        },
    )
}

#[derive(Serialize)]
struct RunConfig<'a> {
    manifest: &'a Path,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    balance: bool,
}

fn training_set(ds: &Dataset, balance: bool, seed: u64) -> Result<Dataset> {
    if balance {
        balance_classes(ds, &AugmentSpec::default().with_seed(seed))
    } else {
        Ok(ds.clone())
    }
}

fn cmd_train(a: TrainArgs, argv: &[String]) -> Result<()> {
    let model_config = a.model.config()?;
    let config = a.optim.config(model_config.num_classes, a.common.seed)?;
    require_file(&a.manifest, "manifest")?;
    if let Some(v) = &a.val_manifest {
        require_file(v, "validation manifest")?;
    }
    let ds = load_task_manifest(&a.manifest, a.model.task)?;
    let (train_ds, val_ds) = match &a.val_manifest {
        Some(v) => (ds, load_task_manifest(v, a.model.task)?),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
            let folds = stratified_folds(&ds, a.folds, &mut rng)?;
            (ds.subset(&folds[0].train)?, ds.subset(&folds[0].validation)?)
        }
    };
    let train_ds = training_set(&train_ds, a.optim.balance, a.common.seed)?;
    let size = model_config.input_size;
    let train_set = load_samples(&train_ds, size, &AugmentSpec::default())?;
    let val_set = load_samples(&val_ds, size, &AugmentSpec::default())?;
    let model = build_model(&model_config, a.common.seed)?;
    let (best, report) = train(model, &train_set, &val_set, &config)?;
    let out = &a.common.out_dir;
    save_checkpoint(&best, &out.join("model.ckpt"))?;
    write_json(&out.join("train_report.json"), &report)?;
    write_provenance(
        out,
        "train",
        argv,
        a.common.seed,
        RunConfig {
            manifest: &a.manifest,
            model: &model_config,
            train: &config,
            balance: a.optim.balance,
        },
    )
}

fn cmd_crossval(a: CrossvalArgs, argv: &[String]) -> Result<()> {
    let model_config = a.model.config()?;
    let config = a.optim.config(model_config.num_classes, a.common.seed)?;
    if a.folds < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {}", a.folds)));
    }
    require_file(&a.manifest, "manifest")?;
    let ds = load_task_manifest(&a.manifest, a.model.task)?;
    let ds = training_set(&ds, a.optim.balance, a.common.seed)?;
    let samples = load_samples(&ds, model_config.input_size, &AugmentSpec::default())?;
    let report = cross_validate(&model_config, &ds, &samples, &config, a.folds)?;
    let out = &a.common.out_dir;
    write_json(&out.join("crossval.json"), &report)?;
    write_provenance(
        out,
        "crossval",
        argv,
        a.common.seed,
        RunConfig {
            manifest: &a.manifest,
            model: &model_config,
            train: &config,
            balance: a.optim.balance,
        },
    )
}

#[derive(Serialize)]
struct CheckpointRun<'a> {
    checkpoint: &'a Path,
    model: &'a ModelConfig,
    step: u64,
}

fn cmd_evaluate(a: EvaluateArgs, argv: &[String]) -> Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.manifest, "manifest")?;
    if a.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let model = load_checkpoint(&a.checkpoint)?;
    let ds = load_task_manifest(&a.manifest, model.config.task)?;
    let samples = load_samples(&ds, model.config.input_size, &AugmentSpec::default())?;
    let scores = predict_samples(&model, &samples, a.batch_size)?;
    let (evaluation, roc) = evaluate_scores(&scores, &samples.labels, model.config.task.classes())?;
    let out = &a.common.out_dir;
    write_confusion_csv(&out.join("confusion.csv"), &evaluation.confusion)?;
    write_roc_csv(&out.join("roc.csv"), &roc)?;
    write_json(&out.join("metrics.json"), &evaluation)?;
    println!(
        "accuracy {:.4}  macro F1 {:.4}  (n = {})",
        evaluation.accuracy, evaluation.macro_f1, evaluation.n
    );
    write_provenance(
        out,
        "evaluate",
        argv,
        a.common.seed,
        CheckpointRun {
            checkpoint: &a.checkpoint,
            model: &model.config,
            step: model.step,
        },
    )
}

#[derive(Serialize)]
struct InferLine<'a> {
    image: String,
    class: &'a str,
    scores: Vec<f32>,
}

fn cmd_infer(a: InferArgs, argv: &[String]) -> Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    for img in &a.images {
        require_file(img, "image")?;
    }
    let model = load_checkpoint(&a.checkpoint)?;
    let size = model.config.input_size;
    let classes = model.config.task.classes();
    let results: Vec<(usize, Vec<f32>)> = {
        use rayon::prelude::*;
        a.images
            .par_iter()
            .map(|p| model.classify(&data::decode_and_resize_to(p, size)?))
            .collect::<Result<_>>()?
    };
    let mut text = String::new();
    for (path, (class, scores)) in a.images.iter().zip(results) {
        let line = InferLine {
            image: path.display().to_string(),
            class: classes[class],
            scores,
        };
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    match &a.output {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    write_provenance(
        &a.common.out_dir,
        "infer",
        argv,
        a.common.seed,
        CheckpointRun {
            checkpoint: &a.checkpoint,
            model: &model.config,
            step: model.step,
        },
    )
}

fn cmd_explain(a: ExplainArgs, argv: &[String]) -> Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.image, "image")?;
    let model = load_checkpoint(&a.checkpoint)?;
    let task = model.config.task;
    let image = data::decode_and_resize_to(&a.image, model.config.input_size)?;
    let (predicted, scores) = model.classify(&image)?;
    let class = match &a.class {
        Some(name) => task
            .class_index(name)
            .ok_or_else(|| Error::InvalidConfig(format!("'{name}' is not a {task} class")))?,
        None => predicted,
    };
    let map = grad_cam(&model, &image, class, a.cam_layer)?;
    let out = &a.common.out_dir;
    let path = cam_path(out, &a.image, task.classes()[class]);
    export_cam(&map, &path)?;
    export_overlay(&image, &map, &path.with_extension("png"))?;
    #[derive(Serialize)]
    struct CamSummary<'a> {
        image: String,
        class: &'a str,
        predicted: &'a str,
        scores: &'a [f32],
        layer: CamLayer,
        alphas: &'a [f64],
    }
    write_json(
        &path.with_extension("json"),
        &CamSummary {
            image: a.image.display().to_string(),
            class: task.classes()[class],
            predicted: task.classes()[predicted],
            scores: &scores,
            layer: a.cam_layer,
            alphas: &map.alphas,
        },
    )?;
    write_provenance(
        out,
        "explain",
        argv,
        a.common.seed,
        CheckpointRun {
            checkpoint: &a.checkpoint,
            model: &model.config,
            step: model.step,
        },
    )
}

fn cmd_embed(a: EmbedArgs, argv: &[String]) -> Result<()> {
    let config = EmbedConfig {
        perplexity: a.perplexity,
        iterations: a.iterations,
        learning_rate: a.lr,
        seed: a.common.seed,
        ..EmbedConfig::default()
    };
    config.validate()?;
    if a.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.manifest, "manifest")?;
    let model = load_checkpoint(&a.checkpoint)?;
    let ds = load_task_manifest(&a.manifest, model.config.task)?;
    let samples = load_samples(&ds, model.config.input_size, &AugmentSpec::default())?;
    let (scores, labels) = collect_outputs(&model, &samples, a.batch_size)?;
    let embedding = tsne(&scores.cast::<f64>(), &config)?;
    let classes = model.config.task.classes();
    let names: Vec<String> = labels.iter().map(|&l| classes[l].to_string()).collect();
    let out = &a.common.out_dir;
    export_embedding(&embedding, &names, &out.join("embedding.csv"))?;
    #[derive(Serialize)]
    struct EmbedRun<'a> {
        checkpoint: &'a Path,
        manifest: &'a Path,
        embed: &'a EmbedConfig,
    }
    write_provenance(
        out,
        "embed",
        argv,
        a.common.seed,
        EmbedRun {
            checkpoint: &a.checkpoint,
            manifest: &a.manifest,
            embed: &config,
        },
    )
}
