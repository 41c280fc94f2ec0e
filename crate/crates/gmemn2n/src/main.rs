//! Command-line entry point: corpus generation, training, evaluation, and
//! introspection traces. Exit codes: 0 success, 1 usage error, 2 data error,
//! 3 numeric divergence.

use clap::{Args, Parser, Subcommand, ValueEnum};
use gmemn2n::checkpoint::Checkpoint;
use gmemn2n::config::TrainConfig;
use gmemn2n::corpus::Vocabulary;
use gmemn2n::datagen;
use gmemn2n::encoding::{
    prepare_qa_example, CandidateBags, EncodingConfig, Mode, PreparedExample,
};
use gmemn2n::eval;
use gmemn2n::model::{forward, GateTying, ModelKind, ModelVariant};
use gmemn2n::train::{self, DialogTask, QaTask, TaskData, TrainError};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Diverged(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Diverged(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "gmemn2n",
    about = "Train and evaluate (gated) end-to-end memory networks on QA and dialog tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the QA and dialog corpora under --out-dir.
    GenData {
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model and write checkpoint, logs, and manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split and write a JSON report.
    Eval(EvalArgs),
    /// Write attention tables and gate dumps for a checkpoint.
    Trace(TraceArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskId {
    Qa1,
    Qa12,
    Qa17,
    Dialog1,
}

impl TaskId {
    fn is_dialog(self) -> bool {
        self == TaskId::Dialog1
    }

    fn name(self) -> &'static str {
        match self {
            TaskId::Qa1 => "qa1",
            TaskId::Qa12 => "qa12",
            TaskId::Qa17 => "qa17",
            TaskId::Dialog1 => "dialog1",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Memn2n,
    Gmemn2n,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GateTyingArg {
    Global,
    Hop,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Test,
    OovTest,
    Valid,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    task: TaskId,
    /// Use the 10k-example QA corpus.
    #[arg(long)]
    tenk: bool,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, value_enum, default_value = "gmemn2n")]
    variant: VariantArg,
    #[arg(long, value_enum, default_value = "hop")]
    gate_tying: GateTyingArg,
    /// Overrides the config-file / default restart count.
    #[arg(long)]
    restarts: Option<usize>,
    /// Overrides the config-file / default seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Flat key=value overrides for any TrainConfig field.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    task: TaskId,
    #[arg(long)]
    tenk: bool,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    task: TaskId,
    #[arg(long)]
    tenk: bool,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Attention table for one example.
    #[arg(long)]
    example_id: Option<usize>,
    /// Gate dump CSV over the whole split.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version print and exit 0; real parse errors are usage errors
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { out_dir, seed } => {
            datagen::generate_all(&out_dir, seed)
                .map_err(|e| CliError::Data(format!("corpus generation failed: {e}")))?;
            println!("corpora written under {}", out_dir.display());
            Ok(())
        }
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Trace(args) => cmd_trace(args),
    }
}

fn read_corpus_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read corpus file {}: {e}", path.display())))
}

fn qa_paths(data_dir: &Path, task: TaskId, tenk: bool) -> (PathBuf, PathBuf) {
    let scale = if tenk { "en-10k" } else { "en" };
    let stem = match task {
        TaskId::Qa1 => "qa1_single-supporting-fact",
        TaskId::Qa12 => "qa12_conjunction",
        TaskId::Qa17 => "qa17_positional-reasoning",
        TaskId::Dialog1 => unreachable!("dialog task has no QA paths"),
    };
    let dir = data_dir.join("qa").join(scale);
    (
        dir.join(format!("{stem}_train.txt")),
        dir.join(format!("{stem}_test.txt")),
    )
}

enum LoadedTask {
    Qa(QaTask),
    Dialog(DialogTask),
}

fn load_task(
    data_dir: &Path,
    task: TaskId,
    tenk: bool,
    valid_fraction: f64,
    enc: &EncodingConfig,
) -> Result<LoadedTask, CliError> {
    if task.is_dialog() {
        let dir = data_dir.join("dialog");
        let file = |name: &str| read_corpus_file(&dir.join(name));
        let built = train::build_dialog_task(
            &file("dialog-babi-task1-API-calls-trn.txt")?,
            &file("dialog-babi-task1-API-calls-dev.txt")?,
            &file("dialog-babi-task1-API-calls-tst.txt")?,
            &file("dialog-babi-task1-API-calls-tst-OOV.txt")?,
            &file("dialog-babi-candidates.txt")?,
            &file("dialog-babi-kb.txt")?,
            enc,
        )
        .map_err(|e| CliError::Data(format!("dialog corpus parse failed: {e}")))?;
        Ok(LoadedTask::Dialog(built))
    } else {
        let (train_path, test_path) = qa_paths(data_dir, task, tenk);
        let built = train::build_qa_task(
            &read_corpus_file(&train_path)?,
            &read_corpus_file(&test_path)?,
            valid_fraction,
        )
        .map_err(|e| CliError::Data(format!("QA corpus parse failed: {e}")))?;
        Ok(LoadedTask::Qa(built))
    }
}

fn encoding_for(task: TaskId) -> EncodingConfig {
    if task.is_dialog() {
        EncodingConfig::dialog()
    } else {
        EncodingConfig::qa()
    }
}

fn variant_for(variant: VariantArg, gate: GateTyingArg) -> ModelVariant {
    match variant {
        VariantArg::Memn2n => ModelVariant::memn2n(),
        VariantArg::Gmemn2n => ModelVariant::gmemn2n(match gate {
            GateTyingArg::Global => GateTying::Global,
            GateTyingArg::Hop => GateTying::HopSpecific,
        }),
    }
}

fn variant_name(v: &ModelVariant) -> String {
    match v.kind {
        ModelKind::MemN2N => "memn2n".to_string(),
        ModelKind::GMemN2N => format!(
            "gmemn2n-{}",
            match v.gate_tying {
                GateTying::Global => "global",
                GateTying::HopSpecific => "hop",
            }
        ),
    }
}

/// Hash of the semantic run identity (not of filesystem paths), embedded in
/// every artifact so reports and checkpoints can be matched to a manifest.
fn manifest_hash(subcommand: &str, task: TaskId, variant: &str, cfg: &TrainConfig) -> String {
    let identity = serde_json::json!({
        "subcommand": subcommand,
        "task": task.name(),
        "variant": variant,
        "config": cfg,
    });
    let mut hasher = Sha256::new();
    hasher.update(identity.to_string().as_bytes());
    format!("{:x}", hasher.finalize())
}

fn ensure_out_dir(out_dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out_dir.display())))
}

fn write_artifact(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    // precedence: defaults < config file < flags
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = read_corpus_file(path)?;
        cfg.apply_file(&text)
            .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?;
    }
    if let Some(r) = args.restarts {
        cfg.restarts = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if cfg.restarts == 0 {
        return Err(CliError::Usage("--restarts must be at least 1".into()));
    }

    let enc = encoding_for(args.task);
    let variant = variant_for(args.variant, args.gate_tying);
    let vname = variant_name(&variant);
    let hash = manifest_hash("train", args.task, &vname, &cfg);
    eprintln!(
        "train task={} variant={} restarts={} seed={} manifest={}",
        args.task.name(),
        vname,
        cfg.restarts,
        cfg.seed,
        &hash[..12]
    );
    eprintln!("config: {}", serde_json::to_string(&cfg).unwrap());

    let loaded = load_task(&args.data_dir, args.task, args.tenk, cfg.valid_fraction, &enc)?;
    let data = match &loaded {
        LoadedTask::Qa(t) => TaskData::Qa(t),
        LoadedTask::Dialog(t) => TaskData::Dialog(t),
    };
    let vocab = match &loaded {
        LoadedTask::Qa(t) => &t.vocab,
        LoadedTask::Dialog(t) => &t.vocab,
    };

    let outcome = train::train_with_restarts(&data, variant, &cfg, &enc).map_err(|e| match e {
        TrainError::Diverged { epoch } => {
            CliError::Diverged(format!("training diverged at epoch {epoch}"))
        }
    })?;
    for s in &outcome.summaries {
        eprintln!(
            "restart {} seed {} final validation accuracy {:.2}",
            s.restart, s.seed, s.final_valid_accuracy
        );
    }
    eprintln!(
        "selected restart {} (validation accuracy {:.2})",
        outcome.best_restart, outcome.best.final_valid_accuracy
    );

    ensure_out_dir(&args.out_dir)?;
    let ckpt = Checkpoint::from_model(&outcome.best.params, vocab, &enc, &cfg, cfg.seed);
    write_artifact(&args.out_dir.join("checkpoint.json"), &ckpt.to_json())?;

    let logs = serde_json::json!({
        "manifest_hash": hash,
        "task": args.task.name(),
        "variant": vname,
        "best_restart": outcome.best_restart,
        "best_epoch": outcome.best.best_epoch,
        "restarts": outcome.summaries.iter().map(|s| serde_json::json!({
            "restart": s.restart,
            "seed": s.seed,
            "final_valid_accuracy": s.final_valid_accuracy,
        })).collect::<Vec<_>>(),
        "epochs": outcome.best.logs.iter().map(|l| serde_json::json!({
            "epoch": l.epoch,
            "lr": l.lr,
            "softmax_active": l.softmax_active,
            "train_loss": l.train_loss,
            "valid_accuracy": l.valid_accuracy,
            "valid_loss": l.valid_loss,
            "grad_norm": l.grad_norm,
        })).collect::<Vec<_>>(),
    });
    write_artifact(
        &args.out_dir.join("logs.json"),
        &serde_json::to_string_pretty(&logs).unwrap(),
    )?;

    let manifest = serde_json::json!({
        "subcommand": "train",
        "task": args.task.name(),
        "tenk": args.tenk,
        "variant": vname,
        "config": cfg,
        "data_dir": args.data_dir.display().to_string(),
        "out_dir": args.out_dir.display().to_string(),
        "seed": cfg.seed,
        "manifest_hash": hash,
    });
    write_artifact(
        &args.out_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).unwrap(),
    )?;
    println!(
        "done: validation accuracy {:.2}, artifacts in {}",
        outcome.best.final_valid_accuracy,
        args.out_dir.display()
    );
    Ok(())
}

struct SplitView {
    examples: Vec<PreparedExample>,
    bags: Option<CandidateBags>,
}

/// Prepares the requested split using the checkpoint's own vocabulary, after
/// verifying the corpus reproduces the vocabulary the model was trained on.
fn prepare_split(
    ckpt: &Checkpoint,
    task: TaskId,
    tenk: bool,
    data_dir: &Path,
    split: SplitArg,
) -> Result<SplitView, CliError> {
    let enc = &ckpt.encoding;
    let loaded = load_task(data_dir, task, tenk, ckpt.train.valid_fraction, enc)?;
    let corpus_vocab_len = match &loaded {
        LoadedTask::Qa(t) => t.vocab.len(),
        LoadedTask::Dialog(t) => t.vocab.len(),
    };
    if corpus_vocab_len != ckpt.vocab_size {
        return Err(CliError::Data(format!(
            "vocabulary mismatch: checkpoint has {} words, corpus yields {}",
            ckpt.vocab_size, corpus_vocab_len
        )));
    }
    let vocab: Vocabulary = ckpt.vocabulary();
    match loaded {
        LoadedTask::Qa(t) => {
            let raw = match split {
                SplitArg::Test => &t.test,
                SplitArg::Valid => &t.valid,
                SplitArg::OovTest => {
                    return Err(CliError::Usage(
                        "QA tasks have no OOV test split".into(),
                    ))
                }
            };
            let mut rng = ChaCha20Rng::seed_from_u64(0); // unused in eval mode
            let examples = raw
                .iter()
                .map(|e| prepare_qa_example(e, &vocab, enc, Mode::Eval, &mut rng))
                .collect();
            Ok(SplitView {
                examples,
                bags: None,
            })
        }
        LoadedTask::Dialog(t) => {
            let examples = match split {
                SplitArg::Test => t.test,
                SplitArg::Valid => t.valid,
                SplitArg::OovTest => t.test_oov,
            };
            Ok(SplitView {
                examples,
                bags: Some(t.bags),
            })
        }
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path)
        .map_err(|e| CliError::Data(format!("checkpoint {}: {e}", path.display())))
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let params = ckpt
        .to_model()
        .map_err(|e| CliError::Data(format!("checkpoint {}: {e}", args.checkpoint.display())))?;
    let view = prepare_split(&ckpt, args.task, args.tenk, &args.data_dir, args.split)?;
    let vname = variant_name(&params.variant);
    let hash = manifest_hash("eval", args.task, &vname, &ckpt.train);

    let pred = eval::predictions(
        &view.examples,
        view.bags.as_ref(),
        &params,
        ckpt.encoding.scheme,
    );
    let golds: Vec<usize> = view.examples.iter().map(|e| e.gold).collect();
    let (accuracy, per_dialog) = if view.bags.is_some() {
        let (pr, pd) = eval::dialog_accuracy_from(&pred, &view.examples);
        (pr, Some(pd))
    } else {
        (eval::accuracy_from(&pred, &golds), None)
    };
    match per_dialog {
        Some(pd) => println!("accuracy: {accuracy:.2} ({pd:.2})"),
        None => println!("accuracy: {accuracy:.2}"),
    }

    let report = eval::EvalReport {
        task: args.task.name().to_string(),
        variant: vname,
        seed: ckpt.rng_seed,
        config_hash: hash,
        predictions: pred,
        golds,
        accuracy,
        per_dialog_accuracy: per_dialog,
    };
    ensure_out_dir(&args.out_dir)?;
    write_artifact(
        &args.out_dir.join("report.json"),
        &serde_json::to_string_pretty(&report).unwrap(),
    )?;
    Ok(())
}

fn cmd_trace(args: TraceArgs) -> Result<(), CliError> {
    if args.example_id.is_none() && !args.all {
        return Err(CliError::Usage(
            "trace needs --example-id <N> or --all".into(),
        ));
    }
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let params = ckpt
        .to_model()
        .map_err(|e| CliError::Data(format!("checkpoint {}: {e}", args.checkpoint.display())))?;
    let view = prepare_split(&ckpt, args.task, args.tenk, &args.data_dir, args.split)?;
    let vocab = ckpt.vocabulary();
    ensure_out_dir(&args.out_dir)?;

    if let Some(id) = args.example_id {
        let ex = view.examples.get(id).ok_or_else(|| {
            CliError::Usage(format!(
                "--example-id {id} out of range (split has {} examples)",
                view.examples.len()
            ))
        })?;
        let (_, trace) = forward(ex, view.bags.as_ref(), &params, ckpt.encoding.scheme, true);
        let slot_texts: Vec<String> = ex
            .memory
            .iter()
            .map(|sent| {
                sent.iter()
                    .map(|&w| vocab.word(w).to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let table = eval::attention_table(&trace, &slot_texts);
        print!("{table}");
        write_artifact(&args.out_dir.join(format!("attention_{id}.txt")), &table)?;
        write_artifact(
            &args.out_dir.join(format!("attention_{id}.csv")),
            &eval::attention_csv(&trace, &slot_texts),
        )?;
    }

    if args.all {
        let csv = eval::gate_dump(
            &view.examples,
            view.bags.as_ref(),
            &params,
            ckpt.encoding.scheme,
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
        write_artifact(&args.out_dir.join("gates.csv"), &csv)?;
        let rows = eval::gate_rows_from_csv(&csv);
        let summary = eval::gate_pattern_summary(&rows, 0);
        print!("{summary}");
        write_artifact(&args.out_dir.join("gate_patterns.txt"), &summary)?;
    }
    Ok(())
}
