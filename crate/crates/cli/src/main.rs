//! `rationalize`: corpus statistics, offline augmentation, training,
//! evaluation, noise-level sweeps, benchmark construction, synthetic data,
//! and gradient checking behind one executable.
//!
//! Exit codes: 0 success, 1 invalid input (flags, configs, malformed data),
//! 2 runtime failure. All randomness is funneled through `--seed`;
//! environment variables are never consulted.

mod config;
mod dataio;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rationalize::corpus::{Corpus, CorpusStats, Document};
use rationalize::data::{build_usr, gen_synthetic, SyntheticSpec};
use rationalize::diffcore::grad_check;
use rationalize::error::{Error, Result};
use rationalize::eval::{evaluate, Averaging, EvalExample, Granularity, DEFAULT_IOU_THRESHOLD};
use rationalize::model::{
    combined_loss, select, EncoderKind, GeneratorConfig, ModelConfig, PredictionPair,
    RationaleModel, SelectionKind, SelectionStrategy,
};
use rationalize::noise::{inject_noise, BinaryMask, PerturbedRationale, SeededRng};
use rationalize::training::{
    config_hash, prepare_synthetic_task, sweep_p, train, LabeledExample, SyntheticTask,
    TrainConfig,
};
use rationalize::util::sha256_hex;

use config::RunConfig;
use dataio::{
    corpus_from_lines, eval_examples, label_names, labeled_examples, read_jsonl, write_jsonl,
    DataLine, TrainedModelFile,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "rationalize", version, about = "Selective rationalization with online noise injection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute TF*IDF statistics, replacement probabilities and the
    /// sampling distribution for a corpus.
    BuildStats(BuildStatsArgs),
    /// Offline noise injection over masked inputs, for inspection.
    Augment(AugmentArgs),
    /// Train a generator-predictor model from a flat JSON config.
    Train(TrainArgs),
    /// Evaluate a trained checkpoint: plausibility and faithfulness.
    Eval(EvalArgs),
    /// Train across a grid of noise levels and seeds; aggregate metrics.
    Sweep(SweepArgs),
    /// Merge raw reviews with an annotated corpus into one benchmark.
    BuildUsr(BuildUsrArgs),
    /// Generate a planted-keyword synthetic dataset with gold rationales.
    GenSynthetic(GenSyntheticArgs),
    /// Finite-difference check of every gradient in the default toy model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct BuildStatsArgs {
    /// Corpus: a JSONL file (id/text/label lines) or a directory of .txt files.
    #[arg(long)]
    corpus: PathBuf,
    /// Noise magnitude scaling the replacement probabilities.
    #[arg(long, default_value_t = 0.2)]
    p: f64,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    #[arg(long, default_value_t = false)]
    no_lowercase: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    stats: PathBuf,
    /// JSONL of {"id", "tokens": [...], "mask": [0/1...]} lines.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config noise level.
    #[arg(long)]
    p: Option<f64>,
    /// Overrides the config selection fraction.
    #[arg(long)]
    k: Option<f64>,
    /// Overrides the config closeness coefficient.
    #[arg(long)]
    lambda: Option<f64>,
    /// Output directory (checkpoint.json, run.json, metrics.csv).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_granularity)]
    granularity: Granularity,
    #[arg(long, default_value = "macro", value_parser = parse_averaging)]
    averaging: Averaging,
    /// Overrides the checkpoint's selection fraction.
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated noise levels, e.g. 0,0.2,0.9.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
    /// Comma-separated seeds, one run per (p, seed).
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Worker threads for parallel runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildUsrArgs {
    /// Directory with pos/ and neg/ subdirectories of .txt reviews.
    #[arg(long)]
    imdb: PathBuf,
    /// ERASER-style directory (docs/ plus jsonl annotation files).
    #[arg(long)]
    eraser: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenSyntheticArgs {
    /// Optional JSON file holding the full synthetic spec.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 500)]
    n_val: usize,
    #[arg(long, default_value_t = 500)]
    n_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Omit the label-correlated leak token.
    #[arg(long, default_value_t = false)]
    no_leak: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_granularity(s: &str) -> std::result::Result<Granularity, String> {
    match s {
        "token" => Ok(Granularity::Token),
        "sentence" => Ok(Granularity::Sentence),
        other => Err(format!("granularity must be `token` or `sentence`, got `{other}`")),
    }
}

fn parse_averaging(s: &str) -> std::result::Result<Averaging, String> {
    match s {
        "macro" => Ok(Averaging::Macro),
        "micro" => Ok(Averaging::Micro),
        other => Err(format!("averaging must be `macro` or `micro`, got `{other}`")),
    }
}

/// Written adjacent to every artifact-producing command's outputs.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    tool_version: String,
    config_hash: String,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
    wall_clock_secs: f64,
}

impl RunManifest {
    fn write(self, anchor: &Path) -> Result<()> {
        let path = if anchor.is_dir() {
            anchor.join("manifest.json")
        } else {
            anchor.with_extension("manifest.json")
        };
        std::fs::write(path, serde_json::to_string_pretty(&self)?)?;
        Ok(())
    }
}

fn hash_settings<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("serializable").as_bytes())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let started = Instant::now();
    let result = match cli.command {
        Command::BuildStats(args) => cmd_build_stats(args, started),
        Command::Augment(args) => cmd_augment(args, started),
        Command::Train(args) => cmd_train(args, started),
        Command::Eval(args) => cmd_eval(args, started),
        Command::Sweep(args) => cmd_sweep(args, started),
        Command::BuildUsr(args) => cmd_build_usr(args, started),
        Command::GenSynthetic(args) => cmd_gen_synthetic(args, started),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_validation() { 1 } else { 2 })
        }
    }
}

fn load_corpus_documents(path: &Path) -> Result<Vec<Document>> {
    if path.is_dir() {
        let mut paths: Vec<_> = std::fs::read_dir(path)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().map(|e| e == "txt").unwrap_or(false))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::InvalidCorpus(format!(
                "no .txt files under {}",
                path.display()
            )));
        }
        paths
            .into_iter()
            .map(|p| {
                Ok(Document {
                    id: p
                        .file_stem()
                        .map(|s| s.to_string_lossy().to_string())
                        .unwrap_or_default(),
                    raw_text: rationalize::util::read_file(&p)?,
                    label: None,
                })
            })
            .collect()
    } else {
        let lines = read_jsonl(path)?;
        Ok(lines
            .into_iter()
            .map(|l| Document {
                id: l.id,
                raw_text: l.text,
                label: Some(l.label),
            })
            .collect())
    }
}

fn cmd_build_stats(args: BuildStatsArgs, started: Instant) -> Result<ExitCode> {
    let documents = load_corpus_documents(&args.corpus)?;
    let corpus = Corpus::build(documents, !args.no_lowercase, args.min_count)?;
    let stats = CorpusStats::compute(&corpus, args.p)?;
    stats.save(&args.out)?;
    println!(
        "stats: {} documents, vocab {}, p {}",
        corpus.docs.len(),
        corpus.vocab.len(),
        args.p
    );
    RunManifest {
        command: "build-stats".into(),
        tool_version: VERSION.into(),
        config_hash: hash_settings(&(args.p, args.min_count, !args.no_lowercase)),
        seed: 0,
        inputs: vec![args.corpus.display().to_string()],
        outputs: vec![args.out.display().to_string()],
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&args.out)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(serde::Deserialize)]
struct MaskedLine {
    id: String,
    tokens: Vec<String>,
    mask: Vec<u8>,
}

#[derive(Serialize)]
struct PerturbedLine {
    id: String,
    tokens: Vec<String>,
    replaced: Vec<usize>,
}

fn cmd_augment(args: AugmentArgs, started: Instant) -> Result<ExitCode> {
    let stats = CorpusStats::load(&args.stats)?;
    let raw = rationalize::util::read_file(&args.input)?;
    let mut rng = SeededRng::new(args.seed);
    let mut out_lines = Vec::new();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let parsed: MaskedLine = serde_json::from_str(line)?;
        if parsed.tokens.len() != parsed.mask.len() {
            return Err(Error::InvalidConfig(format!(
                "line `{}`: {} tokens but {} mask bits",
                parsed.id,
                parsed.tokens.len(),
                parsed.mask.len()
            )));
        }
        let mut text = rationalize::corpus::TokenizedText {
            tokens: vec![0; parsed.tokens.len()],
            token_strings: parsed.tokens.clone(),
            sentence_bounds: vec![(0, parsed.tokens.len())],
        };
        stats.vocab.encode(&mut text);
        let mask = BinaryMask::new(parsed.mask);
        let perturbed = inject_noise(&text, &parsed.id, &mask, &stats, &mut rng)?;
        let tokens = perturbed
            .tokens
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                if perturbed.replaced.contains(&i) {
                    stats.vocab.form_of(id).unwrap_or("<unk>").to_string()
                } else {
                    parsed.tokens[i].clone()
                }
            })
            .collect();
        out_lines.push(serde_json::to_string(&PerturbedLine {
            id: parsed.id,
            tokens,
            replaced: perturbed.replaced,
        })?);
    }
    std::fs::write(&args.out, out_lines.join("\n") + "\n")?;
    println!("augmented {} lines", out_lines.len());
    RunManifest {
        command: "augment".into(),
        tool_version: VERSION.into(),
        config_hash: hash_settings(&args.seed),
        seed: args.seed,
        inputs: vec![
            args.stats.display().to_string(),
            args.input.display().to_string(),
        ],
        outputs: vec![args.out.display().to_string()],
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&args.out)?;
    Ok(ExitCode::SUCCESS)
}

struct PreparedData {
    corpus: Corpus,
    train: Vec<LabeledExample>,
    val: Vec<LabeledExample>,
    test: Option<Vec<EvalExample>>,
    labels: Vec<String>,
}

fn prepare_data(cfg: &RunConfig, config_dir: &Path) -> Result<PreparedData> {
    if let Some(spec) = &cfg.synthetic {
        let task: SyntheticTask = prepare_synthetic_task(
            spec,
            cfg.n_train.unwrap_or(2000),
            cfg.n_val.unwrap_or(500),
            cfg.n_test.unwrap_or(500),
        )?;
        let labels = (0..task.n_classes).map(|c| format!("class{c}")).collect();
        return Ok(PreparedData {
            corpus: task.corpus,
            train: task.train,
            val: task.val,
            test: Some(task.test),
            labels,
        });
    }
    let resolve = |p: &String| {
        let path = PathBuf::from(p);
        if path.is_relative() {
            config_dir.join(path)
        } else {
            path
        }
    };
    let (train_path, val_path) = match (&cfg.train_data, &cfg.val_data) {
        (Some(t), Some(v)) => (resolve(t), resolve(v)),
        _ => {
            return Err(Error::InvalidConfig(
                "config needs either a `synthetic` block or train_data + val_data paths".into(),
            ))
        }
    };
    let train_lines = read_jsonl(&train_path)?;
    let val_lines = read_jsonl(&val_path)?;
    let labels = label_names(&train_lines);
    let corpus = corpus_from_lines(&train_lines, cfg.lowercase, cfg.min_count)?;
    let train = labeled_examples(&train_lines, &corpus.vocab, &labels, cfg.lowercase)?;
    let val = labeled_examples(&val_lines, &corpus.vocab, &labels, cfg.lowercase)?;
    let test = match &cfg.test_data {
        Some(t) => Some(eval_examples(
            &read_jsonl(&resolve(t))?,
            &corpus.vocab,
            &labels,
            cfg.lowercase,
        )?),
        None => None,
    };
    Ok(PreparedData {
        corpus,
        train,
        val,
        test,
        labels,
    })
}

fn build_model(cfg: &RunConfig, data: &PreparedData, seed: u64) -> Result<RationaleModel> {
    RationaleModel::new(
        ModelConfig {
            generator: GeneratorConfig {
                embed_dim: cfg.embed_dim,
                hidden_dim: cfg.hidden_dim,
                trainable_embeddings: cfg.trainable_embeddings,
                encoder: cfg.encoder,
            },
            n_classes: data.labels.len(),
            vocab_size: data.corpus.vocab.len(),
            selection: cfg.selection,
        },
        seed,
    )
}

fn load_run_config(path: &Path, seed: Option<u64>) -> Result<(RunConfig, PathBuf)> {
    let raw = rationalize::util::read_file(path)?;
    let mut cfg: RunConfig = serde_json::from_str(&raw)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((cfg, dir))
}

fn cmd_train(args: TrainArgs, started: Instant) -> Result<ExitCode> {
    let (mut cfg, config_dir) = load_run_config(&args.config, args.seed)?;
    if let Some(p) = args.p {
        cfg.p = p;
    }
    if let Some(k) = args.k {
        cfg.k_fraction = k;
    }
    if let Some(lambda) = args.lambda {
        cfg.lambda = lambda;
    }

    let data = prepare_data(&cfg, &config_dir)?;
    let train_cfg: TrainConfig = cfg.train_config();
    train_cfg.validate()?;
    let stats = CorpusStats::compute(&data.corpus, train_cfg.p)?;
    let mut model = build_model(&cfg, &data, train_cfg.seed)?;
    let hash = config_hash(&train_cfg, &model.cfg);

    let (checkpoint, record) = train(&mut model, &data.train, &data.val, &stats, &train_cfg)?;

    std::fs::create_dir_all(&args.out)?;
    let bundle = TrainedModelFile {
        model: model.cfg.clone(),
        train_config: train_cfg.clone(),
        vocab: data.corpus.vocab.clone(),
        labels: data.labels.clone(),
        lowercase: cfg.lowercase,
        checkpoint,
    };
    bundle.save(&args.out.join("checkpoint.json"))?;
    std::fs::write(
        args.out.join("run.json"),
        serde_json::to_string_pretty(&record)?,
    )?;
    std::fs::write(args.out.join("metrics.csv"), record.to_csv())?;
    println!(
        "trained {} epochs, best epoch {}, best validation loss {:.6}",
        record.epochs.len(),
        record.best_epoch,
        record.best_val_loss()
    );
    println!("checkpoint digest {}", bundle.checkpoint.digest());

    RunManifest {
        command: "train".into(),
        tool_version: VERSION.into(),
        config_hash: hash,
        seed: train_cfg.seed,
        inputs: vec![args.config.display().to_string()],
        outputs: vec![
            args.out.join("checkpoint.json").display().to_string(),
            args.out.join("run.json").display().to_string(),
            args.out.join("metrics.csv").display().to_string(),
        ],
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&args.out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs, started: Instant) -> Result<ExitCode> {
    let bundle = TrainedModelFile::load(&args.checkpoint)?;
    let lines = read_jsonl(&args.data)?;

    // Granularity declared by the data must match the requested metrics.
    for line in &lines {
        let declared = line.granularity.unwrap_or(match (&line.evidences, &line.gold_sentences) {
            (None, Some(_)) => Granularity::Sentence,
            _ => Granularity::Token,
        });
        if declared != args.granularity {
            return Err(Error::InvalidConfig(format!(
                "example `{}` is {:?}-annotated but --granularity asks for {:?}",
                line.id, declared, args.granularity
            )));
        }
    }

    let model = bundle.rebuild_model()?;
    let examples = eval_examples(&lines, &bundle.vocab, &bundle.labels, bundle.lowercase)?;
    let strategy = SelectionStrategy::new(
        bundle.model.selection,
        args.k.unwrap_or(bundle.train_config.k_fraction),
    )?;
    let masks: Vec<BinaryMask> = examples
        .iter()
        .map(|ex| {
            let scores = model.score_tokens(&ex.text)?;
            select(scores.value().as_slice(), &strategy, &ex.text.sentence_bounds)
        })
        .collect::<Result<_>>()?;
    let report = evaluate(
        &model,
        &examples,
        &masks,
        args.granularity,
        args.averaging,
        DEFAULT_IOU_THRESHOLD,
    )?;

    #[derive(Serialize)]
    struct ReportFile<'a> {
        report: &'a rationalize::eval::EvalReport,
        checkpoint_digest: String,
        config_hash: &'a str,
        k_fraction: f64,
        iou_threshold: f64,
    }
    let out = ReportFile {
        report: &report,
        checkpoint_digest: bundle.checkpoint.digest(),
        config_hash: &bundle.checkpoint.config_hash,
        k_fraction: strategy.k_fraction,
        iou_threshold: DEFAULT_IOU_THRESHOLD,
    };
    std::fs::write(&args.out, serde_json::to_string_pretty(&out)?)?;
    println!(
        "accuracy {:.4}  P {:.4}  R {:.4}  F1 {:.4}  IOU-F1 {}  comp {:.4}  suff {:.4}",
        report.accuracy,
        report.precision,
        report.recall,
        report.f1,
        report
            .iou_f1
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        report.comprehensiveness,
        report.sufficiency
    );

    RunManifest {
        command: "eval".into(),
        tool_version: VERSION.into(),
        config_hash: bundle.checkpoint.config_hash.clone(),
        seed: bundle.checkpoint.seed,
        inputs: vec![
            args.checkpoint.display().to_string(),
            args.data.display().to_string(),
        ],
        outputs: vec![args.out.display().to_string()],
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&args.out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: SweepArgs, started: Instant) -> Result<ExitCode> {
    let (cfg, config_dir) = load_run_config(&args.config, None)?;
    let data = prepare_data(&cfg, &config_dir)?;
    let test = data.test.as_ref().ok_or_else(|| {
        Error::InvalidConfig("sweep needs test data with gold rationales".into())
    })?;
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;

    let factory = |seed: u64| build_model(&cfg, &data, seed);
    let table = sweep_p(
        &factory,
        &data.corpus,
        &data.train,
        &data.val,
        test,
        &train_cfg,
        &args.grid,
        &args.seeds,
        args.jobs,
    )?;

    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("sweep.csv"), table.to_csv())?;
    #[derive(Serialize)]
    struct SlimRun<'a> {
        p: f64,
        seed: u64,
        f1: f64,
        accuracy: f64,
        best_epoch: usize,
        checkpoint_digest: String,
        config_hash: &'a str,
    }
    let slim: Vec<SlimRun> = table
        .runs
        .iter()
        .map(|r| SlimRun {
            p: r.p,
            seed: r.seed,
            f1: r.f1,
            accuracy: r.accuracy,
            best_epoch: r.best_epoch,
            checkpoint_digest: r.checkpoint.digest(),
            config_hash: &r.record.config_hash,
        })
        .collect();
    std::fs::write(
        args.out.join("runs.json"),
        serde_json::to_string_pretty(&slim)?,
    )?;
    for pt in &table.points {
        println!(
            "p {:<6} F1 {:.4} (se {:.4})  acc {:.4} (se {:.4})",
            pt.p, pt.mean_f1, pt.se_f1, pt.mean_accuracy, pt.se_accuracy
        );
    }

    RunManifest {
        command: "sweep".into(),
        tool_version: VERSION.into(),
        config_hash: hash_settings(&(&train_cfg, &args.grid, &args.seeds)),
        seed: train_cfg.seed,
        inputs: vec![args.config.display().to_string()],
        outputs: vec![
            args.out.join("sweep.csv").display().to_string(),
            args.out.join("runs.json").display().to_string(),
        ],
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&args.out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_build_usr(args: BuildUsrArgs, started: Instant) -> Result<ExitCode> {
    let build = build_usr(&args.imdb, &args.eraser, args.seed)?;
    std::fs::create_dir_all(&args.out)?;

    let lines: Vec<DataLine> = build
        .examples
        .iter()
        .map(|e| DataLine {
            id: e.id.clone(),
            text: e.text.clone(),
            label: e.label.clone(),
            evidences: e.evidences.clone(),
            gold_sentences: None,
            granularity: Some(Granularity::Token),
        })
        .collect();
    let split_of = |s: rationalize::data::Split| -> Vec<DataLine> {
        build
            .examples
            .iter()
            .zip(&lines)
            .filter(|(e, _)| e.split == s)
            .map(|(_, l)| l.clone())
            .collect()
    };
    write_jsonl(&args.out.join("usr.jsonl"), &lines)?;
    write_jsonl(&args.out.join("train.jsonl"), &split_of(rationalize::data::Split::Train))?;
    write_jsonl(&args.out.join("val.jsonl"), &split_of(rationalize::data::Split::Val))?;
    write_jsonl(&args.out.join("test.jsonl"), &split_of(rationalize::data::Split::Test))?;
    std::fs::write(
        args.out.join("overlap.json"),
        serde_json::to_string_pretty(&build.overlap)?,
    )?;
    println!(
        "splits: {} train / {} val / {} test; {} overlap candidates",
        build.train_count,
        build.val_count,
        build.test_count,
        build.overlap.matches.len()
    );

    RunManifest {
        command: "build-usr".into(),
        tool_version: VERSION.into(),
        config_hash: hash_settings(&args.seed),
        seed: args.seed,
        inputs: vec![
            args.imdb.display().to_string(),
            args.eraser.display().to_string(),
        ],
        outputs: vec![
            args.out.join("usr.jsonl").display().to_string(),
            args.out.join("overlap.json").display().to_string(),
        ],
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&args.out)?;
    Ok(ExitCode::SUCCESS)
}

/// Default planted-keyword recipe used when no spec file is given.
fn default_synthetic_spec(seed: u64, leak: bool) -> SyntheticSpec {
    SyntheticSpec {
        filler_vocab: 40,
        doc_len: (18, 24),
        lexicons: vec![
            vec!["superb", "delightful", "moving", "charming", "riveting", "heartfelt"]
                .into_iter()
                .map(String::from)
                .collect(),
            vec!["dreadful", "tedious", "clumsy", "hollow", "grating", "lifeless"]
                .into_iter()
                .map(String::from)
                .collect(),
        ],
        keywords_per_doc: 1,
        leak_token: leak,
        seed,
    }
}

fn cmd_gen_synthetic(args: GenSyntheticArgs, started: Instant) -> Result<ExitCode> {
    let spec = match &args.spec {
        Some(path) => serde_json::from_str(&rationalize::util::read_file(path)?)?,
        None => default_synthetic_spec(args.seed, !args.no_leak),
    };
    let total = args.n_train + args.n_val + args.n_test;
    let docs = gen_synthetic(&spec, total)?;
    std::fs::create_dir_all(&args.out)?;

    let to_line = |doc: &rationalize::data::SyntheticDoc, with_gold: bool| DataLine {
        id: doc.id.clone(),
        text: doc.text(),
        label: format!("class{}", doc.label),
        evidences: with_gold.then(|| doc.gold_spans().spans().to_vec()),
        gold_sentences: None,
        granularity: Some(Granularity::Token),
    };
    let train_lines: Vec<DataLine> = docs[..args.n_train].iter().map(|d| to_line(d, false)).collect();
    let val_lines: Vec<DataLine> = docs[args.n_train..args.n_train + args.n_val]
        .iter()
        .map(|d| to_line(d, false))
        .collect();
    let test_lines: Vec<DataLine> = docs[args.n_train + args.n_val..]
        .iter()
        .map(|d| to_line(d, true))
        .collect();
    write_jsonl(&args.out.join("train.jsonl"), &train_lines)?;
    write_jsonl(&args.out.join("val.jsonl"), &val_lines)?;
    write_jsonl(&args.out.join("test.jsonl"), &test_lines)?;
    std::fs::write(
        args.out.join("spec.json"),
        serde_json::to_string_pretty(&spec)?,
    )?;
    println!(
        "generated {} train / {} val / {} test documents",
        args.n_train, args.n_val, args.n_test
    );

    RunManifest {
        command: "gen-synthetic".into(),
        tool_version: VERSION.into(),
        config_hash: hash_settings(&spec),
        seed: spec.seed,
        inputs: vec![],
        outputs: vec![
            args.out.join("train.jsonl").display().to_string(),
            args.out.join("val.jsonl").display().to_string(),
            args.out.join("test.jsonl").display().to_string(),
        ],
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&args.out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let mut all_passed = true;
    for encoder in [EncoderKind::MeanPool, EncoderKind::RecurrentCell] {
        let model = RationaleModel::new(
            ModelConfig {
                generator: GeneratorConfig {
                    embed_dim: 8,
                    hidden_dim: 8,
                    trainable_embeddings: true,
                    encoder,
                },
                n_classes: 2,
                vocab_size: 16,
                selection: SelectionKind::TopKUnigram,
            },
            args.seed,
        )?;
        let text = rationalize::corpus::TokenizedText {
            tokens: (0..10).map(|i| 2 + (i % 14) as u32).collect(),
            token_strings: (0..10).map(|i| format!("w{i}")).collect(),
            sentence_bounds: vec![(0, 5), (5, 10)],
        };
        let strategy = SelectionStrategy::new(SelectionKind::TopKUnigram, 0.2)?;
        let report = grad_check(
            |_| {
                let scores = model.score_tokens(&text)?;
                let mask = select(scores.value().as_slice(), &strategy, &text.sentence_bounds)?;
                let pair = PredictionPair {
                    y_a: model.predict_attention(&text, &scores)?,
                    y_r: model.predict_rationale(&PerturbedRationale::identity(&text), &mask)?,
                };
                combined_loss(&pair, 1, 0.1)
            },
            &model.params,
            args.step,
            args.tol,
        )?;
        println!("{encoder:?}: {report}");
        all_passed &= report.passed();
    }
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
