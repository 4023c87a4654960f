//! `ticnn` command-line tool.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ticnn::data::{
    corpus_stats, evaluate, Prepared, extract_features, load_checkpoint, load_dataset, predict_probabilities, prepare, save_checkpoint, synthetic_corpus, train,
    train_lr_baseline, write_dataset, Encoder, EpochLog, Label, Metrics, NewsRecord, SynthOptions, TrainOptions,
};
use ticnn::data::record::ImageSource;
use ticnn::data::encode::record_features;
use ticnn::engine::RmsPropConfig;
use ticnn::model::{predict_label, suite, ModelConfig};
use ticnn::image::IMAGE_FEATURE_NAMES;
use ticnn::text::{Lexicons, TEXT_FEATURE_NAMES};
use ticnn::{Error, Model};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "ticnn", version, about = "Multimodal fake news detection with a text and image CNN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-class statistics of the explicit features.
    Analyze(AnalyzeArgs),
    /// Explicit text and image features of every record, as JSON lines.
    Extract(ExtractArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Classify a single article.
    Predict(PredictArgs),
    /// Write a synthetic corpus as CSV plus images.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct Source {
    /// Dataset CSV with columns id,title,text,image,face_count,label.
    #[arg(long, conflicts_with = "synthetic")]
    dataset: Option<PathBuf>,
    /// Directory image paths are relative to (default: the CSV's directory).
    #[arg(long)]
    images: Option<PathBuf>,
    /// Use a generated corpus of N articles instead of a dataset.
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassFilter {
    Real,
    Fake,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    source: Source,
    /// Directory for stats.jsonl and stats.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only include one class.
    #[arg(long = "class")]
    class: Option<ClassFilter>,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    source: Source,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: Source,
    /// Checkpoint path. A sweep appends `.k<dim>` per run.
    #[arg(long)]
    out: PathBuf,
    /// Training log (JSON lines); defaults to `<out>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Embedding size, or a sweep `a..b` / `a..b:step` (step defaults to 50).
    #[arg(long, default_value = "100")]
    embed_dim: String,
    #[arg(long, default_value_t = 1000)]
    seq_len: usize,
    #[arg(long, default_value_t = 128)]
    hidden_dim: usize,
    /// Keep probability of the dropout after the embedding.
    #[arg(long, default_value_t = 0.5)]
    dropout_a: f64,
    /// Keep probability of the other dropout layers.
    #[arg(long, default_value_t = 0.8)]
    dropout_b: f64,
    /// Side of the square image filters.
    #[arg(long, default_value_t = 3)]
    filter_size: usize,
    #[arg(long, default_value_t = 20_000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Independent runs per configuration (seeds seed, seed+1, ...); reports
    /// mean and best test metrics.
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Train the explicit-feature logistic regression baseline instead.
    #[arg(long)]
    baseline: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitChoice {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    source: Source,
    /// Which part of the seeded split to evaluate.
    #[arg(long, value_enum, default_value = "test")]
    split: SplitChoice,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Double every analytic gradient; the check must then fail.
    #[arg(long)]
    corrupt: bool,
    /// Check a single layer kind (or `model`).
    #[arg(long)]
    layer: Option<String>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "")]
    title: String,
    #[arg(long)]
    text: String,
    #[arg(long)]
    image: Option<PathBuf>,
    /// Face count to use instead of the skin-region heuristic.
    #[arg(long)]
    faces: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_name = "N")]
    synthetic: usize,
    /// Output directory; receives dataset.csv and images/.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::InvalidConfig(_) => Failure::Usage(e.to_string()),
            Error::Divergence { .. } | Error::NonDeterministic(_) => Failure::Numerical(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn load_records(source: &Source) -> CliResult<Vec<NewsRecord>> {
    match (&source.dataset, source.synthetic) {
        (Some(path), None) => {
            let loaded = load_dataset(path, source.images.as_deref())?;
            if loaded.malformed > 0 {
                eprintln!("warning: skipped {} malformed row(s)", loaded.malformed);
            }
            Ok(loaded.records)
        }
        (None, Some(n)) => Ok(synthetic_corpus(n, source.seed, SynthOptions::default())),
        (None, None) => Err(Failure::Usage("one of --dataset or --synthetic is required".into())),
        (Some(_), Some(_)) => Err(Failure::Usage("--dataset and --synthetic are mutually exclusive".into())),
    }
}

fn analyze(args: AnalyzeArgs) -> CliResult {
    let mut records = load_records(&args.source)?;
    if let Some(c) = args.class {
        let keep = match c {
            ClassFilter::Real => Label::Real,
            ClassFilter::Fake => Label::Fake,
        };
        records.retain(|r| r.label == keep);
    }
    let features = extract_features(&records, &Lexicons::builtin(), ticnn::image::IMAGE_SIDE)?;
    let report = corpus_stats(&records, &features)?;
    let table = report.to_table();
    print!("{table}");
    if let Some(dir) = args.out {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("stats.jsonl"), report.to_jsonl()?)?;
        fs::write(dir.join("stats.txt"), table)?;
    }
    Ok(())
}

fn extract(args: ExtractArgs) -> CliResult {
    let records = load_records(&args.source)?;
    let features = extract_features(&records, &Lexicons::builtin(), ticnn::image::IMAGE_SIDE)?;
    let mut sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    for (r, f) in records.iter().zip(&features) {
        let mut row = serde_json::Map::new();
        row.insert("id".into(), r.id.clone().into());
        row.insert("label".into(), r.label.to_string().into());
        row.insert("image_missing".into(), f.image.missing.into());
        let named = TEXT_FEATURE_NAMES.iter().zip(f.text_explicit).chain(IMAGE_FEATURE_NAMES.iter().zip(f.image_explicit));
        for (name, v) in named {
            row.insert(name.to_string(), v.into());
        }
        writeln!(sink, "{}", serde_json::Value::Object(row))?;
    }
    sink.flush()?;
    Ok(())
}

/// `k`, `a..b` or `a..b:step`.
fn parse_dims(spec: &str) -> CliResult<Vec<usize>> {
    let bad = || Failure::Usage(format!("--embed-dim expects N, A..B or A..B:STEP, got `{spec}`"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let Some((a, rest)) = spec.split_once("..") else {
        return Ok(vec![num(spec)?]);
    };
    let (b, step) = match rest.split_once(':') {
        Some((b, s)) => (num(b)?, num(s)?),
        None => (num(rest)?, 50),
    };
    let a = num(a)?;
    if step == 0 || a > b {
        return Err(bad());
    }
    Ok((a..=b).step_by(step).collect())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn print_metrics(label: &str, m: &Metrics) {
    println!(
        "{label}: precision {:.4} recall {:.4} f1 {:.4} accuracy {:.4} (tp {} fp {} fn {} tn {})",
        m.precision, m.recall, m.f1, m.accuracy, m.tp, m.fp, m.fn_, m.tn
    );
}

fn train_cmd(args: TrainArgs) -> CliResult {
    let dims = parse_dims(&args.embed_dim)?;
    if args.runs == 0 {
        return Err(Failure::Usage("--runs must be >= 1".into()));
    }
    if args.filter_size == 0 {
        return Err(Failure::Usage("--filter-size must be >= 1".into()));
    }
    let options = TrainOptions {
        batch_size: args.batch_size,
        max_epochs: args.epochs,
        patience: args.patience,
        seed: args.source.seed,
        optimizer: RmsPropConfig {
            learning_rate: args.learning_rate,
            ..Default::default()
        },
        freeze: false,
    };
    options.validate()?;
    let base = ModelConfig {
        seq_len: args.seq_len,
        hidden_dim: args.hidden_dim,
        dropout_pair: (args.dropout_a, args.dropout_b),
        image_filter: (args.filter_size, args.filter_size),
        vocab_size: args.vocab_size,
        ..Default::default()
    };
    for &k in &dims {
        ModelConfig { embed_dim: k, ..base.clone() }.validate()?;
    }

    let records = load_records(&args.source)?;
    let prepared = prepare(&records, &Lexicons::builtin(), args.vocab_size, args.seq_len, base.image_size, args.source.seed)?;
    println!(
        "split: train {} validation {} test {} (vocabulary {}, training-token coverage {:.4})",
        prepared.train.len(),
        prepared.validation.len(),
        prepared.test.len(),
        prepared.encoder.vocab.len(),
        prepared.coverage
    );

    if args.baseline {
        let (outcome, metrics) = train_lr_baseline(&prepared.train, &prepared.validation, &prepared.test, &options)?;
        write_log(&log_path(&args, &args.out), &outcome.log)?;
        save_checkpoint(&args.out, &outcome.model, &prepared.encoder)?;
        write_metrics(&args.out, &metrics)?;
        print_metrics("test", &metrics);
        return Ok(());
    }

    let sweep = dims.len() > 1;
    let mut table = Vec::new();
    for &k in &dims {
        let config = ModelConfig {
            embed_dim: k,
            vocab_size: prepared.encoder.vocab.len(),
            ..base.clone()
        };
        let mut runs = Vec::new();
        for r in 0..args.runs {
            let mut out = args.out.clone();
            if sweep {
                out = with_suffix(&out, &format!(".k{k}"));
            }
            if args.runs > 1 {
                out = with_suffix(&out, &format!(".run{r}"));
            }
            let seed = args.source.seed + r as u64;
            let options = TrainOptions { seed, ..options };
            let model = Model::build(&config, seed)?;
            let count = model.param_count();
            println!("embed_dim {k}, run {}/{}, seed {seed}: {} parameters ({} trainable)", r + 1, args.runs, count.total, count.trainable);
            runs.push(train_one(&args, &out, model, &prepared, &options)?);
        }
        let n = runs.len() as f64;
        let mean = |f: fn(&Metrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
        let summary = (mean(|m| m.precision), mean(|m| m.recall), mean(|m| m.f1));
        let best = runs.iter().map(|m| m.f1).fold(f64::NEG_INFINITY, f64::max);
        if args.runs > 1 {
            println!("embed_dim {k} over {} runs: mean precision {:.4} recall {:.4} f1 {:.4}; best f1 {best:.4}", args.runs, summary.0, summary.1, summary.2);
        }
        table.push((k, summary, best));
    }
    if sweep {
        println!("\n{:>9} {:>9} {:>9} {:>9} {:>9}", "embed_dim", "precision", "recall", "f1", "best f1");
        for (k, (p, r, f), best) in table {
            println!("{k:>9} {p:>9.4} {r:>9.4} {f:>9.4} {best:>9.4}");
        }
    }
    Ok(())
}

/// Trains one model, streaming its log, and writes checkpoint and metrics.
fn train_one(args: &TrainArgs, out: &Path, model: Model, prepared: &Prepared, options: &TrainOptions) -> CliResult<Metrics> {
    let mut sink = BufWriter::new(File::create(log_path(args, out))?);
    let mut io_error = None;
    let outcome = train(model, &prepared.train, &prepared.validation, options, |row: &EpochLog| {
        println!(
            "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_f1 {:.4}  {:.1}s",
            row.epoch, row.train_loss, row.val_loss, row.val_f1, row.seconds
        );
        let line = serde_json::to_string(row).expect("log rows serialize");
        if let Err(e) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
            io_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    let mut model = outcome.model;
    let metrics = evaluate(&mut model, &prepared.test)?;
    save_checkpoint(out, &model, &prepared.encoder)?;
    write_metrics(out, &metrics)?;
    println!("best epoch {} of {}; checkpoint {}", outcome.best_epoch, outcome.log.len(), out.display());
    print_metrics("test", &metrics);
    Ok(metrics)
}

fn log_path(args: &TrainArgs, out: &Path) -> PathBuf {
    match (&args.log, out == args.out) {
        (Some(p), true) => p.clone(),
        (Some(p), false) => with_suffix(p, &out.to_string_lossy()[args.out.to_string_lossy().len()..]),
        (None, _) => with_suffix(out, ".log.jsonl"),
    }
}

fn write_log(path: &Path, log: &[EpochLog]) -> CliResult {
    let mut s = String::new();
    for row in log {
        s.push_str(&serde_json::to_string(row).map_err(|e| Failure::Data(e.to_string()))?);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

fn write_metrics(out: &Path, m: &Metrics) -> CliResult {
    fs::write(with_suffix(out, ".metrics.json"), serde_json::to_string_pretty(m).map_err(|e| Failure::Data(e.to_string()))? + "\n")?;
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> CliResult {
    let (mut model, encoder) = load_checkpoint(&args.checkpoint)?;
    let records = load_records(&args.source)?;
    let indices: Vec<usize> = match args.split {
        SplitChoice::All => (0..records.len()).collect(),
        part => {
            let s = ticnn::data::split_dataset(&records, args.source.seed)?;
            match part {
                SplitChoice::Train => s.train,
                SplitChoice::Validation => s.validation,
                _ => s.test,
            }
        }
    };
    let examples = encode_records(&records, &indices, &encoder, model.config().image_size)?;
    let metrics = evaluate(&mut model, &examples)?;
    print_metrics("eval", &metrics);
    println!("{}", serde_json::to_string(&metrics).map_err(|e| Failure::Data(e.to_string()))?);
    Ok(())
}

fn encode_records(records: &[NewsRecord], indices: &[usize], encoder: &Encoder, side: usize) -> CliResult<Vec<ticnn::data::EncodedExample>> {
    let lex = Lexicons::builtin();
    let picked: Vec<NewsRecord> = indices.iter().map(|&i| records[i].clone()).collect();
    let features = extract_features(&picked, &lex, side)?;
    let labels: Vec<usize> = picked.iter().map(|r| r.label.index()).collect();
    Ok(encoder.encode_all(&features, &labels, &(0..picked.len()).collect::<Vec<_>>()))
}

fn gradcheck_cmd(args: GradcheckArgs) -> CliResult {
    let results = match &args.layer {
        Some(name) => vec![(name.clone(), suite::check(&name.to_ascii_lowercase(), args.seed, args.corrupt)?)],
        None => suite::check_all(args.seed, args.corrupt)?,
    };
    let mut failed = Vec::new();
    for (name, r) in &results {
        println!(
            "{:<10} {}  max relative error {:.3e} at {} ({} entries, tolerance {:.0e})",
            name,
            if r.pass { "PASS" } else { "FAIL" },
            r.max_rel_error,
            if r.worst.is_empty() { "-" } else { &r.worst },
            r.checked,
            r.tolerance
        );
        if !r.pass {
            failed.push(name.as_str());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn predict_cmd(args: PredictArgs) -> CliResult {
    let (mut model, encoder) = load_checkpoint(&args.checkpoint)?;
    let record = NewsRecord {
        id: "input".into(),
        title: args.title,
        text: args.text,
        image: match args.image {
            Some(p) if p.is_file() => ImageSource::Path(p),
            Some(p) => {
                eprintln!("warning: image {} not found; using a blank image", p.display());
                ImageSource::Missing
            }
            None => ImageSource::Missing,
        },
        face_count: args.faces,
        label: Label::Real,
    };
    let features = record_features(&record, &Lexicons::builtin(), model.config().image_size)?;
    let example = encoder.encode(&features, 0);
    let probs = predict_probabilities(&mut model, &[example])?.remove(0);
    let label = Label::from_index(predict_label(&probs));
    println!("label {label}");
    println!("p_real {:.6}", probs[0]);
    println!("p_fake {:.6}", probs[1]);
    Ok(())
}

fn synth_cmd(args: SynthArgs) -> CliResult {
    fs::create_dir_all(&args.out)?;
    let records = synthetic_corpus(args.synthetic, args.seed, SynthOptions::default());
    let csv = args.out.join("dataset.csv");
    write_dataset(&records, &csv, Some(&args.out.join("images")))?;
    println!("wrote {} records to {}", records.len(), csv.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn configure_threads() -> CliResult {
    let Ok(v) = std::env::var("TICNN_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| Failure::Usage(format!("TICNN_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Usage(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (EXIT_USAGE, m),
                Failure::Data(m) => (EXIT_DATA, m),
                Failure::Numerical(m) => (EXIT_NUMERICAL, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
