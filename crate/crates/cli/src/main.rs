//! `keysense` command-line entry point.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use keysense_core::classifier::{ClassifierParams, ForestParams, LogisticParams};
use keysense_core::corpus::{
    label_records, read_annotations_file, read_corpus_file, write_annotations_file, write_corpus,
    CorpusRecord,
};
use keysense_core::evaluation::{annotation_agreement, cross_validate, evaluate_suite, ScoreTable};
use keysense_core::features::{csv_header, csv_line, DEFAULT_PAUSE_THRESHOLD_MS};
use keysense_core::fusion::{load_suite, predict_message, save_suite, train_suite, Mode, ModelSuite};
use keysense_core::model::{EmotionAnnotation, Level};
use keysense_core::synth::{generate_corpus, simulate_annotator, CorpusConfig};
use keysense_server::inference::prediction_from_text;
use keysense_server::{Config, Server};

const SAMPLE_CORPUS: &str = "data/sample_corpus.jsonl";

#[derive(Parser)]
#[command(name = "keysense", version, about = "Emotion detection from keystrokes and chat text")]
struct Cli {
    /// Emit machine-readable JSON instead of text reports.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic corpus.
    Generate(GenerateArgs),
    /// Compute the feature row of every message as CSV.
    ExtractFeatures(ExtractArgs),
    /// Train a model suite (one model per target).
    Train(TrainArgs),
    /// Score a suite on a corpus, or cross-validate a mode.
    Evaluate(EvaluateArgs),
    /// Krippendorff's alpha between two annotation files.
    Agreement(AgreementArgs),
    /// Predict emotions for every message of a recorded corpus.
    Predict(PredictArgs),
    /// Run the chat service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Messages per emotion category.
    #[arg(long, default_value_t = 100)]
    per_category: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Generate without the keystroke signal (style unrelated to emotion).
    #[arg(long)]
    no_kd_signal: bool,
    /// Generate without the vocabulary signal.
    #[arg(long)]
    no_text_signal: bool,
    /// Narrow the timing gaps between emotions.
    #[arg(long)]
    hard: bool,
    /// Messages per conversation.
    #[arg(long, default_value_t = 10)]
    session_size: usize,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Also write two simulated annotators' files into this directory.
    #[arg(long)]
    annotations_dir: Option<PathBuf>,
    /// Probability that a simulated annotator perturbs each field.
    #[arg(long, default_value_t = 0.1)]
    annotator_noise: f64,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long, default_value = SAMPLE_CORPUS)]
    corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PAUSE_THRESHOLD_MS)]
    pause_threshold_ms: f64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Kd,
    Text,
    Fusion,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Kd => Mode::Kd,
            ModeArg::Text => Mode::Text,
            ModeArg::Fusion => Mode::Fusion,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Forest,
    Logistic,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "fusion")]
    mode: ModeArg,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value = "forest")]
    classifier: ClassifierArg,
    /// Trees per forest.
    #[arg(long, default_value_t = ForestParams::default().n_trees)]
    trees: usize,
    /// Maximum tree depth.
    #[arg(long, default_value_t = ForestParams::default().max_depth)]
    depth: usize,
    #[arg(long, default_value_t = DEFAULT_PAUSE_THRESHOLD_MS)]
    pause_threshold_ms: f64,
}

impl ModelArgs {
    fn params(&self) -> Result<ClassifierParams> {
        if self.trees == 0 || self.depth == 0 {
            bail!("--trees and --depth must be positive");
        }
        Ok(match self.classifier {
            ClassifierArg::Forest => ClassifierParams::Forest(ForestParams {
                n_trees: self.trees,
                max_depth: self.depth,
                ..ForestParams::default()
            }),
            ClassifierArg::Logistic => ClassifierParams::Logistic(LogisticParams::default()),
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = SAMPLE_CORPUS)]
    corpus: PathBuf,
    /// Suite directory; defaults to models/<mode>.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, default_value = SAMPLE_CORPUS)]
    corpus: PathBuf,
    /// Trained suite to score.
    #[arg(long, conflicts_with = "folds", required_unless_present = "folds")]
    suite: Option<PathBuf>,
    /// Cross-validate with this many folds instead of scoring a suite.
    #[arg(long)]
    folds: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct AgreementArgs {
    first: PathBuf,
    second: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    suite: PathBuf,
    /// Recorded messages with their key events (corpus JSON lines).
    #[arg(long)]
    session: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PAUSE_THRESHOLD_MS)]
    pause_threshold_ms: f64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn print_json(value: serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &value)?;
    writeln!(out)?;
    Ok(())
}

fn corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    read_corpus_file(path).with_context(|| format!("cannot read corpus {}", path.display()))
}

fn suite(dir: &Path) -> Result<ModelSuite> {
    load_suite(dir).with_context(|| format!("cannot load suite {}", dir.display()))
}

fn signed(level: Level) -> &'static str {
    match level.value() {
        1 => "+1",
        0 => "0",
        _ => "-1",
    }
}

fn generate(args: &GenerateArgs, json: bool) -> Result<()> {
    if args.per_category == 0 || args.session_size == 0 {
        bail!("--per-category and --session-size must be positive");
    }
    if !(0.0..=1.0).contains(&args.annotator_noise) {
        bail!("--annotator-noise must be in [0, 1]");
    }
    let config = CorpusConfig {
        per_category: [args.per_category; 7],
        kd_signal: !args.no_kd_signal,
        text_signal: !args.no_text_signal,
        hard: args.hard,
        session_size: args.session_size,
        seed: args.seed,
    };
    let records = generate_corpus(&config);
    let mut out = output(args.out.as_deref())?;
    write_corpus(&mut out, &records)?;
    out.flush()?;
    if let Some(dir) = &args.annotations_dir {
        std::fs::create_dir_all(dir)?;
        let gold: Vec<EmotionAnnotation> = records.iter().filter_map(|r| r.gold.clone()).collect();
        for (i, name) in ["annotator_a", "annotator_b"].into_iter().enumerate() {
            let anns = simulate_annotator(&gold, args.annotator_noise, name, args.seed.wrapping_add(i as u64 + 1));
            write_annotations_file(&dir.join(format!("{name}.jsonl")), &anns)?;
        }
    }
    if args.out.is_some() {
        if json {
            print_json(serde_json::json!({"records": records.len(), "config": config}))?;
        } else {
            eprintln!("wrote {} records", records.len());
        }
    }
    Ok(())
}

fn extract(args: &ExtractArgs) -> Result<()> {
    let records = corpus(&args.corpus)?;
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "{}", csv_header())?;
    for r in &records {
        writeln!(out, "{}", csv_line(&r.feature_row(args.pause_threshold_ms)?))?;
    }
    out.flush()?;
    Ok(())
}

fn train(args: &TrainArgs, json: bool) -> Result<()> {
    let params = args.model.params()?;
    let mode: Mode = args.model.mode.into();
    let records = corpus(&args.corpus)?;
    let rows = label_records(&records, args.model.pause_threshold_ms)?;
    let suite = train_suite(&rows, mode, &params, args.model.seed)?;
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("models").join(mode.name()));
    let manifest = save_suite(&suite, &dir)?;
    if json {
        print_json(serde_json::json!({"suite": dir, "manifest": manifest}))?;
    } else {
        println!(
            "trained {} suite on {} messages -> {}",
            mode.name(),
            rows.len(),
            dir.display()
        );
    }
    Ok(())
}

fn evaluate(args: &EvaluateArgs, json: bool) -> Result<()> {
    let records = corpus(&args.corpus)?;
    let rows = label_records(&records, args.model.pause_threshold_ms)?;
    let (table, detail) = match (&args.suite, args.folds) {
        (Some(dir), _) => {
            let suite = suite(dir)?;
            let reports = evaluate_suite(&suite, &rows)?;
            (ScoreTable::from_reports(&reports), serde_json::to_value(&reports)?)
        }
        (None, Some(k)) => {
            let cv = cross_validate(&rows, k, args.model.mode.into(), &args.model.params()?, args.model.seed)?;
            (ScoreTable::from_cv(&cv), serde_json::to_value(&cv)?)
        }
        (None, None) => bail!("either --suite or --folds is required"),
    };
    if json {
        print_json(serde_json::json!({"table": table, "detail": detail}))?;
    } else {
        print!("{}", table.render_text());
    }
    Ok(())
}

fn agreement(args: &AgreementArgs, json: bool) -> Result<()> {
    let read = |p: &Path| {
        read_annotations_file(p).with_context(|| format!("cannot read annotations {}", p.display()))
    };
    let (a, b) = (read(&args.first)?, read(&args.second)?);
    let report = annotation_agreement(&a, &b)?;
    if json {
        return print_json(serde_json::to_value(&report)?);
    }
    println!("valence   alpha = {:.4} (interval)", report.valence.alpha);
    println!("arousal   alpha = {:.4} (interval)", report.arousal.alpha);
    for (c, r) in &report.categories {
        println!("{:<10}alpha = {:.4} (nominal)", c.name(), r.alpha);
    }
    println!("mean category alpha = {:.4}", report.mean_category_alpha);
    Ok(())
}

fn predict(args: &PredictArgs, json: bool) -> Result<()> {
    let suite = suite(&args.suite)?;
    let records = corpus(&args.session)?;
    let rows = label_records(&records, args.pause_threshold_ms)?;
    let mut out = output(None)?;
    for row in &rows {
        let id = &row.features.message_id;
        let p = if suite.mode == Mode::Text || row.features.kd_valid {
            predict_message(&suite, id, &suite.mode.project(&row.features, &row.text))?
        } else {
            prediction_from_text(id, &row.text, false)
        };
        if json {
            writeln!(out, "{}", serde_json::to_string(&p)?)?;
        } else {
            let labels: Vec<String> = p
                .labels
                .iter()
                .map(|l| format!("{}({:.2})", l.label.name(), l.confidence))
                .collect();
            writeln!(
                out,
                "{id}\tvalence={}\tarousal={}\t{}\t{}",
                signed(p.valence.value),
                signed(p.arousal.value),
                labels.join(","),
                serde_json::to_value(p.source)?.as_str().unwrap_or_default()
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn serve(args: &ServeArgs) -> Result<()> {
    let config = Config::load(&args.config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let server = Server::bind(config).await?;
        let mut line = format!("listening tcp={}", server.tcp_addr()?);
        if let Some(ws) = server.ws_addr() {
            line.push_str(&format!(" ws={}", ws?));
        }
        println!("{line}");
        io::stdout().flush()?;
        server.run().await?;
        Ok(())
    })
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => generate(a, cli.json),
        Command::ExtractFeatures(a) => extract(a),
        Command::Train(a) => train(a, cli.json),
        Command::Evaluate(a) => evaluate(a, cli.json),
        Command::Agreement(a) => agreement(a, cli.json),
        Command::Predict(a) => predict(a, cli.json),
        Command::Serve(a) => serve(a),
    }
}

/// One-line reason followed by the usage of the offending subcommand.
fn usage_error(e: &clap::Error) -> String {
    let rendered = e.render().to_string();
    let reason: Vec<&str> = rendered
        .lines()
        .take_while(|l| !l.trim().is_empty() && !l.starts_with("Usage:"))
        .map(str::trim)
        .collect();
    let reason = reason.join(" ");
    let mut cmd = Cli::command();
    cmd.build();
    let sub = std::env::args()
        .skip(1)
        .find(|a| !a.starts_with('-'))
        .and_then(|name| cmd.find_subcommand_mut(&name).map(|c| c.render_usage()));
    let usage = sub.unwrap_or_else(|| Cli::command().render_usage());
    format!("{reason}\n{usage}")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", usage_error(&e));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
