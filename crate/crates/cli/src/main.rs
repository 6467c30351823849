use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use slu_core::archive::{load_engine, read_manifest, save_engine};
use slu_core::builtin::{extract_builtin, BuiltinKind, ReferenceTime};
use slu_core::confnet::{apply_oov_threshold, greedy_decode_with, ConfusionNetwork};
use slu_core::dataset::{load_dataset_with, write_dataset, Dataset};
use slu_core::engine::{train_engine, EngineConfig};
use slu_core::eval::{curve_tsv, disambiguate, evaluate_cv, learning_curve, EvalConfig, SlotMatching};
use slu_core::lm::{perplexity, ClassLm, ClassLmConfig, EntityModelKind, ScoreMode};
use slu_core::normalize::{normalize, tokenize};
use slu_core::prob::clusters::ClusterLexicon;
use slu_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "slu", version, about = "Spoken language understanding toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed for every randomized step.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Ignore unknown keys in dataset files.
    #[arg(long, global = true)]
    lenient: bool,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    /// ISO-8601 instant that relative dates resolve against; defaults to now.
    #[arg(long, global = true)]
    reference_time: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an engine and write its archive directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Word-cluster lexicon (word<TAB>cluster per line); repeatable.
        #[arg(long)]
        clusters: Vec<PathBuf>,
    },
    /// Parse one or more queries with a trained engine.
    Parse {
        #[arg(long)]
        engine: PathBuf,
        #[arg(long, required = true)]
        query: Vec<String>,
    },
    /// Stratified k-fold cross-validation.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Count overlapping slot spans as matches.
        #[arg(long)]
        overlap: bool,
    },
    /// F1 as a function of training utterances per intent.
    LearningCurve {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Also write the curve as a TSV table.
        #[arg(long)]
        tsv: Option<PathBuf>,
    },
    /// Majority-vote repair of intents and slot annotations.
    Disambiguate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value_t = 3)]
        folds: usize,
        /// Write the corrected dataset here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Add values to a custom entity of a trained engine.
    Inject {
        #[arg(long)]
        engine: PathBuf,
        #[arg(long)]
        entity: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Destination archive; defaults to updating the engine in place.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Class-based language model operations.
    Lm {
        #[command(subcommand)]
        command: LmCommand,
    },
    /// Greedy decoding of a confusion network with OOV thresholding.
    DecodeCn {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = slu_core::confnet::DEFAULT_OOV_THRESHOLD)]
        threshold: f64,
        /// Let NULL arcs contribute to the sentence confidence.
        #[arg(long)]
        include_null: bool,
    },
    /// Tokenize and verbalize text.
    Normalize {
        #[arg(long)]
        text: String,
        /// Tokenize only.
        #[arg(long)]
        no_verbalize: bool,
    },
    /// Extract builtin entities, one JSON object per line.
    Builtin {
        #[arg(long)]
        text: String,
        /// Comma-separated kinds (number, ordinal, temperature, duration, datetime).
        #[arg(long, value_delimiter = ',')]
        scope: Vec<String>,
    },
}

#[derive(Subcommand)]
enum LmCommand {
    /// Train a class LM from a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, value_enum, default_value = "union")]
        entity_model: EntityModelArg,
        #[arg(long, default_value_t = 2)]
        entity_order: usize,
    },
    /// Natural-log probability of sentences.
    Score {
        /// LM file or engine archive directory.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true)]
        sentence: Vec<String>,
        #[arg(long, value_enum, default_value = "sum")]
        mode: ModeArg,
        /// Map unseen words to the unknown-word token.
        #[arg(long)]
        unk: bool,
    },
    /// Perplexity over a file with one sentence per line.
    Perplexity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        unk: bool,
    },
    /// Draw sentences from the model, one JSON object per line.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 30)]
        max_len: usize,
    },
    /// Add values to an entity sub-model.
    Inject {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        entity: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EntityModelArg {
    Union,
    Ngram,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sum,
    Max,
}

#[derive(Debug)]
enum Failure {
    Data(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn emit(value: &Value) -> Outcome {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Failure::Internal(e.to_string()))?;
    writeln!(out).map_err(|e| Failure::Internal(e.to_string()))
}

fn emit_line(value: &Value) -> Outcome {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, value).map_err(|e| Failure::Internal(e.to_string()))?;
    writeln!(out).map_err(|e| Failure::Internal(e.to_string()))
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value, Failure> {
    serde_json::to_value(v).map_err(|e| Failure::Internal(e.to_string()))
}

fn write_json(path: &Path, value: &Value) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Internal(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn parse_kind(name: &str) -> Result<BuiltinKind, Failure> {
    let id = if name.contains('/') {
        name.to_string()
    } else {
        format!("snips/{name}")
    };
    BuiltinKind::from_identifier(&id).ok_or_else(|| Failure::Data(format!("unknown builtin kind '{name}'")))
}

fn load_lm(path: &Path) -> Result<ClassLm, Failure> {
    let file = if path.is_dir() {
        path.join("class_lm.json")
    } else {
        path.to_path_buf()
    };
    if !file.exists() {
        return Err(Failure::Data(format!("no language model at {}", file.display())));
    }
    let text = fs::read_to_string(&file)?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", file.display())))
}

fn normalized_words(text: &str) -> Vec<String> {
    normalize(text).tokens.into_iter().map(|t| t.text).collect()
}

struct Context {
    seed: u64,
    lenient: bool,
    reference: ReferenceTime,
}

impl Context {
    fn dataset(&self, path: &Path) -> Result<Dataset, Failure> {
        load_dataset_with(path, self.lenient).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
    }

    fn eval_config(&self, overlap: bool) -> EvalConfig {
        EvalConfig {
            engine: EngineConfig::default(),
            slot_matching: if overlap { SlotMatching::Overlap } else { SlotMatching::Exact },
            reference: self.reference,
        }
    }
}

fn run(command: Command, ctx: &Context) -> Outcome {
    match command {
        Command::Train {
            dataset,
            output,
            clusters,
        } => {
            let d = ctx.dataset(&dataset)?;
            let mut cfg = EngineConfig::default();
            for path in &clusters {
                cfg.clusters.push(ClusterLexicon::load(path)?);
            }
            let engine = train_engine(&d, &cfg, ctx.seed)?;
            save_engine(&engine, &output)?;
            emit(&json!({
                "output": output.display().to_string(),
                "fingerprint": engine.fingerprint,
                "seed": engine.seed,
                "intents": engine.intents,
                "training_seconds": engine.training_seconds,
            }))
        }
        Command::Parse { engine, query } => {
            let engine = load_engine(&engine)?;
            for q in &query {
                let (result, parser) = engine.parse_traced(q, &ctx.reference);
                log::info!("'{q}' handled by {parser:?} parser");
                emit_line(&to_value(&result)?)?;
            }
            Ok(())
        }
        Command::Evaluate {
            dataset,
            folds,
            report,
            overlap,
        } => {
            let d = ctx.dataset(&dataset)?;
            let r = evaluate_cv(&d, folds, ctx.seed, &ctx.eval_config(overlap))?;
            let value = to_value(&r)?;
            if let Some(path) = report {
                write_json(&path, &value)?;
            }
            emit(&value)
        }
        Command::LearningCurve { dataset, sizes, tsv } => {
            let d = ctx.dataset(&dataset)?;
            let points = learning_curve(&d, &sizes, ctx.seed, &ctx.eval_config(false))?;
            if let Some(path) = tsv {
                fs::write(path, curve_tsv(&points))?;
            }
            emit(&to_value(&points)?)
        }
        Command::Disambiguate {
            dataset,
            repetitions,
            folds,
            output,
        } => {
            let d = ctx.dataset(&dataset)?;
            let report = disambiguate(&d, repetitions, folds, ctx.seed, &ctx.eval_config(false))?;
            if let Some(path) = output {
                write_dataset(&report.corrected, path)?;
            }
            emit(&to_value(&report)?)
        }
        Command::Inject {
            engine: path,
            entity,
            values,
            output,
        } => {
            let engine = load_engine(&path)?.inject(&entity, &values)?;
            let target = output.unwrap_or(path);
            save_engine(&engine, &target)?;
            let manifest = read_manifest(&target)?;
            emit(&json!({
                "output": target.display().to_string(),
                "entity": entity,
                "added": values,
                "fingerprint": manifest.fingerprint,
            }))
        }
        Command::Lm { command } => run_lm(command, ctx),
        Command::DecodeCn {
            input,
            threshold,
            include_null,
        } => {
            let cn = ConfusionNetwork::from_json(&fs::read_to_string(&input)?)?;
            let decoded = apply_oov_threshold(&greedy_decode_with(&cn, include_null)?, threshold);
            emit(&json!({
                "text": decoded.text(),
                "words": to_value(&decoded.words)?,
                "sentence_confidence": decoded.sentence_confidence,
            }))
        }
        Command::Normalize { text, no_verbalize } => {
            let nt = if no_verbalize { tokenize(&text) } else { normalize(&text) };
            emit(&to_value(&nt)?)
        }
        Command::Builtin { text, scope } => {
            let scope: BTreeSet<BuiltinKind> = if scope.is_empty() {
                BuiltinKind::ALL.into_iter().collect()
            } else {
                scope.iter().map(|s| parse_kind(s)).collect::<Result<_, _>>()?
            };
            for m in extract_builtin(&normalize(&text), &scope, &ctx.reference) {
                emit_line(&to_value(&m)?)?;
            }
            Ok(())
        }
    }
}

fn run_lm(command: LmCommand, ctx: &Context) -> Outcome {
    match command {
        LmCommand::Train {
            dataset,
            output,
            order,
            entity_model,
            entity_order,
        } => {
            let d = ctx.dataset(&dataset)?;
            let cfg = ClassLmConfig {
                order,
                entity_model: match entity_model {
                    EntityModelArg::Union => EntityModelKind::Union,
                    EntityModelArg::Ngram => EntityModelKind::NGram,
                },
                entity_order,
            };
            let lm = ClassLm::from_dataset(&d, &cfg)?;
            write_json(&output, &to_value(&lm)?)?;
            emit(&json!({
                "output": output.display().to_string(),
                "order": order,
                "entities": lm.entity_models.keys().collect::<Vec<_>>(),
            }))
        }
        LmCommand::Score {
            model,
            sentence,
            mode,
            unk,
        } => {
            let lm = load_lm(&model)?;
            let mode = match mode {
                ModeArg::Sum => ScoreMode::Sum,
                ModeArg::Max => ScoreMode::Max,
            };
            for s in &sentence {
                let words = normalized_words(s);
                let refs: Vec<&str> = words.iter().map(String::as_str).collect();
                let logprob = lm.score(&refs, mode, unk);
                emit_line(&json!({
                    "sentence": s,
                    "tokens": words,
                    "logprob": if logprob.is_finite() { json!(logprob) } else { Value::Null },
                }))?;
            }
            Ok(())
        }
        LmCommand::Perplexity { model, corpus, unk } => {
            let lm = load_lm(&model)?;
            let sentences: Vec<Vec<String>> = fs::read_to_string(&corpus)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(normalized_words)
                .collect();
            let ppl = perplexity(&lm, &sentences, unk)?;
            emit(&json!({
                "sentences": sentences.len(),
                "perplexity": if ppl.is_finite() { json!(ppl) } else { Value::Null },
            }))
        }
        LmCommand::Sample { model, count, max_len } => {
            let lm = load_lm(&model)?;
            for i in 0..count {
                let words = lm.sample(ctx.seed.wrapping_add(i as u64), max_len);
                emit_line(&json!({ "sentence": words.join(" ") }))?;
            }
            Ok(())
        }
        LmCommand::Inject {
            model,
            entity,
            values,
            output,
        } => {
            let values: Vec<String> = values.iter().map(|v| normalized_words(v).join(" ")).collect();
            let lm = load_lm(&model)?.inject(&entity, &values)?;
            write_json(&output, &to_value(&lm)?)?;
            emit(&json!({
                "output": output.display().to_string(),
                "entity": entity,
                "added": values,
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.global.log_level)
        .target(env_logger::Target::Stderr)
        .init();
    let reference = match &cli.global.reference_time {
        Some(s) => match ReferenceTime::parse(s) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: --reference-time: {e}");
                return ExitCode::from(EXIT_USAGE);
            }
        },
        None => ReferenceTime::now(),
    };
    let ctx = Context {
        seed: cli.global.seed,
        lenient: cli.global.lenient,
        reference,
    };
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli.command, &ctx)));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::Data(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
        Ok(Err(Failure::Internal(msg))) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(EXIT_INTERNAL)
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
