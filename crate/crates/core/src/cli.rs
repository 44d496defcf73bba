//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 bad input data, 3 runtime failure.
//! Failures print one JSON object on stderr.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::checkpoint::{self, CheckpointStore, Manifest, FORMAT_VERSION};
use crate::dataio::{self, BioPolicy, CorpusExample, DataError, SyntheticGrammar, TopColumns};
use crate::decode::BeamConfig;
use crate::linearizer::{validate, Query, Style, TargetSequence};
use crate::model::{Model, ModelConfig};
use crate::pipeline::{self, Vocabularies};
use crate::train::{train_loop, MetricsRecord, TrainConfig, TrainError, Trainer};

/// Environment overrides: `PTRPARSE_TRAIN__MAX_STEPS=100` sets `train.max_steps`.
pub const ENV_PREFIX: &str = "PTRPARSE_";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn summary(&self) -> String {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Data(m) => ("data", m),
            CliError::Runtime(m) => ("runtime", m),
        };
        json!({ "error": kind, "message": message }).to_string()
    }
}

impl From<pipeline::Error> for CliError {
    fn from(e: pipeline::Error) -> Self {
        if e.is_data() {
            CliError::Data(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "ptrparse", version, about = "Pointer-generator transformer semantic parser")]
pub struct Cli {
    /// JSON config with flat dotted keys, e.g. {"train.max_steps": 3000}
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run on a single worker thread
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an external dataset to canonical JSON lines
    Import {
        #[command(subcommand)]
        format: ImportFormat,
    },
    /// Write a synthetic corpus as train/dev/test JSON lines
    Generate(GenerateArgs),
    /// Train a model and write checkpoints and a metrics log
    Train(TrainArgs),
    /// Score a checkpoint on a corpus
    Eval(EvalArgs),
    /// Parse queries, one per line
    Predict(PredictArgs),
    /// Canonical examples on stdin to target strings on stdout
    Linearize,
    /// Check target sequences on stdin for well-formedness
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Repair,
    Reject,
}

#[derive(Subcommand)]
enum ImportFormat {
    /// Line-aligned token, tag and intent label files
    Bio {
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        tags: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum, default_value = "repair")]
        policy: Policy,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tab-separated rows with a bracketed parse column
    Top {
        #[arg(long)]
        tsv: PathBuf,
        #[arg(long, default_value_t = 1)]
        utterance_col: usize,
        #[arg(long, default_value_t = 2)]
        parse_col: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 3)]
    depth_limit: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus directory with train.jsonl and optional dev.jsonl, or a single file
    #[arg(long)]
    corpus: PathBuf,
    /// Run directory for checkpoints and metrics.jsonl
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Continue from the newest checkpoint in the run directory
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    beam: Option<usize>,
    /// Directory for report.json and details.jsonl
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Plain-text or {"query": ...} lines; `-` reads stdin
    #[arg(long, default_value = "-")]
    input: String,
    #[arg(long)]
    beam: Option<usize>,
    /// Output file; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Style for lines that do not name one; inferred otherwise
    #[arg(long)]
    style: Option<Style>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tiny,
    #[default]
    Small,
    Large,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub preset: Preset,
    pub dropout: Option<f32>,
    /// Pointer block size; defaults to the longest training or dev query.
    pub max_src_len: Option<usize>,
}

impl ModelSettings {
    pub fn build(&self, vocab: &Vocabularies) -> ModelConfig {
        let (v, s, n) = (vocab.symtab.vocab_size(), vocab.source.size(), vocab.symtab.max_src_len());
        let mut cfg = match self.preset {
            Preset::Tiny => ModelConfig::tiny(v, s, n),
            Preset::Small => ModelConfig::small(v, s, n),
            Preset::Large => ModelConfig::large(v, s, n),
        };
        if let Some(p) = self.dropout {
            cfg.dropout = p;
        }
        cfg
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub beam: BeamConfig,
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => {
            out.insert(prefix.to_string());
        }
    }
}

fn set_dotted(root: &mut Value, key: &str, value: Value) {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        let obj = cur.as_object_mut().expect("config sections are objects");
        cur = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    cur.as_object_mut()
        .expect("config sections are objects")
        .insert(parts[parts.len() - 1].to_string(), value);
}

/// Environment variables with [`ENV_PREFIX`] as dotted keys.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, Value)> {
    let mut out: Vec<(String, Value)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            let key = rest.to_lowercase().replace("__", ".");
            let value = serde_json::from_str(&v).unwrap_or(Value::String(v));
            Some((key, value))
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Defaults, then the file, then the environment, then flags.
pub fn load_config(file: Option<&Path>, env: Vec<(String, Value)>, flags: Vec<(String, Value)>) -> Result<RunConfig> {
    load_config_keys(file, env, flags).map(|(cfg, _)| cfg)
}

/// As [`load_config`], also returning the keys set by any source.
pub fn load_config_keys(
    file: Option<&Path>,
    env: Vec<(String, Value)>,
    flags: Vec<(String, Value)>,
) -> Result<(RunConfig, BTreeSet<String>)> {
    let mut root = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let mut known = BTreeSet::new();
    flatten("", &root, &mut known);
    let mut pairs: Vec<(String, Value)> = Vec::new();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let map: Map<String, Value> =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        pairs.extend(map);
    }
    pairs.extend(env);
    pairs.extend(flags);
    let mut set = BTreeSet::new();
    for (key, value) in pairs {
        if !known.contains(&key) {
            return Err(CliError::Usage(format!("unknown config key {key:?}")));
        }
        set_dotted(&mut root, &key, value);
        set.insert(key);
    }
    let cfg: RunConfig = serde_json::from_value(root).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((cfg, set))
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").to_string();
            eprintln!("{}", CliError::Usage(first).summary());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.summary());
            ExitCode::from(e.code())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.deterministic {
        // fails only if the pool already exists, which is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut flags = Vec::new();
    match &cli.command {
        Command::Train(a) => {
            if let Some(s) = a.seed {
                flags.push(("train.seed".to_string(), json!(s)));
            }
            if let Some(s) = a.max_steps {
                flags.push(("train.max_steps".to_string(), json!(s)));
            }
        }
        Command::Eval(EvalArgs { beam: Some(b), .. }) | Command::Predict(PredictArgs { beam: Some(b), .. }) => {
            flags.push(("beam.beam_size".to_string(), json!(b)));
        }
        _ => {}
    }
    let (cfg, set) = load_config_keys(cli.config.as_deref(), env_overrides(std::env::vars()), flags)?;
    // checkpoints carry their own beam settings unless overridden
    let beam_override = set.iter().any(|k| k.starts_with("beam.")).then(|| cfg.beam.clone());
    let result = match cli.command {
        Command::Import { format } => import(format, &mut out),
        Command::Generate(a) => generate(a, &mut out),
        Command::Train(a) => train(a, cfg, &mut out),
        Command::Eval(a) => eval(a, beam_override, &mut out),
        Command::Predict(a) => predict(a, beam_override, &mut out),
        Command::Linearize => linearize_stream(io::stdin().lock(), &mut out),
        Command::Validate(a) => validate_stream(io::stdin().lock(), a.style, &mut out),
    };
    result?;
    out.flush().map_err(runtime)
}

fn write_line(out: &mut dyn Write, v: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *out, v).map_err(runtime)?;
    writeln!(out).map_err(runtime)
}

fn import(format: ImportFormat, out: &mut dyn Write) -> Result<()> {
    let (examples, dest) = match format {
        ImportFormat::Bio {
            tokens,
            tags,
            labels,
            policy,
            out,
        } => {
            let policy = match policy {
                Policy::Repair => BioPolicy::Repair,
                Policy::Reject => BioPolicy::Reject,
            };
            (dataio::import_bio_files(&tokens, &tags, &labels, policy)?, out)
        }
        ImportFormat::Top {
            tsv,
            utterance_col,
            parse_col,
            out,
        } => {
            let cols = TopColumns {
                utterance: utterance_col,
                parse: parse_col,
            };
            (dataio::import_top_file(&tsv, cols)?, out)
        }
    };
    dataio::write_corpus(&dest, &examples).map_err(runtime)?;
    write_line(out, &dataio::corpus_stats(&examples))
}

fn generate(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let grammar = SyntheticGrammar {
        depth_limit: a.depth_limit,
        ..Default::default()
    };
    let splits = dataio::generate_synthetic(&grammar, a.count, a.seed)?;
    fs::create_dir_all(&a.out).map_err(runtime)?;
    let mut stats = Map::new();
    for (name, set) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
        dataio::write_corpus(&a.out.join(format!("{name}.jsonl")), set).map_err(runtime)?;
        stats.insert(name.to_string(), json!(dataio::corpus_stats(set.iter())));
    }
    let all = splits.train.iter().chain(&splits.dev).chain(&splits.test);
    stats.insert("all".to_string(), json!(dataio::corpus_stats(all)));
    write_line(out, &stats)
}

fn read_training_corpus(path: &Path) -> Result<(Vec<CorpusExample>, Vec<CorpusExample>)> {
    if path.is_dir() {
        let train = dataio::read_corpus(&path.join("train.jsonl"))?;
        let dev_path = path.join("dev.jsonl");
        let dev = if dev_path.exists() {
            dataio::read_corpus(&dev_path)?
        } else {
            vec![]
        };
        Ok((train, dev))
    } else {
        Ok((dataio::read_corpus(path)?, vec![]))
    }
}

fn train(a: TrainArgs, cfg: RunConfig, out: &mut dyn Write) -> Result<()> {
    let (train_set, dev_set) = read_training_corpus(&a.corpus)?;
    if train_set.is_empty() {
        return Err(CliError::Data("training corpus is empty".into()));
    }
    let store = CheckpointStore::new(&a.checkpoint)?;
    let resume_from = if a.resume { store.latest()? } else { None };
    let (mut trainer, vocab, beam, mut best) = match &resume_from {
        Some(dir) => {
            let ck = checkpoint::load(dir)?;
            let mut tc = ck.manifest.train.clone();
            tc.max_steps = cfg.train.max_steps;
            let best = ck.manifest.best_dev_em;
            (Trainer::resume(ck.model, ck.optim, tc)?, ck.vocab, ck.manifest.beam, best)
        }
        None => {
            let longest = train_set.iter().chain(&dev_set).map(|e| e.query().len()).max().unwrap_or(1);
            let vocab = Vocabularies::build(&train_set, Some(cfg.model.max_src_len.unwrap_or(longest)))?;
            let model = Model::new(cfg.model.build(&vocab), cfg.train.seed).map_err(pipeline::Error::from)?;
            (Trainer::new(model, cfg.train.clone())?, vocab, cfg.beam.clone(), None)
        }
    };
    let run_config = RunConfig {
        train: trainer.config.clone(),
        beam: beam.clone(),
        ..cfg
    };
    let cfg_text = serde_json::to_string_pretty(&run_config).expect("config serializes");
    fs::write(store.root().join("run_config.json"), cfg_text).map_err(runtime)?;
    let metrics_path = store.root().join("metrics.jsonl");
    let mut metrics = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume_from.is_some())
        .truncate(resume_from.is_none())
        .open(&metrics_path)
        .map_err(runtime)?;

    let tr = vocab.encode_all(&train_set)?;
    let dv = vocab.encode_all_for_eval(&dev_set)?;
    let max_steps = trainer.config.max_steps;
    let summary = train_loop(&mut trainer, &tr, &dv, |t: &Trainer, rec: &MetricsRecord| -> Result<()> {
        write_line(&mut metrics, rec)?;
        if rec.dev_em.is_none() && rec.step != max_steps {
            return Ok(());
        }
        let improved = rec.dev_em.is_some_and(|em| best.is_none_or(|b| em > b));
        if improved {
            best = rec.dev_em;
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            model: t.model.config().clone(),
            train: t.config.clone(),
            beam: beam.clone(),
            step: rec.step,
            metrics: Some(rec.clone()),
            best_dev_em: best,
        };
        store.save_step(&manifest, &t.model, &t.optim, &vocab)?;
        if improved {
            store.save_best(&manifest, &t.model, &t.optim, &vocab)?;
        }
        Ok(())
    })?;
    write_line(
        out,
        &json!({
            "steps": summary.steps,
            "first_loss": summary.first_loss,
            "last_loss": summary.last_loss,
            "best_dev_em": best,
            "checkpoint": store.root().display().to_string(),
        }),
    )
}

fn load_checkpoint(path: &Path) -> Result<checkpoint::Checkpoint> {
    Ok(checkpoint::load(&checkpoint::resolve(path)?)?)
}

fn eval(a: EvalArgs, beam_override: Option<BeamConfig>, out: &mut dyn Write) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let beam = beam_override.unwrap_or(ck.manifest.beam);
    let examples = dataio::read_corpus(&a.corpus)?;
    let (report, preds) = pipeline::evaluate_corpus(&ck.model, &ck.vocab, &examples, &beam)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(runtime)?;
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(dir.join("report.json"), text + "\n").map_err(runtime)?;
        let mut details = BufWriter::new(File::create(dir.join("details.jsonl")).map_err(runtime)?);
        for (rec, (p, e)) in report.records.iter().zip(preds.iter().zip(&examples)) {
            let mut v = serde_json::to_value(rec).expect("record serializes");
            v["query"] = json!(e.query);
            v["prediction"] = json!(p.target.to_string());
            v["reference"] = json!(e.target().map_err(pipeline::Error::from)?.to_string());
            v["score"] = json!(p.score);
            write_line(&mut details, &v)?;
        }
        details.flush().map_err(runtime)?;
    }
    write_line(out, &report)
}

#[derive(Serialize)]
struct PredictionLine {
    query: String,
    prediction: String,
    score: f64,
    well_formed: bool,
}

fn query_of_line(line: &str) -> Result<String> {
    let t = line.trim();
    if t.starts_with('{') {
        let v: Value = serde_json::from_str(t).map_err(|e| CliError::Data(e.to_string()))?;
        v.get("query")
            .and_then(Value::as_str)
            .map(dataio::normalize)
            .ok_or_else(|| CliError::Data("input object lacks a \"query\" string".into()))
    } else {
        Ok(dataio::normalize(t))
    }
}

fn predict(a: PredictArgs, beam_override: Option<BeamConfig>, out: &mut dyn Write) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let beam = beam_override.unwrap_or(ck.manifest.beam);
    let text = if a.input == "-" {
        io::read_to_string(io::stdin()).map_err(runtime)?
    } else {
        dataio::read_text(Path::new(&a.input))?
    };
    let queries: Vec<String> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(query_of_line)
        .collect::<Result<_>>()?;
    let lines: Vec<PredictionLine> = queries
        .par_iter()
        .map(|q| -> Result<PredictionLine> {
            let query = Query::new(q);
            let best = pipeline::predict(&ck.model, &ck.vocab, &query, &beam)?.into_iter().next();
            Ok(match best {
                Some(p) => {
                    let style = Style::infer(&p.target).unwrap_or(Style::Flat);
                    PredictionLine {
                        query: q.clone(),
                        prediction: p.target.to_string(),
                        score: p.score,
                        well_formed: !p.truncated && validate(&p.target, query.len(), style).well_formed,
                    }
                }
                None => PredictionLine {
                    query: q.clone(),
                    prediction: String::new(),
                    score: f64::NEG_INFINITY,
                    well_formed: false,
                },
            })
        })
        .collect::<Result<_>>()?;
    let mut file;
    let sink: &mut dyn Write = match &a.out {
        Some(p) => {
            file = BufWriter::new(File::create(p).map_err(runtime)?);
            &mut file
        }
        None => out,
    };
    for l in &lines {
        write_line(sink, l)?;
    }
    sink.flush().map_err(runtime)
}

/// Canonical example lines in, target strings out.
pub fn linearize_stream(input: impl BufRead, out: &mut dyn Write) -> Result<()> {
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(runtime)?;
        if line.trim().is_empty() {
            continue;
        }
        let examples = dataio::from_jsonl(&line).map_err(|e| CliError::Data(format!("line {}: {e}", i + 1)))?;
        let target = examples[0]
            .target()
            .map_err(|e| CliError::Data(format!("line {}: {e}", i + 1)))?;
        writeln!(out, "{target}").map_err(runtime)?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct ValidateLine {
    target: String,
    query: Option<String>,
    source_len: Option<usize>,
    style: Option<Style>,
}

/// `{"target", "query" | "source_len", "style"?}` lines in, one
/// `{"well_formed", "violations"}` object per line out. Malformed targets
/// are a result, not an error.
pub fn validate_stream(input: impl BufRead, style: Option<Style>, out: &mut dyn Write) -> Result<()> {
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(runtime)?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| CliError::Data(format!("line {}: {m}", i + 1));
        let req: ValidateLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let target: TargetSequence = req.target.parse().map_err(|e: crate::linearizer::ParseSymbolError| bad(e.to_string()))?;
        let n = match (&req.query, req.source_len) {
            (Some(q), _) => Query::new(q).len(),
            (None, Some(n)) => n,
            (None, None) => return Err(bad("needs \"query\" or \"source_len\"".into())),
        };
        let style = req.style.or(style).or_else(|| Style::infer(&target)).unwrap_or(Style::Flat);
        write_line(out, &validate(&target, n, style))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"train.max_steps": 10, "train.batch_size": 8, "beam.beam_size": 2}"#).unwrap();
        let env = env_overrides(vec![
            ("PTRPARSE_TRAIN__MAX_STEPS".to_string(), "20".to_string()),
            ("PTRPARSE_MODEL__PRESET".to_string(), "tiny".to_string()),
            ("OTHER".to_string(), "1".to_string()),
        ]);
        let flags = vec![("train.max_steps".to_string(), json!(30))];
        let cfg = load_config(Some(&file), env, flags).unwrap();
        assert_eq!(cfg.train.max_steps, 30);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.beam.beam_size, 2);
        assert_eq!(cfg.model.preset, Preset::Tiny);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let err = load_config(None, vec![("train.nope".to_string(), json!(1))], vec![]).unwrap_err();
        assert_eq!(err.code(), 1);
    }

    #[test]
    fn validate_is_a_query() {
        let input = r#"{"target": "[IN:A @ptr_0", "source_len": 2}"#;
        let mut out = Vec::new();
        validate_stream(input.as_bytes(), None, &mut out).unwrap();
        let v: Value = serde_json::from_slice(&out).unwrap();
        assert_eq!(v["well_formed"], json!(false));
    }
}
