//! The `compex` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid input data, 3 runtime
//! failure. Failures print one `error: <Kind>: <message>` line to stderr.
//!
//! Every command writes `<output>.manifest.json` next to its main output with
//! the configuration and sha256 digests of inputs and outputs. When an input
//! has such a manifest, its digest is checked before use.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{
    annotate_text, build_matcher, generate_jobs, generate_synthetic_corpus, read_corpus_jsonl, read_raw_sentences,
    to_conll, tokenize, write_corpus_jsonl, AnnotatedSentence, CorpusError, LabelScheme,
};
use crate::evaluation::{aggregate, bench_inference, evaluate, BenchMode};
use crate::inference::{predict_tokens, prediction_to_conll, PredictionRecord};
use crate::model::{load_checkpoint, load_pretrained_embeddings, save_checkpoint, HeadKind};
use crate::taxonomy::{load_taxonomy, toy_taxonomy, FormSelection, Taxonomy};
use crate::training::{init_model, log_to_jsonl, split_dataset, train, Architecture, SplitSpec, TrainConfig};
use crate::ErrorCategory;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "compex", version, about = "Extract and classify competence entities in job-posting text")]
pub struct Cli {
    /// Run on a single thread. Outputs are identical either way; this pins
    /// timing and scheduling.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a taxonomy file and write it in normalized form.
    ImportTaxonomy(ImportArgs),
    /// Generate a synthetic annotated corpus, or raw job documents with --jobs.
    Generate(GenerateArgs),
    /// Annotate raw sentences (one per line) by taxonomy matching.
    Annotate(AnnotateArgs),
    /// Shuffle and split an annotated corpus into train/val/test.
    Split(SplitArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Predict entities for raw sentences (one per line).
    Predict(PredictArgs),
    /// Evaluate one or more checkpoints on an annotated test set.
    Eval(EvalArgs),
    /// Time per-job inference.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Taxonomy in JSON lines (`id`, `class`, `surface_forms`, `description`).
    #[arg(long = "in", value_name = "PATH", required_unless_present = "toy")]
    pub input: Option<PathBuf>,
    /// Use the bundled toy taxonomy as input.
    #[arg(long, conflicts_with = "input")]
    pub toy: bool,
    #[arg(long, value_name = "PATH", required_unless_present = "validate_only")]
    pub out: Option<PathBuf>,
    /// Only validate; write nothing.
    #[arg(long)]
    pub validate_only: bool,
    /// Keep only the preferred (first) surface form of each entry.
    #[arg(long)]
    pub preferred_only: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Taxonomy file; the bundled toy taxonomy when omitted.
    #[arg(long, value_name = "PATH")]
    pub taxonomy: Option<PathBuf>,
    /// Number of sentences.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write this many raw job documents instead of an annotated corpus.
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    #[arg(long, default_value_t = 20, requires = "jobs")]
    pub sentences_per_job: usize,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Bio,
    AllClass,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long, value_name = "PATH")]
    pub taxonomy: PathBuf,
    /// Raw text, one sentence per line.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Annotated corpus (JSON lines).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Also write a CoNLL-style export.
    #[arg(long, value_name = "PATH")]
    pub conll: Option<PathBuf>,
    /// Tag set of the CoNLL export.
    #[arg(long, value_enum, default_value = "bio")]
    pub label_scheme: SchemeArg,
    /// Match preferred surface forms only.
    #[arg(long)]
    pub preferred_only: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Directory for train.jsonl, val.jsonl and test.jsonl.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// train,val,test ratios.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HeadArg {
    Joint,
    AllClass,
}

impl From<HeadArg> for HeadKind {
    fn from(h: HeadArg) -> HeadKind {
        match h {
            HeadArg::Joint => HeadKind::Joint,
            HeadArg::AllClass => HeadKind::AllClass,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    pub train: PathBuf,
    /// Validation corpus; the training corpus when omitted.
    #[arg(long, value_name = "PATH")]
    pub val: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Training log (JSON lines, one record per validation check).
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weight of the tagging loss.
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    /// Validation checks without improvement before stopping.
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Steps between validation checks (default: ten per epoch).
    #[arg(long)]
    pub interval: Option<usize>,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long, value_enum, default_value = "joint")]
    pub head: HeadArg,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Context window in tokens.
    #[arg(long, default_value_t = 64)]
    pub window: usize,
    /// Pretrained word vectors (text format) to initialize embeddings.
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Raw text, one sentence per line.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Prediction records (JSON lines).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub conll: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub test: PathBuf,
    /// Checkpoint; repeat for several runs. A `{seed}` placeholder is
    /// expanded to 0..K-1 with --seeds K.
    #[arg(long, value_name = "PATH", required = true)]
    pub model: Vec<String>,
    #[arg(long, value_name = "K")]
    pub seeds: Option<usize>,
    /// Report (JSON).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Print a human-readable table to stdout.
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Job documents: one sentence per line, jobs separated by blank lines.
    #[arg(long, value_name = "PATH")]
    pub jobs: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Number of jobs to time (drawn from the start of the file).
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Run detection and classification as separate encoder passes.
    #[arg(long)]
    pub two_pass: bool,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] crate::Error),
    #[error("digest of {path} does not match its manifest")]
    DigestMismatch { path: String },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("cannot write {path}: {source}")]
    WriteFailed { path: String, source: std::io::Error },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Lib(e) => e.kind(),
            CliError::DigestMismatch { .. } => "DigestMismatch",
            CliError::InvalidArgument(_) => "InvalidArgument",
            CliError::WriteFailed { .. } => "WriteFailed",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Lib(e) if e.category() == ErrorCategory::Runtime => 3,
            CliError::WriteFailed { .. } => 3,
            _ => 2,
        }
    }
}

macro_rules! lib_err {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Lib(e.into())
            }
        }
    )*};
}
lib_err!(
    crate::taxonomy::TaxonomyError,
    CorpusError,
    crate::model::ModelError,
    crate::inference::InferenceError,
    crate::training::TrainError,
    crate::evaluation::EvalError
);

type CliResult<T> = Result<T, CliError>;

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = if cli.deterministic {
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(|| execute(&cli.command)),
            Err(e) => Err(CliError::InvalidArgument(e.to_string())),
        }
    } else {
        execute(&cli.command)
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e);
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> CliResult<()> {
    match command {
        Command::ImportTaxonomy(a) => import_taxonomy(a),
        Command::Generate(a) => generate(a),
        Command::Annotate(a) => annotate(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench(a),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every command's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub manifest_version: u32,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_file(path: &Path) -> CliResult<FileDigest> {
    let bytes = fs::read(path).map_err(|e| read_error(path, e))?;
    Ok(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

fn read_error(path: &Path, source: std::io::Error) -> CliError {
    CorpusError::Io { path: path.display().to_string(), source }.into()
}

/// Digest of an input, checked against the manifest of the command that
/// produced it when one exists.
fn verify_input(path: &Path) -> CliResult<FileDigest> {
    let digest = digest_file(path)?;
    let mpath = manifest_path(path);
    if let Ok(text) = fs::read_to_string(&mpath) {
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::InvalidArgument(format!("unreadable manifest {}: {e}", mpath.display())))?;
        let recorded = manifest.outputs.iter().find(|o| {
            Path::new(&o.path).file_name() == path.file_name()
        });
        if let Some(recorded) = recorded {
            if recorded.sha256 != digest.sha256 {
                return Err(CliError::DigestMismatch { path: path.display().to_string() });
            }
        }
    }
    Ok(digest)
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<FileDigest> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::WriteFailed { path: dir.display().to_string(), source })?;
    }
    fs::write(path, contents).map_err(|source| CliError::WriteFailed { path: path.display().to_string(), source })?;
    Ok(FileDigest { path: path.display().to_string(), sha256: sha256_hex(contents) })
}

fn write_manifest(
    main_output: &Path,
    command: &str,
    seed: Option<u64>,
    config: Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
) -> CliResult<()> {
    let manifest = RunManifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        manifest_version: MANIFEST_VERSION,
        seed,
        config,
        inputs,
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(&manifest_path(main_output), text.as_bytes())?;
    Ok(())
}

fn load_taxonomy_checked(path: &Path) -> CliResult<(Taxonomy, FileDigest)> {
    let digest = verify_input(path)?;
    Ok((load_taxonomy(path)?, digest))
}

fn load_corpus_checked(path: &Path) -> CliResult<(Vec<AnnotatedSentence>, FileDigest)> {
    let digest = verify_input(path)?;
    Ok((read_corpus_jsonl(path)?, digest))
}

fn import_taxonomy(a: &ImportArgs) -> CliResult<()> {
    let (taxonomy, inputs) = match &a.input {
        Some(path) => {
            let (t, d) = load_taxonomy_checked(path)?;
            (t, vec![d])
        }
        None => (toy_taxonomy(), vec![]),
    };
    let taxonomy = if a.preferred_only {
        let entries = taxonomy
            .entries()
            .iter()
            .map(|e| crate::taxonomy::TaxonomyEntry { surface_forms: e.surface_forms[..1].to_vec(), ..e.clone() })
            .collect();
        Taxonomy::from_entries(entries)?
    } else {
        taxonomy
    };
    log::info!(
        "{} entries, {} distinct forms, {} classes",
        taxonomy.entries().len(),
        taxonomy.form_index().len(),
        taxonomy.classes().len()
    );
    if a.validate_only {
        println!("ok: {} entries, {} forms", taxonomy.entries().len(), taxonomy.form_index().len());
        return Ok(());
    }
    let out = a.out.as_ref().expect("clap requires --out");
    let written = write_file(out, taxonomy.to_jsonl().as_bytes())?;
    let config = json!({ "preferred_only": a.preferred_only, "toy": a.toy });
    write_manifest(out, "import-taxonomy", None, config, inputs, vec![written])
}

fn taxonomy_or_toy(path: &Option<PathBuf>) -> CliResult<(Taxonomy, Vec<FileDigest>)> {
    match path {
        Some(p) => {
            let (t, d) = load_taxonomy_checked(p)?;
            Ok((t, vec![d]))
        }
        None => Ok((toy_taxonomy(), vec![])),
    }
}

fn generate(a: &GenerateArgs) -> CliResult<()> {
    let (taxonomy, inputs) = taxonomy_or_toy(&a.taxonomy)?;
    let (text, config) = match a.jobs {
        Some(n_jobs) => {
            if n_jobs == 0 || a.sentences_per_job == 0 {
                return Err(CorpusError::EmptyDataset.into());
            }
            let jobs = generate_jobs(&taxonomy, n_jobs, a.sentences_per_job, a.seed);
            let text: String = jobs.iter().map(|j| j.join("\n") + "\n\n").collect();
            (text, json!({ "jobs": n_jobs, "sentences_per_job": a.sentences_per_job }))
        }
        None => {
            let corpus = generate_synthetic_corpus(&taxonomy, a.n, a.seed)?;
            (write_corpus_jsonl(&corpus), json!({ "n": a.n }))
        }
    };
    let written = write_file(&a.out, text.as_bytes())?;
    write_manifest(&a.out, "generate", Some(a.seed), config, inputs, vec![written])
}

fn annotate(a: &AnnotateArgs) -> CliResult<()> {
    let (taxonomy, tax_digest) = load_taxonomy_checked(&a.taxonomy)?;
    let raw_digest = verify_input(&a.input)?;
    let sentences = read_raw_sentences(&a.input)?;
    let selection = if a.preferred_only { FormSelection::PreferredOnly } else { FormSelection::All };
    let matcher = build_matcher(&taxonomy, selection)?;
    let corpus: Vec<AnnotatedSentence> = {
        use rayon::prelude::*;
        sentences.par_iter().map(|s| annotate_text(s, &matcher)).collect()
    };
    let mut outputs = vec![write_file(&a.out, write_corpus_jsonl(&corpus).as_bytes())?];
    let scheme = match a.label_scheme {
        SchemeArg::Bio => LabelScheme::Bio,
        SchemeArg::AllClass => LabelScheme::AllClass,
    };
    if let Some(conll) = &a.conll {
        outputs.push(write_file(conll, to_conll(&corpus, scheme).as_bytes())?);
    }
    let config = json!({
        "preferred_only": a.preferred_only,
        "label_scheme": format!("{:?}", a.label_scheme),
    });
    write_manifest(&a.out, "annotate", None, config, vec![tax_digest, raw_digest], outputs)
}

fn split(a: &SplitArgs) -> CliResult<()> {
    let (corpus, digest) = load_corpus_checked(&a.input)?;
    let spec = SplitSpec { train: a.ratios[0], val: a.ratios[1], test: a.ratios[2], seed: a.seed };
    let (train, val, test) = split_dataset(&corpus, &spec)?;
    let mut outputs = Vec::new();
    for (name, part) in [("train.jsonl", &train), ("val.jsonl", &val), ("test.jsonl", &test)] {
        let path = a.out_dir.join(name);
        let written = write_file(&path, write_corpus_jsonl(part).as_bytes())?;
        write_manifest(&path, "split", Some(a.seed), json!({ "ratios": a.ratios }), vec![digest.clone()], vec![written.clone()])?;
        outputs.push(written);
    }
    write_manifest(&a.out_dir.join("split"), "split", Some(a.seed), json!({ "ratios": a.ratios }), vec![digest], outputs)
}

fn train_cmd(a: &TrainArgs) -> CliResult<()> {
    let (train_set, train_digest) = load_corpus_checked(&a.train)?;
    let mut inputs = vec![train_digest];
    let val_set = match &a.val {
        Some(p) => {
            let (v, d) = load_corpus_checked(p)?;
            inputs.push(d);
            v
        }
        None => train_set.clone(),
    };
    let arch = Architecture { head: a.head.into(), dim: a.dim, heads: a.heads, window: a.window };
    let config = TrainConfig {
        lambda: a.lambda,
        lr: a.lr,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience,
        interval: a.interval,
        seed: a.seed,
        clip_norm: (a.clip > 0.0).then_some(a.clip),
    };
    config.validate()?;
    let mut model = init_model(&train_set, arch, a.seed)?;
    if let Some(path) = &a.embeddings {
        inputs.push(verify_input(path)?);
        let n = load_pretrained_embeddings(path, &mut model)?;
        log::info!("initialized {n} embedding rows from {}", path.display());
    }
    let outcome = train(model, &train_set, &val_set, &config)?;
    log::info!("best validation loss {:.6} after {} steps", outcome.best_val_loss, outcome.steps);
    save_checkpoint(&outcome.model, &a.out).map_err(|e| match e {
        crate::model::ModelError::Io { path, source } => CliError::WriteFailed { path, source },
        other => other.into(),
    })?;
    let mut outputs = vec![digest_file(&a.out)?];
    if let Some(log_path) = &a.log {
        outputs.push(write_file(log_path, log_to_jsonl(&outcome.log).as_bytes())?);
    }
    let cfg = json!({ "train": config, "architecture": arch });
    write_manifest(&a.out, "train", Some(a.seed), cfg, inputs, outputs)
}

fn predict_cmd(a: &PredictArgs) -> CliResult<()> {
    let model_digest = verify_input(&a.model)?;
    let model = load_checkpoint(&a.model)?;
    let raw_digest = verify_input(&a.input)?;
    let sentences = read_raw_sentences(&a.input)?;
    let results: Vec<(PredictionRecord, String)> = {
        use rayon::prelude::*;
        sentences
            .par_iter()
            .map(|s| {
                let tokens = tokenize(s);
                let p = predict_tokens(&tokens, &model)?;
                Ok((PredictionRecord::new(s, &tokens, &p), prediction_to_conll(&tokens, &p)))
            })
            .collect::<CliResult<_>>()?
    };
    let jsonl: String = results
        .iter()
        .map(|(r, _)| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect();
    let mut outputs = vec![write_file(&a.out, jsonl.as_bytes())?];
    if let Some(conll) = &a.conll {
        let text: String = results.iter().map(|(_, c)| c.as_str()).collect();
        outputs.push(write_file(conll, text.as_bytes())?);
    }
    write_manifest(&a.out, "predict", None, json!({}), vec![model_digest, raw_digest], outputs)
}

fn expand_models(models: &[String], seeds: Option<usize>) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for m in models {
        match (m.contains("{seed}"), seeds) {
            (true, Some(k)) => out.extend((0..k).map(|s| PathBuf::from(m.replace("{seed}", &s.to_string())))),
            (true, None) => {
                return Err(CliError::InvalidArgument(format!("{m} has a {{seed}} placeholder but --seeds is missing")))
            }
            (false, _) => out.push(PathBuf::from(m)),
        }
    }
    Ok(out)
}

fn eval_cmd(a: &EvalArgs) -> CliResult<()> {
    let (test, test_digest) = load_corpus_checked(&a.test)?;
    let mut inputs = vec![test_digest];
    let mut reports = Vec::new();
    for path in expand_models(&a.model, a.seeds)? {
        inputs.push(verify_input(&path)?);
        let model = load_checkpoint(&path)?;
        reports.push(evaluate(&test, &model)?);
    }
    let (json_text, table) = if reports.len() == 1 {
        let r = reports.pop().expect("one report");
        (serde_json::to_string_pretty(&r).expect("report serializes"), r.to_table())
    } else {
        let agg = aggregate(reports)?;
        (serde_json::to_string_pretty(&agg).expect("report serializes"), agg.to_table())
    };
    if a.table {
        print!("{table}");
    }
    let written = write_file(&a.out, (json_text + "\n").as_bytes())?;
    write_manifest(&a.out, "eval", None, json!({ "seeds": a.seeds }), inputs, vec![written])
}

/// Job documents: blocks of non-blank lines separated by blank lines.
pub fn parse_jobs(text: &str) -> Vec<Vec<String>> {
    let mut jobs = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                jobs.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line.to_string());
        }
    }
    if !current.is_empty() {
        jobs.push(current);
    }
    jobs
}

fn bench(a: &BenchArgs) -> CliResult<()> {
    if a.n == 0 {
        return Err(CliError::InvalidArgument("--n must be at least 1".into()));
    }
    let model_digest = verify_input(&a.model)?;
    let model = load_checkpoint(&a.model)?;
    let jobs_digest = verify_input(&a.jobs)?;
    let text = fs::read_to_string(&a.jobs).map_err(|e| read_error(&a.jobs, e))?;
    let mut jobs = parse_jobs(&text);
    if jobs.is_empty() {
        return Err(CorpusError::EmptyDataset.into());
    }
    if jobs.len() < a.n {
        log::warn!("only {} jobs available, timing all of them", jobs.len());
    }
    jobs.truncate(a.n);
    let mode = if a.two_pass { BenchMode::TwoPass } else { BenchMode::Joint };
    let stats = bench_inference(&jobs, &model, mode)?;
    println!("{} jobs ({:?}): {:.6} ± {:.6} s/job", stats.n_jobs, mode, stats.mean, stats.std);
    let body = json!({ "mode": mode, "timing": stats });
    let written = write_file(&a.out, (serde_json::to_string_pretty(&body).expect("serializes") + "\n").as_bytes())?;
    write_manifest(&a.out, "bench", None, json!({ "n": a.n, "mode": mode }), vec![model_digest, jobs_digest], vec![written])
}
