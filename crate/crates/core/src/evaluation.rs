//! Extraction and classification metrics, evaluation reports and per-job
//! inference timing.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{tokenize, AnnotatedSentence, BioLabel, Span};
use crate::inference::{classify_given_spans, predict, predict_tokens, predict_two_pass, InferenceError};
use crate::model::{checkpoint_to_string, HeadKind, ModelError, TrainedModel};
use crate::taxonomy::ClassCode;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {gold} gold vs {pred} predicted")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl EvalError {
    pub fn kind(&self) -> &'static str {
        match self {
            EvalError::LengthMismatch { .. } => "LengthMismatch",
            EvalError::EmptyInput => "EmptyInput",
            EvalError::Model(e) => e.kind(),
        }
    }
}

impl From<InferenceError> for EvalError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Model(m) => EvalError::Model(m),
            InferenceError::ModelNotLoaded => EvalError::EmptyInput,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Scores from counts; every ratio with a zero denominator is 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f1 }
    }
}

/// Token-level extraction score: B and I both count as "inside an entity".
/// Counts are pooled over all tokens of all sentences.
pub fn token_f1(gold: &[Vec<BioLabel>], pred: &[Vec<BioLabel>]) -> Result<Prf, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch { gold: gold.len(), pred: pred.len() });
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        if g.len() != p.len() {
            return Err(EvalError::LengthMismatch { gold: g.len(), pred: p.len() });
        }
        for (g, p) in g.iter().zip(p) {
            match (g.is_entity(), p.is_entity()) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// One-vs-rest scores for every class that occurs in either list.
pub fn per_class_scores(gold: &[ClassCode], pred: &[ClassCode]) -> Result<BTreeMap<ClassCode, ClassScore>, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch { gold: gold.len(), pred: pred.len() });
    }
    let classes: BTreeSet<ClassCode> = gold.iter().chain(pred).copied().collect();
    Ok(classes
        .into_iter()
        .map(|c| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (&g, &p) in gold.iter().zip(pred) {
                match (g == c, p == c) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let s = Prf::from_counts(tp, fp, fn_);
            (c, ClassScore { precision: s.precision, recall: s.recall, f1: s.f1, support: tp + fn_ })
        })
        .collect())
}

/// Per-class F1 averaged with gold-support weights. Classes absent from the
/// gold list carry no weight.
pub fn weighted_macro_f1(gold: &[ClassCode], pred: &[ClassCode]) -> Result<f64, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch { gold: gold.len(), pred: pred.len() });
    }
    if gold.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(weighted_from_scores(&per_class_scores(gold, pred)?))
}

fn weighted_from_scores(scores: &BTreeMap<ClassCode, ClassScore>) -> f64 {
    let support: usize = scores.values().map(|s| s.support).sum();
    if support == 0 {
        return 0.0;
    }
    scores.values().map(|s| s.support as f64 * s.f1).sum::<f64>() / support as f64
}

/// Strict end-to-end span score: a predicted entity counts only if both its
/// span and its class match a gold entity.
pub fn strict_span_f1(gold: &[Vec<(Span, ClassCode)>], pred: &[Vec<(Span, ClassCode)>]) -> Result<Prf, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch { gold: gold.len(), pred: pred.len() });
    }
    let (mut tp, mut n_gold, mut n_pred) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let g: BTreeSet<_> = g.iter().collect();
        n_gold += g.len();
        n_pred += p.len();
        tp += p.iter().filter(|e| g.contains(e)).count();
    }
    Ok(Prf::from_counts(tp, n_pred - tp, n_gold - tp))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    /// Seconds per job.
    pub mean: f64,
    pub std: f64,
    pub total: f64,
    pub n_jobs: usize,
}

impl TimingStats {
    pub fn from_samples(samples: &[f64]) -> TimingStats {
        let ms = MeanStd::of(samples);
        TimingStats { mean: ms.mean, std: ms.std, total: samples.iter().sum(), n_jobs: samples.len() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub head: HeadKind,
    /// sha256 of the evaluated checkpoint.
    pub model_digest: String,
    pub n_sentences: usize,
    pub n_gold_entities: usize,
    pub extraction: Prf,
    pub extraction_f1: f64,
    /// Computed on gold spans.
    pub classification_weighted_macro_f1: f64,
    pub per_class: BTreeMap<ClassCode, ClassScore>,
    /// Supplementary end-to-end score (exact span and class).
    pub strict_span: Prf,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<TimingStats>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "model {} ({})\nsentences {}  gold entities {}\n\n\
             extraction token F1          {:.4}  (P {:.4}  R {:.4})\n\
             classification weighted F1   {:.4}\n\
             strict span F1 (supplement)  {:.4}\n\n",
            &self.model_digest[..self.model_digest.len().min(12)],
            self.head,
            self.n_sentences,
            self.n_gold_entities,
            self.extraction_f1,
            self.extraction.precision,
            self.extraction.recall,
            self.classification_weighted_macro_f1,
            self.strict_span.f1,
        );
        out.push_str(&format!("{:<6} {:>9} {:>9} {:>9} {:>8}\n", "class", "precision", "recall", "f1", "support"));
        for (c, s) in &self.per_class {
            out.push_str(&format!(
                "{:<6} {:>9.4} {:>9.4} {:>9.4} {:>8}\n",
                c.as_str(),
                s.precision,
                s.recall,
                s.f1,
                s.support
            ));
        }
        if let Some(t) = &self.timing {
            out.push_str(&format!("\n{} jobs: {:.6} ± {:.6} s/job\n", t.n_jobs, t.mean, t.std));
        }
        out
    }
}

/// sha256 hex digest of a model's checkpoint serialization.
pub fn model_digest(model: &TrainedModel) -> String {
    hex::encode(Sha256::digest(checkpoint_to_string(model).as_bytes()))
}

/// Evaluates a model on annotated sentences. Extraction compares predicted
/// and gold tags token by token; classification classifies the gold spans.
pub fn evaluate(test: &[AnnotatedSentence], model: &TrainedModel) -> Result<EvalReport, EvalError> {
    struct Row {
        bio: Vec<BioLabel>,
        entities: Vec<(Span, ClassCode)>,
        gold_span_classes: Vec<ClassCode>,
    }
    let rows: Vec<Row> = test
        .par_iter()
        .map(|s| -> Result<Row, EvalError> {
            let p = predict_tokens(&s.tokens, model)?;
            Ok(Row {
                bio: p.bio,
                entities: p.entities.iter().map(|e| (e.span, e.class)).collect(),
                gold_span_classes: classify_given_spans(&s.tokens, &s.spans(), model)?,
            })
        })
        .collect::<Result<_, _>>()?;

    let gold_bio: Vec<Vec<BioLabel>> = test.iter().map(|s| s.bio.clone()).collect();
    let pred_bio: Vec<Vec<BioLabel>> = rows.iter().map(|r| r.bio.clone()).collect();
    let extraction = token_f1(&gold_bio, &pred_bio)?;

    let gold_classes: Vec<ClassCode> = test.iter().flat_map(|s| s.entities.iter().map(|e| e.class)).collect();
    let pred_classes: Vec<ClassCode> = rows.iter().flat_map(|r| r.gold_span_classes.iter().copied()).collect();
    let per_class = per_class_scores(&gold_classes, &pred_classes)?;
    if gold_classes.is_empty() {
        log::warn!("no gold entities; classification score reported as 0");
    }

    let gold_entities: Vec<Vec<(Span, ClassCode)>> =
        test.iter().map(|s| s.entities.iter().map(|e| (e.span, e.class)).collect()).collect();
    let pred_entities: Vec<Vec<(Span, ClassCode)>> = rows.into_iter().map(|r| r.entities).collect();

    Ok(EvalReport {
        head: model.head_kind(),
        model_digest: model_digest(model),
        n_sentences: test.len(),
        n_gold_entities: gold_classes.len(),
        extraction,
        extraction_f1: extraction.f1,
        classification_weighted_macro_f1: weighted_from_scores(&per_class),
        per_class,
        strict_span: strict_span_f1(&gold_entities, &pred_entities)?,
        timing: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        if values.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

/// Several runs of the same configuration (e.g. different seeds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_runs: usize,
    pub extraction_f1: MeanStd,
    pub classification_weighted_macro_f1: MeanStd,
    pub strict_span_f1: MeanStd,
    pub runs: Vec<EvalReport>,
}

pub fn aggregate(runs: Vec<EvalReport>) -> Result<AggregateReport, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let col = |f: fn(&EvalReport) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(AggregateReport {
        n_runs: runs.len(),
        extraction_f1: col(|r| r.extraction_f1),
        classification_weighted_macro_f1: col(|r| r.classification_weighted_macro_f1),
        strict_span_f1: col(|r| r.strict_span.f1),
        runs,
    })
}

impl AggregateReport {
    pub fn to_table(&self) -> String {
        format!(
            "{} runs\nextraction token F1          {:.4} ± {:.4}\n\
             classification weighted F1   {:.4} ± {:.4}\n\
             strict span F1 (supplement)  {:.4} ± {:.4}\n",
            self.n_runs,
            self.extraction_f1.mean,
            self.extraction_f1.std,
            self.classification_weighted_macro_f1.mean,
            self.classification_weighted_macro_f1.std,
            self.strict_span_f1.mean,
            self.strict_span_f1.std,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    /// One encoder pass shared by tagging and classification.
    #[default]
    Joint,
    /// Detection and classification as separate encoder invocations.
    TwoPass,
}

fn process_job(job: &[String], model: &TrainedModel, mode: BenchMode) -> Result<usize, EvalError> {
    let mut found = 0;
    for sentence in job {
        found += match mode {
            BenchMode::Joint => predict(sentence, model)?,
            BenchMode::TwoPass => predict_two_pass(sentence, model)?,
        }
        .entities
        .len();
    }
    Ok(found)
}

/// Wall-clock seconds per job on the calling thread, covering tokenization
/// and prediction of every sentence. One untimed pass over the first few jobs
/// warms caches first.
pub fn bench_inference(jobs: &[Vec<String>], model: &TrainedModel, mode: BenchMode) -> Result<TimingStats, EvalError> {
    if jobs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    for job in jobs.iter().take(5) {
        std::hint::black_box(process_job(job, model, mode)?);
    }
    let mut samples = Vec::with_capacity(jobs.len());
    for job in jobs {
        let start = Instant::now();
        std::hint::black_box(process_job(job, model, mode)?);
        samples.push(start.elapsed().as_secs_f64());
    }
    Ok(TimingStats::from_samples(&samples))
}

/// Number of tokens per job, for reporting alongside timings.
pub fn job_token_counts(jobs: &[Vec<String>]) -> Vec<usize> {
    jobs.iter().map(|j| j.iter().map(|s| tokenize(s).len()).sum()).collect()
}
