//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use compex::corpus::{tokenize, BioLabel, Span, Token};
use compex::model::{batch_grad, example_loss, Example, ModelParams};
use compex::taxonomy::{ClassCode, NUM_CLASSES};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Every token slice whose lowercased texts equal some form's lowercased
/// tokens, as (first, last, form tokens).
pub fn brute_force_matches(forms: &[String], tokens: &[Token]) -> BTreeSet<(usize, usize, Vec<String>)> {
    let keys: HashSet<Vec<String>> = forms
        .iter()
        .map(|f| tokenize(f).iter().map(|t| t.text.to_lowercase()).collect::<Vec<_>>())
        .filter(|k| !k.is_empty())
        .collect();
    let max_len = keys.iter().map(Vec::len).max().unwrap_or(0);
    let lowered: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();
    let mut out = BTreeSet::new();
    for first in 0..lowered.len() {
        for len in 1..=max_len.min(lowered.len() - first) {
            let slice = lowered[first..first + len].to_vec();
            if keys.contains(&slice) {
                out.insert((first, first + len - 1, slice));
            }
        }
    }
    out
}

/// Token-level extraction scores from explicit position sets.
pub fn token_prf_oracle(gold: &[Vec<BioLabel>], pred: &[Vec<BioLabel>]) -> (f64, f64, f64) {
    let inside = |seqs: &[Vec<BioLabel>]| -> HashSet<(usize, usize)> {
        seqs.iter()
            .enumerate()
            .flat_map(|(s, seq)| {
                seq.iter().enumerate().filter(|(_, l)| **l != BioLabel::O).map(move |(i, _)| (s, i))
            })
            .collect()
    };
    let (g, p) = (inside(gold), inside(pred));
    let tp = g.intersection(&p).count() as f64;
    let precision = if p.is_empty() { 0.0 } else { tp / p.len() as f64 };
    let recall = if g.is_empty() { 0.0 } else { tp / g.len() as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1)
}

/// Support-weighted F1 from a full confusion matrix.
pub fn weighted_f1_oracle(gold: &[ClassCode], pred: &[ClassCode]) -> f64 {
    let mut confusion = vec![[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (g, p) in gold.iter().zip(pred) {
        confusion[g.index()][p.index()] += 1;
    }
    let mut weighted = 0.0;
    for c in 0..NUM_CLASSES {
        let support: usize = confusion[c].iter().sum();
        if support == 0 {
            continue;
        }
        let predicted: usize = (0..NUM_CLASSES).map(|r| confusion[r][c]).sum();
        let tp = confusion[c][c] as f64;
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = tp / support as f64;
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        weighted += support as f64 * f1;
    }
    weighted / gold.len() as f64
}

/// (train, val, test) sizes for an a:b:c split in integer arithmetic.
pub fn split_oracle(n: u64, ratio: (u64, u64, u64)) -> (u64, u64, u64) {
    let denom = ratio.0 + ratio.1 + ratio.2;
    let val = n * ratio.1 / denom;
    let test = n * ratio.2 / denom;
    (n - val - test, val, test)
}

/// Random non-overlapping spans over `n` tokens.
pub fn random_spans(rng: &mut ChaCha8Rng, n: usize) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        if rng.gen_bool(0.3) {
            let len = rng.gen_range(1..=4).min(n - i);
            spans.push(Span::new(i, i + len - 1));
            i += len + rng.gen_range(0..3);
        } else {
            i += 1;
        }
    }
    spans
}

pub struct GradSample {
    pub tensor: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    /// |a - n| / max(|a|, |n|), with the denominator floored at `floor` so
    /// that entries whose true gradient is zero compare absolutely.
    pub fn relative_error(&self, floor: f64) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(floor)
    }
}

/// Central finite differences against the analytic gradient of one example,
/// for `per_tensor` random entries of every tensor. Embedding and position
/// entries are drawn from the rows the example actually uses.
pub fn finite_difference_check(
    params: &ModelParams,
    example: &Example,
    lambda: f64,
    eps: f64,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<GradSample> {
    let (grad, _) = batch_grad(std::slice::from_ref(example), params, lambda).unwrap();
    let loss = |p: &ModelParams| example_loss(example, p, lambda).unwrap().total;
    let mut samples = Vec::new();
    for (name, tensor) in params.tensors() {
        let cols = tensor.cols();
        let rows: Vec<usize> = match name {
            "encoder.embeddings" => {
                let mut ids = example.ids.clone();
                ids.sort();
                ids.dedup();
                ids
            }
            "encoder.positions" => (0..example.ids.len()).collect(),
            _ => (0..tensor.rows()).collect(),
        };
        let mut candidates: Vec<usize> = rows.iter().flat_map(|r| (0..cols).map(move |c| r * cols + c)).collect();
        candidates.shuffle(rng);
        candidates.truncate(per_tensor);
        let analytic_tensor = grad.tensors().into_iter().find(|(n, _)| *n == name).unwrap().1.clone();
        for index in candidates {
            let mut plus = params.clone();
            plus.tensor_mut(name).unwrap().data_mut()[index] += eps;
            let mut minus = params.clone();
            minus.tensor_mut(name).unwrap().data_mut()[index] -= eps;
            samples.push(GradSample {
                tensor: name,
                index,
                analytic: analytic_tensor.data()[index],
                numeric: (loss(&plus) - loss(&minus)) / (2.0 * eps),
            });
        }
    }
    samples
}
