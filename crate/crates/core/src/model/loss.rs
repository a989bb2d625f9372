//! Heads, pooling, cross-entropy and the joint objective
//! `total = l_cls + λ · l_ner`, with exact gradients.
//!
//! `l_ner` is the mean token cross-entropy against the gold BIO tags.
//! `l_cls` is the mean cross-entropy of the classification head applied to
//! the mean encoded vector of every *gold* entity span; it is zero for a
//! sentence without entities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{self, EncoderCache};
use super::tensor::Matrix;
use super::{FeedForward, HeadKind, Heads, ModelError, ModelParams, TokenVectors, Vocab};
use crate::corpus::{allclass_from_entities, encode_bio, AnnotatedSentence, BioLabel, Entity, Span};

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[gold]`, via a max-shifted log-sum-exp.
pub fn cross_entropy(logits: &[f64], gold: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    lse - logits[gold]
}

fn check_width(vectors: &TokenVectors, head: &FeedForward) -> Result<(), ModelError> {
    if !vectors.is_empty() && vectors.0.cols() != head.input_dim() {
        return Err(ModelError::ShapeMismatch {
            expected: format!("{} columns", head.input_dim()),
            got: format!("{} columns", vectors.0.cols()),
        });
    }
    Ok(())
}

fn head_rows(vectors: &TokenVectors, head: &FeedForward) -> Matrix {
    let mut out = Matrix::zeros(vectors.len(), head.output_dim());
    for i in 0..vectors.len() {
        out.row_mut(i).copy_from_slice(&head.forward(vectors.row(i)).1);
    }
    out
}

/// BIO logits per token, columns in O, B, I order.
pub fn ner_logits(vectors: &TokenVectors, params: &ModelParams) -> Result<Matrix, ModelError> {
    let (ner, _) = params.joint_heads()?;
    check_width(vectors, ner)?;
    Ok(head_rows(vectors, ner))
}

/// Logits over the 81 class-specific tags, per token.
pub fn allclass_logits(vectors: &TokenVectors, params: &ModelParams) -> Result<Matrix, ModelError> {
    let tagger = params.allclass_head()?;
    check_width(vectors, tagger)?;
    Ok(head_rows(vectors, tagger))
}

/// Class logits for a pooled span vector, in canonical class order.
pub fn cls_logits(pooled: &[f64], params: &ModelParams) -> Result<Vec<f64>, ModelError> {
    let (_, cls) = params.joint_heads()?;
    if pooled.len() != cls.input_dim() {
        return Err(ModelError::ShapeMismatch {
            expected: format!("vector of {}", cls.input_dim()),
            got: format!("vector of {}", pooled.len()),
        });
    }
    Ok(cls.forward(pooled).1)
}

/// Mean of the token vectors `first..=last`.
pub fn pool_span(vectors: &TokenVectors, span: Span) -> Result<Vec<f64>, ModelError> {
    if span.first > span.last || span.last >= vectors.len() {
        return Err(ModelError::OutOfRange { span, n_tokens: vectors.len() });
    }
    let mut acc = vectors.row(span.first).to_vec();
    if span.len() == 1 {
        return Ok(acc);
    }
    for i in span.first + 1..=span.last {
        for (a, x) in acc.iter_mut().zip(vectors.row(i)) {
            *a += x;
        }
    }
    let len = span.len() as f64;
    acc.iter_mut().for_each(|a| *a /= len);
    Ok(acc)
}

/// Components of the joint objective. `total` is always recomputed from the
/// components as `l_cls + lambda * l_ner`. For the all-class variant the
/// tagging loss is reported as `l_ner` with `lambda = 1` and `l_cls = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_ner: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_cls: f64, l_ner: f64, lambda: f64) -> LossBreakdown {
        LossBreakdown { l_cls, l_ner, lambda, total: l_cls + lambda * l_ner }
    }

    pub(crate) fn zero(lambda: f64) -> LossBreakdown {
        LossBreakdown::new(0.0, 0.0, lambda)
    }

    pub(crate) fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.l_cls += weight * other.l_cls;
        self.l_ner += weight * other.l_ner;
        self.lambda = other.lambda;
        self.total = self.l_cls + self.lambda * self.l_ner;
    }

    pub(crate) fn finish(&mut self, count: f64) {
        *self = LossBreakdown::new(self.l_cls / count, self.l_ner / count, self.lambda);
    }
}

/// A training instance: token ids plus gold tags and entities, no longer
/// than the context window.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub ids: Vec<usize>,
    pub bio: Vec<BioLabel>,
    pub entities: Vec<Entity>,
}

impl Example {
    /// Splits a sentence into window-sized chunks. An entity crossing a chunk
    /// boundary is clipped into one entity per chunk.
    pub fn from_sentence(sentence: &AnnotatedSentence, vocab: &Vocab, window: usize) -> Vec<Example> {
        let ids = vocab.ids(&sentence.tokens);
        if ids.len() <= window {
            return vec![Example {
                ids,
                bio: sentence.bio.clone(),
                entities: sentence.entities.clone(),
            }];
        }
        let mut out = Vec::new();
        for (c, chunk) in ids.chunks(window).enumerate() {
            let lo = c * window;
            let hi = lo + chunk.len() - 1;
            let entities: Vec<Entity> = sentence
                .entities
                .iter()
                .filter(|e| e.span.first <= hi && e.span.last >= lo)
                .map(|e| Entity {
                    span: Span::new(e.span.first.max(lo) - lo, e.span.last.min(hi) - lo),
                    class: e.class,
                })
                .collect();
            let spans: Vec<Span> = entities.iter().map(|e| e.span).collect();
            let bio = encode_bio(&spans, chunk.len()).expect("clipped spans stay disjoint");
            out.push(Example { ids: chunk.to_vec(), bio, entities });
        }
        out
    }

    fn allclass_targets(&self) -> Vec<usize> {
        allclass_from_entities(&self.entities, self.ids.len())
            .into_iter()
            .map(|l| l.index())
            .collect()
    }
}

/// Forward-only joint loss of one example.
pub fn joint_loss(example: &Example, params: &ModelParams, lambda: f64) -> Result<LossBreakdown, ModelError> {
    params.joint_heads()?;
    example_loss(example, params, lambda)
}

/// Forward-only loss of one example for either head variant.
pub fn example_loss(example: &Example, params: &ModelParams, lambda: f64) -> Result<LossBreakdown, ModelError> {
    let cache = encoder::forward(&example.ids, params)?;
    Ok(match &params.heads {
        Heads::Joint { ner, cls } => joint_pass(example, &cache, ner, cls, lambda, None),
        Heads::AllClass { tagger } => allclass_pass(example, &cache, tagger, None),
    })
}

struct GradSink<'a> {
    d_vectors: &'a mut Matrix,
    weight: f64,
}

fn joint_pass(
    ex: &Example,
    cache: &EncoderCache,
    ner: &FeedForward,
    cls: &FeedForward,
    lambda: f64,
    mut sink: Option<(&mut FeedForward, &mut FeedForward, GradSink<'_>)>,
) -> LossBreakdown {
    let vectors = &cache.output;
    let n = vectors.len();
    let mut l_ner = 0.0;
    for i in 0..n {
        let (hidden, logits) = ner.forward(vectors.row(i));
        let gold = ex.bio[i].index();
        l_ner += cross_entropy(&logits, gold);
        if let Some((g_ner, _, sink)) = sink.as_mut() {
            let mut d = softmax(&logits);
            d[gold] -= 1.0;
            let s = sink.weight * lambda / n as f64;
            d.iter_mut().for_each(|x| *x *= s);
            ner.backward(vectors.row(i), &hidden, &d, g_ner, sink.d_vectors.row_mut(i));
        }
    }
    if n > 0 {
        l_ner /= n as f64;
    }

    let n_ent = ex.entities.len();
    let mut l_cls = 0.0;
    for e in &ex.entities {
        let pooled = pool_span(vectors, e.span).expect("gold spans are in range");
        let (hidden, logits) = cls.forward(&pooled);
        let gold = e.class.index();
        l_cls += cross_entropy(&logits, gold);
        if let Some((_, g_cls, sink)) = sink.as_mut() {
            let mut d = softmax(&logits);
            d[gold] -= 1.0;
            let s = sink.weight / n_ent as f64;
            d.iter_mut().for_each(|x| *x *= s);
            let mut d_pooled = vec![0.0; pooled.len()];
            cls.backward(&pooled, &hidden, &d, g_cls, &mut d_pooled);
            let len = e.span.len() as f64;
            for i in e.span.first..=e.span.last {
                for (dv, dp) in sink.d_vectors.row_mut(i).iter_mut().zip(&d_pooled) {
                    *dv += dp / len;
                }
            }
        }
    }
    if n_ent > 0 {
        l_cls /= n_ent as f64;
    }
    LossBreakdown::new(l_cls, l_ner, lambda)
}

fn allclass_pass(
    ex: &Example,
    cache: &EncoderCache,
    tagger: &FeedForward,
    mut sink: Option<(&mut FeedForward, GradSink<'_>)>,
) -> LossBreakdown {
    let vectors = &cache.output;
    let n = vectors.len();
    let targets = ex.allclass_targets();
    let mut loss = 0.0;
    for (i, &gold) in targets.iter().enumerate() {
        let (hidden, logits) = tagger.forward(vectors.row(i));
        loss += cross_entropy(&logits, gold);
        if let Some((g, sink)) = sink.as_mut() {
            let mut d = softmax(&logits);
            d[gold] -= 1.0;
            let s = sink.weight / n as f64;
            d.iter_mut().for_each(|x| *x *= s);
            tagger.backward(vectors.row(i), &hidden, &d, g, sink.d_vectors.row_mut(i));
        }
    }
    if n > 0 {
        loss /= n as f64;
    }
    LossBreakdown::new(0.0, loss, 1.0)
}

/// Accumulates `weight * ∇ loss(example)` into `grad`.
fn example_grad(
    ex: &Example,
    params: &ModelParams,
    lambda: f64,
    weight: f64,
    grad: &mut ModelParams,
) -> Result<LossBreakdown, ModelError> {
    let cache = encoder::forward(&ex.ids, params)?;
    let mut d_vectors = Matrix::zeros(ex.ids.len(), params.config.dim);
    let ModelParams { encoder: g_enc, heads: g_heads, .. } = grad;
    let loss = match (&params.heads, g_heads) {
        (Heads::Joint { ner, cls }, Heads::Joint { ner: g_ner, cls: g_cls }) => {
            let sink = GradSink { d_vectors: &mut d_vectors, weight };
            joint_pass(ex, &cache, ner, cls, lambda, Some((g_ner, g_cls, sink)))
        }
        (Heads::AllClass { tagger }, Heads::AllClass { tagger: g }) => {
            let sink = GradSink { d_vectors: &mut d_vectors, weight };
            allclass_pass(ex, &cache, tagger, Some((g, sink)))
        }
        _ => unreachable!("gradient buffer mirrors the parameters"),
    };
    encoder::backward(&cache, &d_vectors, params, g_enc);
    Ok(loss)
}

/// Examples per sequential reduction unit. Fixed so that the summation order,
/// and therefore the result, does not depend on the number of threads.
const REDUCE_CHUNK: usize = 4;

/// Exact gradient of the mean loss over `batch`, and that mean loss.
pub fn batch_grad(
    batch: &[Example],
    params: &ModelParams,
    lambda: f64,
) -> Result<(ModelParams, LossBreakdown), ModelError> {
    assert!(!batch.is_empty(), "empty batch");
    let weight = 1.0 / batch.len() as f64;
    let partials: Vec<Result<(ModelParams, LossBreakdown), ModelError>> = batch
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut g = params.zeros_like();
            let mut loss = LossBreakdown::zero(lambda);
            for ex in chunk {
                let l = example_grad(ex, params, lambda, weight, &mut g)?;
                loss.accumulate(&l, weight);
            }
            Ok((g, loss))
        })
        .collect();
    let mut grad = params.zeros_like();
    let mut loss = LossBreakdown::zero(if params.head_kind() == HeadKind::Joint { lambda } else { 1.0 });
    for part in partials {
        let (g, l) = part?;
        grad.add_scaled(&g, 1.0);
        loss.accumulate(&l, 1.0);
    }
    Ok((grad, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderConfig, HeadKind};
    use crate::taxonomy::ClassCode;

    #[test]
    fn cross_entropy_values() {
        assert!((cross_entropy(&[0.0, 0.0, 0.0], 1) - 3f64.ln()).abs() < 1e-15);
        let tiny = cross_entropy(&[1000.0, 0.0], 0);
        assert!(tiny.is_finite() && tiny.abs() < 1e-300);
        // -ln σ(-10) = 10 + ln(1 + e^-10)
        let want = 10.0 + (-10f64).exp().ln_1p();
        assert!((cross_entropy(&[0.0, 10.0], 0) - want).abs() < 1e-12);
        assert!((cross_entropy(&[0.0, 10.0], 0) - 10.0000454).abs() < 1e-7);
    }

    #[test]
    fn softmax_sums_to_one() {
        for logits in [vec![1.0, 2.0, 3.0], vec![-1e3, 0.0, 1e3], vec![0.5; 81]] {
            let s: f64 = softmax(&logits).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            let l: f64 = log_softmax(&logits).iter().map(|x| x.exp()).sum();
            assert!((l - 1.0).abs() < 1e-9);
        }
    }

    fn toy_params() -> ModelParams {
        let cfg = EncoderConfig { vocab_size: 3, dim: 2, heads: 1, window: 4 };
        let mut p = ModelParams::init(cfg, HeadKind::Joint, 0).unwrap();
        if let Heads::Joint { ner, cls } = &mut p.heads {
            ner.w1 = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]);
            ner.b1 = Matrix::from_rows(&[vec![0.1, -0.2]]);
            ner.w2 = Matrix::from_rows(&[vec![1.0, 0.0, -1.0], vec![0.5, 2.0, 0.0]]);
            ner.b2 = Matrix::from_rows(&[vec![0.0, 0.3, -0.3]]);
            cls.w1 = Matrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, 1.0]]);
            cls.b1 = Matrix::zeros(1, 2);
            cls.w2 = Matrix::zeros(2, 40);
            cls.w2.set(0, 7, 1.0);
            cls.w2.set(1, 9, -2.0);
            cls.b2 = Matrix::zeros(1, 40);
        }
        p
    }

    #[test]
    fn ner_head_hand_computed() {
        let p = toy_params();
        let v = TokenVectors(Matrix::from_rows(&[vec![1.0, 0.0]]));
        let logits = ner_logits(&v, &p).unwrap();
        // hidden = tanh((0.5, -1.0) + (0.1, -0.2)) = tanh(0.6), tanh(-1.2)
        let (h0, h1) = (0.6f64.tanh(), (-1.2f64).tanh());
        let want = [h0 + 0.5 * h1, 2.0 * h1 + 0.3, -h0 - 0.3];
        for j in 0..3 {
            assert!((logits.get(0, j) - want[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn cls_head_hand_computed() {
        let p = toy_params();
        let logits = cls_logits(&[1.0, 0.0], &p).unwrap();
        assert_eq!(logits.len(), 40);
        let (h0, h1) = (1f64.tanh(), 1f64.tanh());
        assert!((logits[7] - h0).abs() < 1e-12);
        assert!((logits[9] + 2.0 * h1).abs() < 1e-12);
        assert_eq!(logits[0], 0.0);
        assert!(cls_logits(&[1.0], &p).is_err());
    }

    #[test]
    fn affine_identity_with_zero_weights() {
        let mut p = toy_params().zeros_like();
        if let Heads::Joint { ner, cls } = &mut p.heads {
            ner.b2 = Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]);
            cls.b2.set(0, 5, 1.0);
        }
        let v = TokenVectors(Matrix::from_rows(&[vec![3.0, -2.0], vec![0.1, 0.2]]));
        let logits = ner_logits(&v, &p).unwrap();
        assert_eq!(logits.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(logits.row(1), &[1.0, 0.0, 0.0]);
        let c = cls_logits(&[4.0, 4.0], &p).unwrap();
        let best = (0..40).max_by(|&a, &b| c[a].total_cmp(&c[b])).unwrap();
        assert_eq!(ClassCode::from_index(best).unwrap(), ClassCode::from_index(5).unwrap());
    }

    #[test]
    fn tanh_saturation_bound() {
        let p = toy_params();
        let mut big = p.clone();
        let mut bigger = p.clone();
        if let (Heads::Joint { ner: a, .. }, Heads::Joint { ner: b, .. }) = (&mut big.heads, &mut bigger.heads) {
            a.w1.scale(1e6);
            a.b1.data_mut().fill(0.0);
            b.w1.scale(1e7);
            b.b1.data_mut().fill(0.0);
        }
        let v = TokenVectors(Matrix::from_rows(&[vec![1.0, 0.5]]));
        let la = ner_logits(&v, &big).unwrap();
        let lb = ner_logits(&v, &bigger).unwrap();
        for j in 0..3 {
            assert!((la.get(0, j) - lb.get(0, j)).abs() < 1e-6);
        }
    }

    #[test]
    fn pooling() {
        let v = TokenVectors(Matrix::from_rows(&[vec![0.3, -0.0], vec![1.0, 1.0], vec![3.0, 3.0]]));
        let single = pool_span(&v, Span::new(0, 0)).unwrap();
        assert_eq!(single[0].to_bits(), 0.3f64.to_bits());
        assert_eq!(single[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(pool_span(&v, Span::new(1, 2)).unwrap(), vec![2.0, 2.0]);
        let swapped = TokenVectors(Matrix::from_rows(&[vec![0.3, 0.0], vec![3.0, 3.0], vec![1.0, 1.0]]));
        assert_eq!(pool_span(&swapped, Span::new(1, 2)).unwrap(), vec![2.0, 2.0]);
        assert!(matches!(pool_span(&v, Span::new(2, 3)), Err(ModelError::OutOfRange { .. })));
    }

    #[test]
    fn chunking_clips_entities() {
        let text = "a b c d e";
        let tokens = crate::corpus::tokenize(text);
        let class: ClassCode = "S1".parse().unwrap();
        let s = AnnotatedSentence::new(
            text,
            tokens,
            vec![Entity { span: Span::new(1, 2), class }, Entity { span: Span::new(4, 4), class }],
        )
        .unwrap();
        let vocab = Vocab::from_corpus(std::slice::from_ref(&s));
        let chunks = Example::from_sentence(&s, &vocab, 2);
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks[0].bio, vec![BioLabel::O, BioLabel::B]);
        assert_eq!(chunks[1].bio, vec![BioLabel::B, BioLabel::O]);
        assert_eq!(chunks[2].bio, vec![BioLabel::B]);
        assert_eq!(chunks[1].entities[0].span, Span::new(0, 0));
    }
}
