//! Two-step prediction: tag every token, decode BIO spans, then classify each
//! decoded span from the mean of its encoded token vectors. Token vectors are
//! computed once and shared by both steps.
//!
//! Inputs longer than the context window are split into window-sized chunks
//! without overlap; entities never cross a chunk boundary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, AllClassLabel, BioLabel, Span, Token, NUM_ALLCLASS_LABELS};
use crate::model::{
    allclass_logits, cls_logits, encode, ner_logits, pool_span, softmax, Matrix, ModelError,
    ModelParams, TokenVectors, TrainedModel,
};
use crate::taxonomy::{ClassCode, NUM_CLASSES};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("no model loaded")]
    ModelNotLoaded,
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl InferenceError {
    pub fn kind(&self) -> &'static str {
        match self {
            InferenceError::ModelNotLoaded => "ModelNotLoaded",
            InferenceError::Model(e) => e.kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedEntity {
    pub span: Span,
    pub class: ClassCode,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Prediction {
    /// Raw per-token tags (arg-max of the tagging head).
    pub bio: Vec<BioLabel>,
    /// Sorted and non-overlapping.
    pub entities: Vec<PredictedEntity>,
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Each `B` opens a span that extends over the run of `I` tags directly
/// following it. `I` tags without an opening `B` are ignored.
pub fn decode_bio(labels: &[BioLabel]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] == BioLabel::B {
            let mut j = i;
            while j + 1 < labels.len() && labels[j + 1] == BioLabel::I {
                j += 1;
            }
            spans.push(Span::new(i, j));
            i = j + 1;
        } else {
            i += 1;
        }
    }
    spans
}

/// A span is `B-c` followed by consecutive `I-c` of the same class `c`. An `I`
/// of another class ends the span and is dropped.
pub fn decode_allclass(labels: &[AllClassLabel]) -> Vec<(Span, ClassCode)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        match (labels[i].bio(), labels[i].class()) {
            (BioLabel::B, Some(class)) => {
                let mut j = i;
                while j + 1 < labels.len() && labels[j + 1] == AllClassLabel::inside(class) {
                    j += 1;
                }
                out.push((Span::new(i, j), class));
                i = j + 1;
            }
            _ => i += 1,
        }
    }
    out
}

/// Arg-max BIO tag per token.
pub fn argmax_ner(vectors: &TokenVectors, params: &ModelParams) -> Result<Vec<BioLabel>, ModelError> {
    let logits = ner_logits(vectors, params)?;
    Ok((0..logits.rows())
        .map(|i| BioLabel::from_index(argmax(logits.row(i))).expect("three columns"))
        .collect())
}

/// Classifies each span from its pooled vector. Returns the arg-max class and
/// its softmax probability.
pub fn classify_spans(
    vectors: &TokenVectors,
    spans: &[Span],
    params: &ModelParams,
) -> Result<Vec<PredictedEntity>, ModelError> {
    spans
        .iter()
        .map(|&span| {
            let logits = cls_logits(&pool_span(vectors, span)?, params)?;
            let probs = softmax(&logits);
            let best = argmax(&logits);
            Ok(PredictedEntity {
                span,
                class: ClassCode::from_index(best).expect("40 columns"),
                probability: probs[best],
            })
        })
        .collect()
}

fn predict_chunk(vectors: &TokenVectors, params: &ModelParams) -> Result<Prediction, ModelError> {
    match params.head_kind() {
        crate::model::HeadKind::Joint => {
            let bio = argmax_ner(vectors, params)?;
            let entities = classify_spans(vectors, &decode_bio(&bio), params)?;
            Ok(Prediction { bio, entities })
        }
        crate::model::HeadKind::AllClass => {
            let logits = allclass_logits(vectors, params)?;
            let mut labels = Vec::with_capacity(logits.rows());
            let mut probs = Vec::with_capacity(logits.rows());
            for i in 0..logits.rows() {
                let best = argmax(logits.row(i));
                labels.push(AllClassLabel::from_index(best).expect("81 columns"));
                probs.push(softmax(logits.row(i))[best]);
            }
            let entities = decode_allclass(&labels)
                .into_iter()
                .map(|(span, class)| PredictedEntity {
                    span,
                    class,
                    probability: probs[span.first..=span.last].iter().sum::<f64>() / span.len() as f64,
                })
                .collect();
            Ok(Prediction { bio: labels.iter().map(|l| l.bio()).collect(), entities })
        }
    }
}

/// Predicts over tokens of any length, chunking at the context window.
pub fn predict_tokens(tokens: &[Token], model: &TrainedModel) -> Result<Prediction, InferenceError> {
    let window = model.params.config.window;
    let mut out = Prediction::default();
    for (c, chunk) in tokens.chunks(window).enumerate() {
        let vectors = model.encode_tokens(chunk)?;
        let part = predict_chunk(&vectors, &model.params)?;
        out.bio.extend(part.bio);
        out.entities.extend(part.entities.into_iter().map(|e| PredictedEntity {
            span: e.span.shift(c * window),
            ..e
        }));
    }
    Ok(out)
}

pub fn predict(text: &str, model: &TrainedModel) -> Result<Prediction, InferenceError> {
    predict_tokens(&tokenize(text), model)
}

/// Detected span handed from the detection stage to the classification stage.
struct DetectedSpan {
    first: usize,
    last: usize,
    surface: String,
}

/// Baseline pipeline with the two steps run as separate models: the detector
/// encodes the sentence and emits span records, then the classifier is
/// invoked once per record, re-tokenizing and re-encoding the sentence
/// context of that span. Produces the same prediction as [`predict`].
pub fn predict_two_pass(text: &str, model: &TrainedModel) -> Result<Prediction, InferenceError> {
    let window = model.params.config.window;

    // detection stage
    let tokens = tokenize(text);
    let mut bio = Vec::with_capacity(tokens.len());
    let mut detected = Vec::new();
    for (c, chunk) in tokens.chunks(window).enumerate() {
        let vectors = model.encode_tokens(chunk)?;
        let tags = argmax_ner(&vectors, &model.params)?;
        for span in decode_bio(&tags) {
            let surface: Vec<&str> = chunk[span.first..=span.last].iter().map(|t| t.text.as_str()).collect();
            detected.push(DetectedSpan {
                first: c * window + span.first,
                last: c * window + span.last,
                surface: surface.join(" "),
            });
        }
        bio.extend(tags);
    }

    // classification stage
    let mut entities = Vec::with_capacity(detected.len());
    for record in &detected {
        let tokens = tokenize(text);
        let lo = record.first / window * window;
        let chunk = &tokens[lo..(lo + window).min(tokens.len())];
        let span = Span::new(record.first - lo, record.last - lo);
        debug_assert_eq!(
            record.surface,
            chunk[span.first..=span.last].iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
        );
        let vectors = model.encode_tokens(chunk)?;
        let e = classify_spans(&vectors, &[span], &model.params)?[0];
        entities.push(PredictedEntity { span: e.span.shift(lo), ..e });
    }
    Ok(Prediction { bio, entities })
}

/// Encodes a sentence of any length chunk by chunk and stacks the rows.
pub fn encode_long(tokens: &[Token], model: &TrainedModel) -> Result<TokenVectors, ModelError> {
    let window = model.params.config.window;
    let dim = model.params.config.dim;
    let mut rows = Vec::with_capacity(tokens.len() * dim);
    for chunk in tokens.chunks(window) {
        let ids = model.token_ids(chunk);
        rows.extend_from_slice(encode(&ids, &model.params)?.0.data());
    }
    Ok(TokenVectors(Matrix::from_vec(tokens.len(), dim, rows)))
}

/// Class assigned to each given (gold) span.
///
/// The joint model classifies the pooled span vector. The all-class model
/// picks the class with the largest summed `B-c` + `I-c` probability over the
/// span's tokens.
pub fn classify_given_spans(
    tokens: &[Token],
    spans: &[Span],
    model: &TrainedModel,
) -> Result<Vec<ClassCode>, ModelError> {
    if spans.is_empty() {
        return Ok(Vec::new());
    }
    let vectors = encode_long(tokens, model)?;
    match model.head_kind() {
        crate::model::HeadKind::Joint => Ok(classify_spans(&vectors, spans, &model.params)?
            .into_iter()
            .map(|e| e.class)
            .collect()),
        crate::model::HeadKind::AllClass => {
            let logits = allclass_logits(&vectors, &model.params)?;
            let probs: Vec<Vec<f64>> = (0..logits.rows()).map(|i| softmax(logits.row(i))).collect();
            Ok(spans
                .iter()
                .map(|span| {
                    let mut mass = [0.0; NUM_CLASSES];
                    for p in &probs[span.first..=span.last] {
                        debug_assert_eq!(p.len(), NUM_ALLCLASS_LABELS);
                        for (c, m) in mass.iter_mut().enumerate() {
                            *m += p[1 + 2 * c] + p[2 + 2 * c];
                        }
                    }
                    ClassCode::from_index(argmax(&mass)).expect("40 classes")
                })
                .collect())
        }
    }
}

/// Output record for one predicted sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub text: String,
    pub entities: Vec<EntityRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub first: usize,
    pub last: usize,
    pub surface: String,
    pub class: ClassCode,
    pub prob: f64,
}

impl PredictionRecord {
    pub fn new(text: &str, tokens: &[Token], prediction: &Prediction) -> PredictionRecord {
        let entities = prediction
            .entities
            .iter()
            .map(|e| {
                let chars: Vec<char> = text.chars().collect();
                let (start, end) = (tokens[e.span.first].start, tokens[e.span.last].end);
                EntityRecord {
                    first: e.span.first,
                    last: e.span.last,
                    surface: chars[start..end].iter().collect(),
                    class: e.class,
                    prob: e.probability,
                }
            })
            .collect();
        PredictionRecord { text: text.to_string(), entities }
    }
}

/// `token<TAB>tag` lines with class-specific tags for predicted entities.
pub fn prediction_to_conll(tokens: &[Token], prediction: &Prediction) -> String {
    let mut labels = vec![AllClassLabel::OUTSIDE; tokens.len()];
    for e in &prediction.entities {
        labels[e.span.first] = AllClassLabel::begin(e.class);
        for l in &mut labels[e.span.first + 1..=e.span.last] {
            *l = AllClassLabel::inside(e.class);
        }
    }
    let mut out = String::new();
    for (t, l) in tokens.iter().zip(labels) {
        out.push_str(&format!("{}\t{}\n", t.text, l));
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::encode_bio;
    use crate::model::{EncoderConfig, HeadKind, Vocab};
    use proptest::prelude::*;
    use BioLabel::*;

    #[test]
    fn decode_examples() {
        assert!(decode_bio(&[O, O, O]).is_empty());
        assert_eq!(decode_bio(&[B, I, I, O, B]), vec![Span::new(0, 2), Span::new(4, 4)]);
        assert_eq!(decode_bio(&[I, I, O, B, I]), vec![Span::new(3, 4)]);
        assert_eq!(decode_bio(&[B, B, I]), vec![Span::new(0, 0), Span::new(1, 2)]);
        assert!(decode_bio(&[]).is_empty());
    }

    #[test]
    fn decode_allclass_examples() {
        let l = |s: &str| s.parse::<AllClassLabel>().unwrap();
        let s1: ClassCode = "S1".parse().unwrap();
        assert_eq!(decode_allclass(&[l("B-S1"), l("I-S1"), l("O")]), vec![(Span::new(0, 1), s1)]);
        assert_eq!(decode_allclass(&[l("B-S1"), l("I-K00")]), vec![(Span::new(0, 0), s1)]);
        assert!(decode_allclass(&[l("O"), l("O")]).is_empty());
        assert!(decode_allclass(&[l("I-S1"), l("O")]).is_empty());
    }

    #[test]
    fn argmax_ties_take_smallest_index() {
        assert_eq!(argmax(&[1.0, 1.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 40]), 0);
    }

    fn model(head: HeadKind, seed: u64) -> TrainedModel {
        let vocab = Vocab::from_keys(["vi", "søger", "en", "it", "sikkerhed", "kok", "."]);
        let cfg = EncoderConfig { vocab_size: vocab.len(), dim: 8, heads: 2, window: 4 };
        TrainedModel::new(vocab, crate::model::ModelParams::init(cfg, head, seed).unwrap()).unwrap()
    }

    #[test]
    fn empty_text() {
        let m = model(HeadKind::Joint, 1);
        assert_eq!(predict("", &m).unwrap(), Prediction::default());
        assert_eq!(predict_two_pass("  ", &m).unwrap(), Prediction::default());
    }

    #[test]
    fn predict_is_the_composition_of_its_steps() {
        for seed in 0..20 {
            let m = model(HeadKind::Joint, seed);
            let tokens = tokenize("vi søger en kok");
            let vectors = m.encode_tokens(&tokens).unwrap();
            let composed = classify_spans(&vectors, &decode_bio(&argmax_ner(&vectors, &m.params).unwrap()), &m.params).unwrap();
            let p = predict("vi søger en kok", &m).unwrap();
            assert_eq!(p.entities, composed);
            assert_eq!(p, predict("vi søger en kok", &m).unwrap());
        }
    }

    #[test]
    fn two_pass_matches_single_pass_across_chunks() {
        for seed in 0..20 {
            for head in [HeadKind::Joint] {
                let m = model(head, seed);
                let text = "vi søger en kok . it sikkerhed en kok vi";
                assert_eq!(predict(text, &m).unwrap(), predict_two_pass(text, &m).unwrap());
            }
        }
    }

    #[test]
    fn chunked_entities_stay_inside_chunks() {
        for seed in 0..30 {
            let m = model(HeadKind::Joint, seed);
            let p = predict("vi søger en kok it sikkerhed en kok vi søger", &m).unwrap();
            assert_eq!(p.bio.len(), 10);
            for e in &p.entities {
                assert_eq!(e.span.first / 4, e.span.last / 4);
                assert!((0.0..=1.0).contains(&e.probability));
            }
        }
    }

    #[test]
    fn allclass_prediction_is_consistent() {
        for seed in 0..10 {
            let m = model(HeadKind::AllClass, seed);
            let p = predict("it sikkerhed en kok", &m).unwrap();
            for e in &p.entities {
                assert_eq!(p.bio[e.span.first], B);
                assert!(p.bio[e.span.first + 1..=e.span.last].iter().all(|&l| l == I));
            }
            let classes = classify_given_spans(&tokenize("it sikkerhed en kok"), &[Span::new(0, 1)], &m).unwrap();
            assert_eq!(classes.len(), 1);
        }
    }

    #[test]
    fn record_surface_uses_original_text() {
        let tokens = tokenize("Kan IT  sikkerhed.");
        let p = Prediction {
            bio: vec![O, B, I, O],
            entities: vec![PredictedEntity { span: Span::new(1, 2), class: "K06".parse().unwrap(), probability: 0.5 }],
        };
        let r = PredictionRecord::new("Kan IT  sikkerhed.", &tokens, &p);
        assert_eq!(r.entities[0].surface, "IT  sikkerhed");
        assert_eq!(prediction_to_conll(&tokens, &p), "Kan\tO\nIT\tB-K06\nsikkerhed\tI-K06\n.\tO\n\n");
    }

    fn span_layout() -> impl Strategy<Value = (usize, Vec<Span>)> {
        (1usize..40).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 1usize..5), 0..10).prop_map(move |raw| {
                let mut spans: Vec<Span> = Vec::new();
                let mut sorted = raw;
                sorted.sort();
                for (first, len) in sorted {
                    let last = (first + len - 1).min(n - 1);
                    if spans.last().is_none_or(|s| s.last < first) {
                        spans.push(Span::new(first, last));
                    }
                }
                (n, spans)
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn decode_inverts_encode((n, spans) in span_layout()) {
            let labels = encode_bio(&spans, n).unwrap();
            prop_assert_eq!(decode_bio(&labels), spans);
        }

        #[test]
        fn decode_never_overlaps(raw in proptest::collection::vec(0usize..3, 0..60)) {
            let labels: Vec<BioLabel> = raw.into_iter().map(|i| BioLabel::from_index(i).unwrap()).collect();
            let spans = decode_bio(&labels);
            for w in spans.windows(2) {
                prop_assert!(w[0].last < w[1].first);
            }
            for s in &spans {
                prop_assert_eq!(labels[s.first], B);
                prop_assert!(s.last < labels.len());
            }
        }
    }
}
