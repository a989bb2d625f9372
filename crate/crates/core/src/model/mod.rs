//! Reference encoder, the two prediction heads and the joint loss.
//!
//! Tokens are embedded, summed with learned position embeddings and passed
//! through one multi-head self-attention layer with a residual connection.
//! On top of the encoded token vectors sit:
//!
//! * a tagging head mapping every token vector to BIO logits, and
//! * a classification head mapping the mean vector of an entity span to
//!   logits over the 40 competence classes.
//!
//! Both heads are single-hidden-layer `tanh` networks. The all-class
//! baseline replaces them with one tagging head over 81 class-specific tags.

mod checkpoint;
mod embeddings;
mod encoder;
mod loss;
mod tensor;
mod vocab;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Span, Token, NUM_ALLCLASS_LABELS};
use crate::taxonomy::NUM_CLASSES;

pub use checkpoint::{
    checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
};
pub use embeddings::load_pretrained_embeddings;
pub use encoder::{encode, EncoderCache};
pub use loss::{
    allclass_logits, batch_grad, cls_logits, cross_entropy, example_loss, joint_loss, log_softmax,
    ner_logits, pool_span, softmax, Example, LossBreakdown,
};
pub use tensor::Matrix;
pub use vocab::{Vocab, UNK, UNK_TOKEN};

/// Number of BIO tags.
pub const NUM_BIO: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sentence of {len} tokens exceeds the context window of {window}")]
    SentenceTooLong { len: usize, window: usize },
    #[error("span {span} out of range for {n_tokens} tokens")]
    OutOfRange { span: Span, n_tokens: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("embedding dimension mismatch at line {line}: expected {expected}, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("malformed file at line {line}: {reason}")]
    MalformedFile { line: usize, reason: String },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("model has a {found} head, operation needs a {expected} head")]
    WrongHead { expected: HeadKind, found: HeadKind },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelError::SentenceTooLong { .. } => "SentenceTooLong",
            ModelError::OutOfRange { .. } => "OutOfRange",
            ModelError::ShapeMismatch { .. } => "ShapeMismatch",
            ModelError::DimensionMismatch { .. } => "DimensionMismatch",
            ModelError::MalformedFile { .. } => "MalformedFile",
            ModelError::InvalidConfig(_) => "InvalidConfig",
            ModelError::BadCheckpoint(_) => "BadCheckpoint",
            ModelError::WrongHead { .. } => "WrongHead",
            ModelError::Io { .. } => "Io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size == 0 || self.dim == 0 || self.heads == 0 || self.window == 0 {
            return Err(ModelError::InvalidConfig("all sizes must be at least 1".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(ModelError::InvalidConfig(format!(
                "dimension {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Which output heads sit on the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// BIO tagging head plus span classification head.
    Joint,
    /// A single tagging head over the 81 class-specific tags.
    AllClass,
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadKind::Joint => "joint",
            HeadKind::AllClass => "all-class",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub embeddings: Matrix,
    pub positions: Matrix,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub output: Matrix,
}

/// `tanh` hidden layer followed by a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl FeedForward {
    fn init(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> FeedForward {
        FeedForward {
            w1: Matrix::xavier(input, hidden, rng),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::xavier(hidden, output, rng),
            b2: Matrix::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }

    /// Returns the hidden activations and the logits.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut hidden = self.b1.row(0).to_vec();
        tensor::add_vec_matmul(&mut hidden, x, &self.w1);
        hidden.iter_mut().for_each(|h| *h = h.tanh());
        let mut out = self.b2.row(0).to_vec();
        tensor::add_vec_matmul(&mut out, &hidden, &self.w2);
        (hidden, out)
    }

    /// Accumulates parameter gradients into `grad` and input gradients into `dx`.
    pub fn backward(
        &self,
        x: &[f64],
        hidden: &[f64],
        d_out: &[f64],
        grad: &mut FeedForward,
        dx: &mut [f64],
    ) {
        tensor::add_outer(&mut grad.w2, hidden, d_out);
        for (g, d) in grad.b2.row_mut(0).iter_mut().zip(d_out) {
            *g += d;
        }
        let mut d_hidden = vec![0.0; hidden.len()];
        tensor::add_matmul_vec(&mut d_hidden, &self.w2, d_out);
        for (dh, h) in d_hidden.iter_mut().zip(hidden) {
            *dh *= 1.0 - h * h;
        }
        tensor::add_outer(&mut grad.w1, x, &d_hidden);
        for (g, d) in grad.b1.row_mut(0).iter_mut().zip(&d_hidden) {
            *g += d;
        }
        tensor::add_matmul_vec(dx, &self.w1, &d_hidden);
    }

    fn tensors(&self) -> [&Matrix; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn field_mut(&mut self, field: &str) -> Option<&mut Matrix> {
        match field {
            "w1" => Some(&mut self.w1),
            "b1" => Some(&mut self.b1),
            "w2" => Some(&mut self.w2),
            "b2" => Some(&mut self.b2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Heads {
    Joint { ner: FeedForward, cls: FeedForward },
    AllClass { tagger: FeedForward },
}

/// Every trainable tensor of a model. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub encoder: EncoderParams,
    pub heads: Heads,
}

impl ModelParams {
    /// Xavier-uniform weights and zero biases, deterministic in `seed`.
    /// Head hidden layers have the encoder width.
    pub fn init(config: EncoderConfig, head: HeadKind, seed: u64) -> Result<ModelParams, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let encoder = EncoderParams {
            embeddings: Matrix::xavier(config.vocab_size, d, &mut rng),
            positions: Matrix::xavier(config.window, d, &mut rng),
            query: Matrix::xavier(d, d, &mut rng),
            key: Matrix::xavier(d, d, &mut rng),
            value: Matrix::xavier(d, d, &mut rng),
            output: Matrix::xavier(d, d, &mut rng),
        };
        let heads = match head {
            HeadKind::Joint => Heads::Joint {
                ner: FeedForward::init(d, d, NUM_BIO, &mut rng),
                cls: FeedForward::init(d, d, NUM_CLASSES, &mut rng),
            },
            HeadKind::AllClass => Heads::AllClass {
                tagger: FeedForward::init(d, d, NUM_ALLCLASS_LABELS, &mut rng),
            },
        };
        Ok(ModelParams { config, encoder, heads })
    }

    pub fn head_kind(&self) -> HeadKind {
        match self.heads {
            Heads::Joint { .. } => HeadKind::Joint,
            Heads::AllClass { .. } => HeadKind::AllClass,
        }
    }

    /// Same structure, all entries zero.
    pub fn zeros_like(&self) -> ModelParams {
        let mut z = self.clone();
        z.for_each_mut(|_, m| m.data_mut().fill(0.0));
        z
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let e = &self.encoder;
        let mut out = vec![
            ("encoder.embeddings", &e.embeddings),
            ("encoder.positions", &e.positions),
            ("encoder.query", &e.query),
            ("encoder.key", &e.key),
            ("encoder.value", &e.value),
            ("encoder.output", &e.output),
        ];
        match &self.heads {
            Heads::Joint { ner, cls } => {
                let names = ["ner.w1", "ner.b1", "ner.w2", "ner.b2"];
                out.extend(names.into_iter().zip(ner.tensors()));
                let names = ["cls.w1", "cls.b1", "cls.w2", "cls.b2"];
                out.extend(names.into_iter().zip(cls.tensors()));
            }
            Heads::AllClass { tagger } => {
                let names = ["tagger.w1", "tagger.b1", "tagger.w2", "tagger.b2"];
                out.extend(names.into_iter().zip(tagger.tensors()));
            }
        }
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&'static str, &mut Matrix)) {
        let e = &mut self.encoder;
        f("encoder.embeddings", &mut e.embeddings);
        f("encoder.positions", &mut e.positions);
        f("encoder.query", &mut e.query);
        f("encoder.key", &mut e.key);
        f("encoder.value", &mut e.value);
        f("encoder.output", &mut e.output);
        match &mut self.heads {
            Heads::Joint { ner, cls } => {
                for (n, m) in ["ner.w1", "ner.b1", "ner.w2", "ner.b2"].into_iter().zip(ner.tensors_mut()) {
                    f(n, m);
                }
                for (n, m) in ["cls.w1", "cls.b1", "cls.w2", "cls.b2"].into_iter().zip(cls.tensors_mut()) {
                    f(n, m);
                }
            }
            Heads::AllClass { tagger } => {
                let names = ["tagger.w1", "tagger.b1", "tagger.w2", "tagger.b2"];
                for (n, m) in names.into_iter().zip(tagger.tensors_mut()) {
                    f(n, m);
                }
            }
        }
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        let (group, field) = name.split_once('.')?;
        let e = &mut self.encoder;
        match (group, &mut self.heads) {
            ("encoder", _) => match field {
                "embeddings" => Some(&mut e.embeddings),
                "positions" => Some(&mut e.positions),
                "query" => Some(&mut e.query),
                "key" => Some(&mut e.key),
                "value" => Some(&mut e.value),
                "output" => Some(&mut e.output),
                _ => None,
            },
            ("ner", Heads::Joint { ner, .. }) => ner.field_mut(field),
            ("cls", Heads::Joint { cls, .. }) => cls.field_mut(field),
            ("tagger", Heads::AllClass { tagger }) => tagger.field_mut(field),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data().len()).sum()
    }

    /// `self += s * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, s: f64) {
        let others: Vec<&Matrix> = other.tensors().into_iter().map(|(_, m)| m).collect();
        let mut i = 0;
        self.for_each_mut(|_, m| {
            m.add_scaled(others[i], s);
            i += 1;
        });
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().map(|(_, m)| m.norm_sq()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.for_each_mut(|_, m| m.scale(s));
    }

    pub(crate) fn joint_heads(&self) -> Result<(&FeedForward, &FeedForward), ModelError> {
        match &self.heads {
            Heads::Joint { ner, cls } => Ok((ner, cls)),
            Heads::AllClass { .. } => {
                Err(ModelError::WrongHead { expected: HeadKind::Joint, found: HeadKind::AllClass })
            }
        }
    }

    pub(crate) fn allclass_head(&self) -> Result<&FeedForward, ModelError> {
        match &self.heads {
            Heads::AllClass { tagger } => Ok(tagger),
            Heads::Joint { .. } => {
                Err(ModelError::WrongHead { expected: HeadKind::AllClass, found: HeadKind::Joint })
            }
        }
    }
}

/// Encoded token vectors of one sentence, `N × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVectors(pub Matrix);

impl TokenVectors {
    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Parameters together with the vocabulary they were trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub vocab: Vocab,
    pub params: ModelParams,
}

impl TrainedModel {
    pub fn new(vocab: Vocab, params: ModelParams) -> Result<TrainedModel, ModelError> {
        if vocab.len() != params.config.vocab_size {
            return Err(ModelError::ShapeMismatch {
                expected: format!("vocabulary of {}", params.config.vocab_size),
                got: format!("vocabulary of {}", vocab.len()),
            });
        }
        Ok(TrainedModel { vocab, params })
    }

    pub fn head_kind(&self) -> HeadKind {
        self.params.head_kind()
    }

    pub fn token_ids(&self, tokens: &[Token]) -> Vec<usize> {
        self.vocab.ids(tokens)
    }

    /// Encodes a tokenized sentence that fits in the context window.
    pub fn encode_tokens(&self, tokens: &[Token]) -> Result<TokenVectors, ModelError> {
        encode(&self.token_ids(tokens), &self.params)
    }

    pub fn joint_loss(
        &self,
        sentence: &crate::corpus::AnnotatedSentence,
        lambda: f64,
    ) -> Result<LossBreakdown, ModelError> {
        let examples = Example::from_sentence(sentence, &self.vocab, self.params.config.window);
        let mut total = LossBreakdown::zero(lambda);
        for ex in &examples {
            total.accumulate(&example_loss(ex, &self.params, lambda)?, 1.0);
        }
        total.finish(examples.len().max(1) as f64);
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let ok = EncoderConfig { vocab_size: 5, dim: 8, heads: 2, window: 4 };
        assert!(ok.validate().is_ok());
        assert!(EncoderConfig { dim: 7, ..ok }.validate().is_err());
        assert!(EncoderConfig { vocab_size: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn init_is_seeded_and_biases_zero() {
        let cfg = EncoderConfig { vocab_size: 10, dim: 8, heads: 2, window: 6 };
        let a = ModelParams::init(cfg, HeadKind::Joint, 3).unwrap();
        assert_eq!(a, ModelParams::init(cfg, HeadKind::Joint, 3).unwrap());
        assert_ne!(a, ModelParams::init(cfg, HeadKind::Joint, 4).unwrap());
        let bound = (6.0f64 / 16.0).sqrt();
        for (name, m) in a.tensors() {
            if name.ends_with(".b1") || name.ends_with(".b2") {
                assert!(m.data().iter().all(|&x| x == 0.0), "{name}");
            }
            if name == "encoder.query" {
                assert!(m.data().iter().all(|&x| x.abs() <= bound));
            }
        }
        let (_, cls) = a.joint_heads().unwrap();
        assert_eq!(cls.output_dim(), 40);
        let b = ModelParams::init(cfg, HeadKind::AllClass, 3).unwrap();
        assert_eq!(b.allclass_head().unwrap().output_dim(), 81);
        assert!(b.joint_heads().is_err());
    }

    #[test]
    fn tensor_access_by_name() {
        let cfg = EncoderConfig { vocab_size: 4, dim: 4, heads: 1, window: 3 };
        let mut p = ModelParams::init(cfg, HeadKind::Joint, 1).unwrap();
        p.tensor_mut("cls.b2").unwrap().set(0, 5, 2.5);
        let (_, cls) = p.joint_heads().unwrap();
        assert_eq!(cls.b2.get(0, 5), 2.5);
        assert!(p.tensor_mut("nope").is_none());
        assert_eq!(p.tensors().len(), 14);
    }
}
