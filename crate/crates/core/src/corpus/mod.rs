//! Tokenization and distant-supervision annotation.
//!
//! Sentences are split into word and punctuation tokens, taxonomy surface
//! forms are matched over the token sequence, and the surviving matches are
//! written out as BIO tags plus `(span, class)` entities.

mod io;
mod matcher;
mod synthetic;
mod tokenize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{ClassCode, NUM_CLASSES};

pub use io::{read_corpus_jsonl, read_raw_sentences, to_conll, write_corpus_jsonl, LabelScheme};
pub use matcher::{annotate, annotate_text, build_matcher, CandidateMatch, Matcher, Pattern};
pub use synthetic::{generate_jobs, generate_synthetic_corpus, SyntheticConfig};
pub use tokenize::tokenize;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("entities overlap: {0} and {1}")]
    Overlap(Span, Span),
    #[error("span {span} out of range for {n_tokens} tokens")]
    OutOfRange { span: Span, n_tokens: usize },
    #[error("taxonomy contains no surface forms")]
    EmptyTaxonomy,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("malformed sentence record at line {line}: {reason}")]
    MalformedSentence { line: usize, reason: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub fn kind(&self) -> &'static str {
        match self {
            CorpusError::Overlap(..) => "OverlapError",
            CorpusError::OutOfRange { .. } => "OutOfRange",
            CorpusError::EmptyTaxonomy => "EmptyTaxonomy",
            CorpusError::EmptyDataset => "EmptyDataset",
            CorpusError::MalformedSentence { .. } => "MalformedSentence",
            CorpusError::Io { .. } => "Io",
        }
    }
}

/// A token with character (not byte) offsets into its sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(String, usize, usize)", into = "(String, usize, usize)")]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl From<(String, usize, usize)> for Token {
    fn from((text, start, end): (String, usize, usize)) -> Self {
        Token { text, start, end }
    }
}

impl From<Token> for (String, usize, usize) {
    fn from(t: Token) -> Self {
        (t.text, t.start, t.end)
    }
}

/// Inclusive token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub first: usize,
    pub last: usize,
}

impl Span {
    pub fn new(first: usize, last: usize) -> Span {
        debug_assert!(first <= last);
        Span { first, last }
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.first <= other.last && other.first <= self.last
    }

    pub fn shift(self, offset: usize) -> Span {
        Span { first: self.first + offset, last: self.last + offset }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.first, self.last)
    }
}

/// Per-token extraction tag. Index order O=0, B=1, I=2 is frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BioLabel {
    O,
    B,
    I,
}

impl BioLabel {
    pub const ALL: [BioLabel; 3] = [BioLabel::O, BioLabel::B, BioLabel::I];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<BioLabel> {
        BioLabel::ALL.get(i).copied()
    }

    pub fn is_entity(self) -> bool {
        self != BioLabel::O
    }
}

impl fmt::Display for BioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BioLabel::O => "O",
            BioLabel::B => "B",
            BioLabel::I => "I",
        })
    }
}

/// A classified entity mention, serialized as `[first, last, class]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize, ClassCode)", into = "(usize, usize, ClassCode)")]
pub struct Entity {
    pub span: Span,
    pub class: ClassCode,
}

impl From<(usize, usize, ClassCode)> for Entity {
    fn from((first, last, class): (usize, usize, ClassCode)) -> Self {
        Entity { span: Span { first, last }, class }
    }
}

impl From<Entity> for (usize, usize, ClassCode) {
    fn from(e: Entity) -> Self {
        (e.span.first, e.span.last, e.class)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub text: String,
    pub tokens: Vec<Token>,
    pub bio: Vec<BioLabel>,
    pub entities: Vec<Entity>,
}

impl AnnotatedSentence {
    /// Builds a sentence from tokens and entities, deriving the BIO tags.
    pub fn new(
        text: impl Into<String>,
        tokens: Vec<Token>,
        mut entities: Vec<Entity>,
    ) -> Result<AnnotatedSentence, CorpusError> {
        entities.sort_by_key(|e| e.span);
        let spans: Vec<Span> = entities.iter().map(|e| e.span).collect();
        let bio = encode_bio(&spans, tokens.len())?;
        Ok(AnnotatedSentence { text: text.into(), tokens, bio, entities })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn spans(&self) -> Vec<Span> {
        self.entities.iter().map(|e| e.span).collect()
    }

    /// Checks every structural invariant of an annotated sentence.
    pub fn validate(&self) -> Result<(), String> {
        if self.bio.len() != self.tokens.len() {
            return Err(format!(
                "{} BIO labels for {} tokens",
                self.bio.len(),
                self.tokens.len()
            ));
        }
        let mut prev_end = 0;
        for (i, t) in self.tokens.iter().enumerate() {
            if t.start >= t.end {
                return Err(format!("token {i} has empty extent"));
            }
            if i > 0 && t.start < prev_end {
                return Err(format!("token {i} overlaps its predecessor"));
            }
            prev_end = t.end;
        }
        if self.entities.windows(2).any(|w| w[0].span.first >= w[1].span.first) {
            return Err("entities not sorted by first token".into());
        }
        let encoded = encode_bio(&self.spans(), self.tokens.len()).map_err(|e| e.to_string())?;
        if encoded != self.bio {
            return Err("BIO labels disagree with entity spans".into());
        }
        Ok(())
    }

    pub fn surface(&self, span: Span) -> String {
        self.tokens[span.first..=span.last]
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// First token of each span becomes B, the rest of the span I, all else O.
pub fn encode_bio(spans: &[Span], n_tokens: usize) -> Result<Vec<BioLabel>, CorpusError> {
    let mut labels = vec![BioLabel::O; n_tokens];
    for &span in spans {
        if span.first > span.last || span.last >= n_tokens {
            return Err(CorpusError::OutOfRange { span, n_tokens });
        }
        if labels[span.first..=span.last].iter().any(|l| l.is_entity()) {
            let other = spans
                .iter()
                .copied()
                .find(|s| *s != span && s.overlaps(&span))
                .unwrap_or(span);
            return Err(CorpusError::Overlap(other, span));
        }
        labels[span.first] = BioLabel::B;
        for l in &mut labels[span.first + 1..=span.last] {
            *l = BioLabel::I;
        }
    }
    Ok(labels)
}

/// Number of labels in the class-specific tagging scheme: O plus B-c and I-c
/// for each class.
pub const NUM_ALLCLASS_LABELS: usize = 1 + 2 * NUM_CLASSES;

/// Class-specific tag (`O`, `B-S1`, `I-K06`, ...). Index 0 is O, `1 + 2c` is
/// B of class index c and `2 + 2c` is I of class index c.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AllClassLabel(u8);

impl AllClassLabel {
    pub const OUTSIDE: AllClassLabel = AllClassLabel(0);

    pub fn begin(class: ClassCode) -> AllClassLabel {
        AllClassLabel(1 + 2 * class.index() as u8)
    }

    pub fn inside(class: ClassCode) -> AllClassLabel {
        AllClassLabel(2 + 2 * class.index() as u8)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn from_index(i: usize) -> Option<AllClassLabel> {
        (i < NUM_ALLCLASS_LABELS).then_some(AllClassLabel(i as u8))
    }

    pub fn bio(self) -> BioLabel {
        match self.0 {
            0 => BioLabel::O,
            n if n % 2 == 1 => BioLabel::B,
            _ => BioLabel::I,
        }
    }

    pub fn class(self) -> Option<ClassCode> {
        match self.0 {
            0 => None,
            n => ClassCode::from_index((n as usize - 1) / 2),
        }
    }
}

impl fmt::Display for AllClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.class() {
            None => f.write_str("O"),
            Some(c) => write!(f, "{}-{}", self.bio(), c),
        }
    }
}

impl FromStr for AllClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(AllClassLabel::OUTSIDE);
        }
        let (tag, code) = s.split_once('-').ok_or_else(|| format!("bad label {s:?}"))?;
        let class: ClassCode = code.parse().map_err(|_| format!("bad class in {s:?}"))?;
        match tag {
            "B" => Ok(AllClassLabel::begin(class)),
            "I" => Ok(AllClassLabel::inside(class)),
            _ => Err(format!("bad tag in {s:?}")),
        }
    }
}

/// Projects a sentence's annotation onto the class-specific tag space.
pub fn to_allclass_labels(sentence: &AnnotatedSentence) -> Vec<AllClassLabel> {
    allclass_from_entities(&sentence.entities, sentence.len())
}

pub fn allclass_from_entities(entities: &[Entity], n_tokens: usize) -> Vec<AllClassLabel> {
    let mut labels = vec![AllClassLabel::OUTSIDE; n_tokens];
    for e in entities {
        labels[e.span.first] = AllClassLabel::begin(e.class);
        for l in &mut labels[e.span.first + 1..=e.span.last] {
            *l = AllClassLabel::inside(e.class);
        }
    }
    labels
}

/// Inverse of [`to_allclass_labels`] on well-formed sequences.
pub fn from_allclass(labels: &[AllClassLabel]) -> (Vec<BioLabel>, Vec<Entity>) {
    let entities: Vec<Entity> = crate::inference::decode_allclass(labels)
        .into_iter()
        .map(|(span, class)| Entity { span, class })
        .collect();
    let spans: Vec<Span> = entities.iter().map(|e| e.span).collect();
    let bio = encode_bio(&spans, labels.len()).expect("decoded spans are disjoint");
    (bio, entities)
}
