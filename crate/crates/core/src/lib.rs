//! Joint extraction and classification of competence entities (skills,
//! occupations, knowledge areas, languages, transversal competences) from
//! job-posting text.
//!
//! The pipeline is:
//!
//! 1. [`taxonomy`]: load a competence taxonomy of class codes and surface forms.
//! 2. [`corpus`]: tokenize sentences and annotate them with BIO tags and
//!    classes by exact multi-pattern matching of taxonomy forms.
//! 3. [`model`]: a small self-attention encoder with a token-level BIO head and
//!    a span classification head, trained on a weighted sum of both losses.
//! 4. [`training`]: dataset splitting, AdamW and early stopping.
//! 5. [`inference`]: two-step prediction (tag, decode spans, classify spans).
//! 6. [`evaluation`]: token-level extraction F1, support-weighted macro F1 for
//!    classification, and per-job inference timing.
//!
//! The [`cli`] module wires these stages into the `compex` binary.

pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod taxonomy;
pub mod training;

use thiserror::Error;

pub use corpus::{AnnotatedSentence, BioLabel, Span, Token};
pub use inference::Prediction;
pub use model::{HeadKind, ModelParams, TrainedModel};
pub use taxonomy::{ClassCode, Taxonomy};

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Taxonomy(#[from] taxonomy::TaxonomyError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Inference(#[from] inference::InferenceError),
    #[error(transparent)]
    Train(#[from] training::TrainError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
}

/// Whether a failure was caused by bad input data or by the computation itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Data,
    Runtime,
}

impl Error {
    /// Stable, machine-parsable name of the failure.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Taxonomy(e) => e.kind(),
            Error::Corpus(e) => e.kind(),
            Error::Model(e) => e.kind(),
            Error::Inference(e) => e.kind(),
            Error::Train(e) => e.kind(),
            Error::Eval(e) => e.kind(),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self.kind() {
            "DivergedTraining" | "NonFiniteGradient" | "WriteFailed" => ErrorCategory::Runtime,
            _ => ErrorCategory::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
