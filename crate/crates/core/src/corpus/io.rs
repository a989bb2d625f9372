use std::fmt::Write as _;
use std::path::Path;

use super::{to_allclass_labels, AnnotatedSentence, CorpusError};

/// Label column of a CoNLL export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelScheme {
    #[default]
    Bio,
    AllClass,
}

fn read(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
}

/// One JSON record per line.
pub fn write_corpus_jsonl(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&serde_json::to_string(s).expect("sentence serializes"));
        out.push('\n');
    }
    out
}

/// Reads and validates a JSON-lines corpus. Blank lines are skipped.
pub fn read_corpus_jsonl(path: impl AsRef<Path>) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    let text = read(path.as_ref())?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::MalformedSentence { line: i + 1, reason };
        let s: AnnotatedSentence = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        s.validate().map_err(malformed)?;
        out.push(s);
    }
    if out.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    Ok(out)
}

/// One sentence per line; blank lines are dropped.
pub fn read_raw_sentences(path: impl AsRef<Path>) -> Result<Vec<String>, CorpusError> {
    let text = read(path.as_ref())?;
    let lines: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if lines.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    Ok(lines)
}

/// Two-column `token<TAB>label` export, sentences separated by a blank line.
pub fn to_conll(sentences: &[AnnotatedSentence], scheme: LabelScheme) -> String {
    let mut out = String::new();
    for s in sentences {
        let labels: Vec<String> = match scheme {
            LabelScheme::Bio => s.bio.iter().map(|l| l.to_string()).collect(),
            LabelScheme::AllClass => to_allclass_labels(s).iter().map(|l| l.to_string()).collect(),
        };
        for (token, label) in s.tokens.iter().zip(&labels) {
            let _ = writeln!(out, "{}\t{}", token.text, label);
        }
        out.push('\n');
    }
    out
}
