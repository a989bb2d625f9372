//! Competence taxonomy: the closed set of top-level class codes and the
//! surface forms used for distant-supervision annotation.
//!
//! A taxonomy file holds one JSON record per line:
//!
//! ```text
//! {"id": "e1", "class": "S1", "surface_forms": ["python programmering"], "description": "..."}
//! ```
//!
//! The first surface form of a record is its preferred label, the rest are
//! alternative labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Canonical class codes in lexicographic order. The position of a code in
/// this table is its label index everywhere in the crate.
const CLASS_CODES: [&str; 40] = [
    "C-1", "C0", "C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "C9", "K-1", "K00", "K01", "K02",
    "K03", "K04", "K05", "K06", "K07", "K08", "K09", "K10", "L0", "L1", "S-1", "S1", "S2", "S3",
    "S4", "S5", "S6", "S7", "S8", "T1", "T2", "T3", "T4", "T5", "T6",
];

/// Number of top-level classes.
pub const NUM_CLASSES: usize = CLASS_CODES.len();

static BUNDLED_TOY_TAXONOMY: &str = include_str!("../data/toy_taxonomy.jsonl");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("malformed taxonomy record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("taxonomy contains no entries")]
    EmptyTaxonomy,
    #[error("unknown class code {0:?}")]
    UnknownClass(String),
    #[error("failed to read taxonomy {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TaxonomyError {
    pub fn kind(&self) -> &'static str {
        match self {
            TaxonomyError::MalformedRecord { .. } => "MalformedRecord",
            TaxonomyError::EmptyTaxonomy => "EmptyTaxonomy",
            TaxonomyError::UnknownClass(_) => "UnknownClass",
            TaxonomyError::Io { .. } => "Io",
        }
    }
}

/// One of the 40 top-level competence classes.
///
/// Ordering follows the canonical code string, so `index()` is stable across
/// runs and across checkpoints.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassCode(u8);

impl ClassCode {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn from_index(index: usize) -> Option<ClassCode> {
        (index < NUM_CLASSES).then_some(ClassCode(index as u8))
    }

    pub fn as_str(self) -> &'static str {
        CLASS_CODES[self.index()]
    }
}

impl FromStr for ClassCode {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CLASS_CODES
            .binary_search(&s)
            .map(|i| ClassCode(i as u8))
            .map_err(|_| TaxonomyError::UnknownClass(s.to_string()))
    }
}

impl fmt::Display for ClassCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for ClassCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ClassCode({})", self.as_str())
    }
}

impl Serialize for ClassCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ClassCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All class codes in canonical order.
pub fn class_labels() -> Vec<ClassCode> {
    (0..NUM_CLASSES).map(|i| ClassCode(i as u8)).collect()
}

/// Case-folds and collapses whitespace runs to a single space.
pub fn normalize(form: &str) -> String {
    let lowered = form.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    pub id: String,
    pub class: ClassCode,
    /// Normalized, de-duplicated; the first one is the preferred label.
    pub surface_forms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

/// Which surface forms of an entry take part in matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FormSelection {
    #[default]
    All,
    PreferredOnly,
}

/// One (entry, class) reading of a normalized surface form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormCandidate {
    pub entry_id: String,
    pub class: ClassCode,
}

/// A validated taxonomy. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    entries: Vec<TaxonomyEntry>,
    form_index: BTreeMap<String, Vec<FormCandidate>>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    class: Option<String>,
    surface_forms: Option<Vec<String>>,
    description: Option<String>,
}

impl Taxonomy {
    /// Validates and indexes entries. Surface forms are normalized here.
    pub fn from_entries(entries: Vec<TaxonomyEntry>) -> Result<Taxonomy, TaxonomyError> {
        let mut ids = BTreeSet::new();
        let mut cleaned = Vec::with_capacity(entries.len());
        for (i, mut entry) in entries.into_iter().enumerate() {
            let line = i + 1;
            if entry.id.is_empty() {
                return Err(TaxonomyError::MalformedRecord { line, reason: "empty id".into() });
            }
            if !ids.insert(entry.id.clone()) {
                return Err(TaxonomyError::MalformedRecord {
                    line,
                    reason: format!("duplicate id {:?}", entry.id),
                });
            }
            let mut seen = BTreeSet::new();
            let mut forms = Vec::with_capacity(entry.surface_forms.len());
            for form in &entry.surface_forms {
                let norm = normalize(form);
                if norm.is_empty() {
                    return Err(TaxonomyError::MalformedRecord {
                        line,
                        reason: "empty surface form".into(),
                    });
                }
                if seen.insert(norm.clone()) {
                    forms.push(norm);
                }
            }
            if forms.is_empty() {
                return Err(TaxonomyError::MalformedRecord {
                    line,
                    reason: "no surface forms".into(),
                });
            }
            entry.surface_forms = forms;
            cleaned.push(entry);
        }
        if cleaned.is_empty() {
            return Err(TaxonomyError::EmptyTaxonomy);
        }
        let form_index = build_index(&cleaned, FormSelection::All);
        Ok(Taxonomy { entries: cleaned, form_index })
    }

    /// Parses the line-oriented JSON format. Blank lines are skipped; line
    /// numbers in errors are 1-based physical lines.
    pub fn parse_jsonl(text: &str) -> Result<Taxonomy, TaxonomyError> {
        let mut entries = Vec::new();
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let malformed = |reason: String| TaxonomyError::MalformedRecord { line, reason };
            let record: RawRecord =
                serde_json::from_str(raw).map_err(|e| malformed(e.to_string()))?;
            let id = record.id.ok_or_else(|| malformed("missing field `id`".into()))?;
            let class = record
                .class
                .ok_or_else(|| malformed("missing field `class`".into()))?;
            let class: ClassCode = class
                .parse()
                .map_err(|_| malformed(format!("unknown class code {class:?}")))?;
            let surface_forms = record
                .surface_forms
                .ok_or_else(|| malformed("missing field `surface_forms`".into()))?;
            entries.push(TaxonomyEntry { id, class, surface_forms, description: record.description });
            lines.push(line);
        }
        // re-map entry positions to physical lines for validation errors
        Taxonomy::from_entries(entries).map_err(|e| match e {
            TaxonomyError::MalformedRecord { line, reason } => {
                TaxonomyError::MalformedRecord { line: lines[line - 1], reason }
            }
            other => other,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn entries(&self) -> &[TaxonomyEntry] {
        &self.entries
    }

    pub fn form_index(&self) -> &BTreeMap<String, Vec<FormCandidate>> {
        &self.form_index
    }

    /// Candidates of a raw (not yet normalized) form.
    pub fn lookup(&self, form: &str) -> Option<&[FormCandidate]> {
        self.form_index.get(&normalize(form)).map(Vec::as_slice)
    }

    /// Index restricted to the given form selection.
    pub fn forms(&self, selection: FormSelection) -> BTreeMap<String, Vec<FormCandidate>> {
        match selection {
            FormSelection::All => self.form_index.clone(),
            FormSelection::PreferredOnly => build_index(&self.entries, selection),
        }
    }

    /// Distinct classes that occur in the taxonomy.
    pub fn classes(&self) -> BTreeSet<ClassCode> {
        self.entries.iter().map(|e| e.class).collect()
    }
}

fn build_index(
    entries: &[TaxonomyEntry],
    selection: FormSelection,
) -> BTreeMap<String, Vec<FormCandidate>> {
    let mut index: BTreeMap<String, Vec<FormCandidate>> = BTreeMap::new();
    for entry in entries {
        let forms = match selection {
            FormSelection::All => &entry.surface_forms[..],
            FormSelection::PreferredOnly => &entry.surface_forms[..1],
        };
        for form in forms {
            let slot = index.entry(form.clone()).or_default();
            // one candidate per (form, class) pair
            if !slot.iter().any(|c| c.class == entry.class) {
                slot.push(FormCandidate { entry_id: entry.id.clone(), class: entry.class });
            }
        }
    }
    for candidates in index.values_mut() {
        candidates.sort_by_key(|c| c.class);
    }
    index
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<Taxonomy, TaxonomyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| TaxonomyError::Io { path: path.display().to_string(), source })?;
    Taxonomy::parse_jsonl(&text)
}

/// The bundled 200-form toy taxonomy (5 forms for each of the 40 classes).
pub fn toy_taxonomy() -> Taxonomy {
    Taxonomy::parse_jsonl(BUNDLED_TOY_TAXONOMY).expect("bundled taxonomy is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forty_codes_in_stable_order() {
        let labels = class_labels();
        assert_eq!(labels.len(), 40);
        assert_eq!(labels, class_labels());
        for (i, code) in labels.iter().enumerate() {
            assert_eq!(code.index(), i);
            assert_eq!(ClassCode::from_index(i), Some(*code));
            assert_eq!(code.as_str().parse::<ClassCode>().unwrap(), *code);
        }
        assert!(ClassCode::from_index(40).is_none());
        let mut sorted = CLASS_CODES;
        sorted.sort();
        assert_eq!(sorted, CLASS_CODES);
    }

    #[test]
    fn group_sizes() {
        let count = |p: &str| CLASS_CODES.iter().filter(|c| c.starts_with(p) && !c.contains('-')).count();
        assert_eq!(count("C"), 10);
        assert_eq!(count("S"), 8);
        assert_eq!(count("L"), 2);
        assert_eq!(count("K"), 11);
        assert_eq!(count("T"), 6);
        assert_eq!(CLASS_CODES.iter().filter(|c| c.ends_with("-1")).count(), 3);
    }

    #[test]
    fn single_record() {
        let t = Taxonomy::parse_jsonl(
            r#"{"id":"e1","class":"S1","surface_forms":["python programmering"]}"#,
        )
        .unwrap();
        assert_eq!(t.entries().len(), 1);
        assert_eq!(t.form_index().len(), 1);
        assert_eq!(t.lookup("Python  Programmering").unwrap()[0].entry_id, "e1");
    }

    #[test]
    fn unknown_class_is_rejected_with_line() {
        let text = "{\"id\":\"a\",\"class\":\"S1\",\"surface_forms\":[\"x\"]}\n\n{\"id\":\"e1\",\"class\":\"Z9\",\"surface_forms\":[\"y\"]}";
        match Taxonomy::parse_jsonl(text) {
            Err(TaxonomyError::MalformedRecord { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_fields_and_empty() {
        assert!(matches!(
            Taxonomy::parse_jsonl(r#"{"id":"a","class":"S1"}"#),
            Err(TaxonomyError::MalformedRecord { line: 1, .. })
        ));
        assert!(matches!(
            Taxonomy::parse_jsonl(r#"{"id":"a","class":"S1","surface_forms":["  "]}"#),
            Err(TaxonomyError::MalformedRecord { .. })
        ));
        assert!(matches!(Taxonomy::parse_jsonl("\n\n"), Err(TaxonomyError::EmptyTaxonomy)));
        let dup = "{\"id\":\"a\",\"class\":\"S1\",\"surface_forms\":[\"x\"]}\n{\"id\":\"a\",\"class\":\"S2\",\"surface_forms\":[\"y\"]}";
        assert!(matches!(
            Taxonomy::parse_jsonl(dup),
            Err(TaxonomyError::MalformedRecord { line: 2, .. })
        ));
    }

    #[test]
    fn ambiguous_form_keeps_both_classes() {
        let text = "{\"id\":\"a\",\"class\":\"S4\",\"surface_forms\":[\"Ledelse\"]}\n{\"id\":\"b\",\"class\":\"K04\",\"surface_forms\":[\"ledelse\"]}";
        let t = Taxonomy::parse_jsonl(text).unwrap();
        let c = t.lookup("ledelse").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].class.as_str(), "K04");
    }

    #[test]
    fn duplicate_form_class_pairs_collapse() {
        let text = "{\"id\":\"a\",\"class\":\"S4\",\"surface_forms\":[\"ledelse\",\"LEDELSE\"]}\n{\"id\":\"b\",\"class\":\"S4\",\"surface_forms\":[\"ledelse\"]}";
        let t = Taxonomy::parse_jsonl(text).unwrap();
        assert_eq!(t.entries()[0].surface_forms.len(), 1);
        assert_eq!(t.lookup("ledelse").unwrap().len(), 1);
    }

    #[test]
    fn preferred_only_selection() {
        let text = r#"{"id":"a","class":"S4","surface_forms":["projektledelse","projektstyring"]}"#;
        let t = Taxonomy::parse_jsonl(text).unwrap();
        assert_eq!(t.forms(FormSelection::All).len(), 2);
        let preferred = t.forms(FormSelection::PreferredOnly);
        assert_eq!(preferred.keys().collect::<Vec<_>>(), vec!["projektledelse"]);
    }

    #[test]
    fn every_form_round_trips_and_reload_is_equal() {
        let t = toy_taxonomy();
        assert_eq!(t.entries().len(), 200);
        assert_eq!(t.classes().len(), 40);
        for entry in t.entries() {
            for form in &entry.surface_forms {
                let c = t.lookup(form).unwrap();
                assert!(c.iter().any(|c| c.entry_id == entry.id));
            }
        }
        assert_eq!(Taxonomy::parse_jsonl(&t.to_jsonl()).unwrap(), t);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("  IT   Sikkerhed\t"), "it sikkerhed");
        assert_eq!(normalize("ØKONOMI"), "økonomi");
    }
}
