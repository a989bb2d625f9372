//! Seeded generator of job-posting-like sentences that mix filler words with
//! taxonomy surface forms. Every sentence is annotated by running the real
//! matcher over its own text, so the labels are self-consistent.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{annotate_text, build_matcher, AnnotatedSentence, CorpusError};
use crate::taxonomy::{FormSelection, Taxonomy};

const FILLER: &[&str] = &[
    "vi", "søger", "en", "erfaren", "dygtig", "med", "og", "til", "der", "har", "du", "er",
    "på", "af", "for", "stilling", "team", "virksomhed", "afdeling", "kunder", "ansvar",
    "gode", "stærke", "kendskab", "erfaring", "indenfor", "gerne", "samt", "arbejde", "nye",
    "muligheder", "løn", "fuld", "tid", "hos", "os", "dig", "som", "kan", "vil", "blive",
    "del", "et", "spændende", "miljø", "opgaver", "krav", "ønsker", "tilbyder", "hverdag",
    "kollegaer", "København", "Aarhus", "Odense", "ansøgning", "snarest", "mulig", "tiltrædelse",
    "kvalifikationer", "profil", "varierede", "uddannelse", "minimum", "års",
];

const LEADS: &[&str] = &[
    "Vi søger", "Du har", "Vi forventer", "Stillingen kræver", "Vi tilbyder", "Din profil",
    "Som person", "Du får", "Erfaring med", "Kendskab til",
];

/// Shape of the generated sentences.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub max_mentions: usize,
    pub max_filler_run: usize,
    /// Probability of capitalizing a mention, exercising case-insensitive matching.
    pub capitalize_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { max_mentions: 3, max_filler_run: 4, capitalize_prob: 0.15 }
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

struct SentenceWriter<'a> {
    taxonomy: &'a Taxonomy,
    config: SyntheticConfig,
}

impl SentenceWriter<'_> {
    fn sentence(&self, rng: &mut ChaCha8Rng) -> String {
        let entries = self.taxonomy.entries();
        let mut parts: Vec<String> = Vec::new();
        parts.push(LEADS.choose(rng).expect("non-empty").to_string());
        let mentions = rng.gen_range(0..=self.config.max_mentions).max(rng.gen_range(0..=1));
        for m in 0..mentions {
            let run = rng.gen_range(0..=self.config.max_filler_run);
            for _ in 0..run {
                parts.push(FILLER.choose(rng).expect("non-empty").to_string());
            }
            if m > 0 && rng.gen_bool(0.3) {
                parts.push(",".into());
            }
            let entry = entries.choose(rng).expect("validated taxonomy is non-empty");
            let form = entry.surface_forms.choose(rng).expect("entries have forms");
            if rng.gen_bool(self.config.capitalize_prob) {
                parts.push(capitalize(form));
            } else {
                parts.push(form.clone());
            }
        }
        for _ in 0..rng.gen_range(0..=2) {
            parts.push(FILLER.choose(rng).expect("non-empty").to_string());
        }
        let mut text = parts.join(" ").replace(" ,", ",");
        text.push(if rng.gen_bool(0.9) { '.' } else { '!' });
        text
    }
}

/// Generates `n_sentences` annotated sentences, deterministically in `seed`.
pub fn generate_synthetic_corpus(
    taxonomy: &Taxonomy,
    n_sentences: usize,
    seed: u64,
) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    if n_sentences == 0 {
        return Err(CorpusError::EmptyDataset);
    }
    let matcher = build_matcher(taxonomy, FormSelection::All)?;
    let writer = SentenceWriter { taxonomy, config: SyntheticConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_sentences)
        .map(|_| annotate_text(&writer.sentence(&mut rng), &matcher))
        .collect())
}

/// Generates raw multi-sentence job postings for timing runs.
pub fn generate_jobs(
    taxonomy: &Taxonomy,
    n_jobs: usize,
    sentences_per_job: usize,
    seed: u64,
) -> Vec<Vec<String>> {
    let writer = SentenceWriter { taxonomy, config: SyntheticConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_jobs)
        .map(|_| (0..sentences_per_job).map(|_| writer.sentence(&mut rng)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::toy_taxonomy;
    use std::collections::BTreeSet;

    #[test]
    fn deterministic_in_seed() {
        let t = toy_taxonomy();
        let a = generate_synthetic_corpus(&t, 50, 7).unwrap();
        let b = generate_synthetic_corpus(&t, 50, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_corpus(&t, 50, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sentences_are_valid_and_self_consistent() {
        let t = toy_taxonomy();
        let m = build_matcher(&t, FormSelection::All).unwrap();
        for s in generate_synthetic_corpus(&t, 200, 1).unwrap() {
            s.validate().unwrap();
            assert_eq!(annotate_text(&s.text, &m), s);
        }
    }

    #[test]
    fn class_coverage() {
        let t = toy_taxonomy();
        let classes: BTreeSet<_> = generate_synthetic_corpus(&t, 1000, 3)
            .unwrap()
            .iter()
            .flat_map(|s| s.entities.iter().map(|e| e.class))
            .collect();
        assert!(classes.len() >= 10, "only {} classes", classes.len());
    }

    #[test]
    fn zero_sentences_rejected() {
        assert!(matches!(
            generate_synthetic_corpus(&toy_taxonomy(), 0, 1),
            Err(CorpusError::EmptyDataset)
        ));
    }

    #[test]
    fn jobs_are_seeded() {
        let t = toy_taxonomy();
        let a = generate_jobs(&t, 3, 4, 11);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|j| j.len() == 4));
        assert_eq!(a, generate_jobs(&t, 3, 4, 11));
    }
}
