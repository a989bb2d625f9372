mod common;

use compex::corpus::{
    annotate_text, build_matcher, encode_bio, from_allclass, to_allclass_labels, tokenize, AllClassLabel, BioLabel,
    Span,
};
use compex::evaluation::{token_f1, weighted_macro_f1};
use compex::inference::{decode_allclass, decode_bio};
use compex::model::{pool_span, softmax, TokenVectors};
use compex::taxonomy::{class_labels, normalize, ClassCode, FormSelection, Taxonomy, TaxonomyEntry, NUM_CLASSES};
use compex::training::{split_dataset, SplitSpec};
use proptest::prelude::*;

use common::*;

const WORDS: &[&str] = &["python", "java", "sql", "it", "sikkerhed", "ledelse", "e-mail", "c++", "Økonomi", "salg"];

fn form() -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::sample::select(WORDS), 1..4).prop_map(|w| w.join(" "))
}

fn class() -> impl Strategy<Value = ClassCode> {
    (0..NUM_CLASSES).prop_map(|i| ClassCode::from_index(i).unwrap())
}

fn taxonomy() -> impl Strategy<Value = Taxonomy> {
    proptest::collection::vec((form(), proptest::collection::vec(form(), 0..3), class()), 1..40).prop_map(|rows| {
        let entries = rows
            .into_iter()
            .enumerate()
            .map(|(i, (preferred, alternatives, class))| TaxonomyEntry {
                id: format!("e{i}"),
                class,
                surface_forms: std::iter::once(preferred).chain(alternatives).collect(),
                description: None,
            })
            .collect();
        Taxonomy::from_entries(entries).unwrap()
    })
}

fn sentence() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![proptest::sample::select(WORDS).prop_map(str::to_string), "[a-zæøå]{1,6}", Just(",".to_string())],
        0..60,
    )
    .prop_map(|w| w.join(" "))
}

fn span_layout() -> impl Strategy<Value = (usize, Vec<Span>)> {
    (1usize..60, any::<u64>()).prop_map(|(n, seed)| {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (n, random_spans(&mut rng, n))
    })
}

fn bio_label() -> impl Strategy<Value = BioLabel> {
    (0usize..3).prop_map(|i| BioLabel::from_index(i).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matcher_equals_brute_force(tax in taxonomy(), text in sentence()) {
        let forms: Vec<String> = tax.form_index().keys().cloned().collect();
        let matcher = build_matcher(&tax, FormSelection::All).unwrap();
        let tokens = tokenize(&text);
        let found: std::collections::BTreeSet<_> = matcher
            .find_candidates(&tokens)
            .into_iter()
            .map(|c| {
                let key: Vec<String> = tokenize(&matcher.pattern(c.pattern).form).iter().map(|t| t.text.to_lowercase()).collect();
                (c.span.first, c.span.last, key)
            })
            .collect();
        prop_assert_eq!(found, brute_force_matches(&forms, &tokens));
    }

    #[test]
    fn every_form_maps_back_to_its_entry(tax in taxonomy()) {
        for entry in tax.entries() {
            for f in &entry.surface_forms {
                let candidates = tax.lookup(f).unwrap();
                prop_assert!(candidates.iter().any(|c| c.class == entry.class));
                prop_assert_eq!(normalize(f), f.clone());
            }
        }
        prop_assert_eq!(Taxonomy::parse_jsonl(&tax.to_jsonl()).unwrap(), tax);
    }

    #[test]
    fn annotation_is_consistent_and_idempotent(tax in taxonomy(), text in sentence()) {
        let matcher = build_matcher(&tax, FormSelection::All).unwrap();
        let s = annotate_text(&text, &matcher);
        prop_assert!(s.validate().is_ok());
        prop_assert_eq!(decode_bio(&s.bio), s.spans());
        prop_assert_eq!(annotate_text(&s.text, &matcher), s.clone());
        let (bio, entities) = from_allclass(&to_allclass_labels(&s));
        prop_assert_eq!(bio, s.bio.clone());
        prop_assert_eq!(entities, s.entities.clone());
    }

    #[test]
    fn bio_round_trip((n, spans) in span_layout()) {
        prop_assert_eq!(decode_bio(&encode_bio(&spans, n).unwrap()), spans);
    }

    #[test]
    fn decoders_never_overlap(labels in proptest::collection::vec(bio_label(), 0..80), raw in proptest::collection::vec(0usize..81, 0..80)) {
        let spans = decode_bio(&labels);
        prop_assert!(spans.windows(2).all(|w| w[0].last < w[1].first));
        let tags: Vec<AllClassLabel> = raw.into_iter().map(|i| AllClassLabel::from_index(i).unwrap()).collect();
        let typed = decode_allclass(&tags);
        prop_assert!(typed.windows(2).all(|w| w[0].0.last < w[1].0.first));
        for (span, class) in typed {
            prop_assert_eq!(tags[span.first], AllClassLabel::begin(class));
        }
    }

    #[test]
    fn token_f1_matches_oracle_and_ignores_sentence_order(
        pairs in proptest::collection::vec(
            (1usize..20).prop_flat_map(|n| (proptest::collection::vec(bio_label(), n), proptest::collection::vec(bio_label(), n))),
            1..10,
        ),
        rotate in 0usize..10,
    ) {
        let (gold, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let s = token_f1(&gold, &pred).unwrap();
        let (p, r, f) = token_prf_oracle(&gold, &pred);
        prop_assert!((s.precision - p).abs() < 1e-9 && (s.recall - r).abs() < 1e-9 && (s.f1 - f).abs() < 1e-9);
        let k = rotate % gold.len();
        let (mut g2, mut p2) = (gold.clone(), pred.clone());
        g2.rotate_left(k);
        p2.rotate_left(k);
        prop_assert_eq!(token_f1(&g2, &p2).unwrap(), s);
    }

    #[test]
    fn weighted_f1_matches_confusion_matrix(pairs in proptest::collection::vec((class(), class()), 1..80)) {
        let (gold, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let w = weighted_macro_f1(&gold, &pred).unwrap();
        prop_assert!((w - weighted_f1_oracle(&gold, &pred)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&w));
    }

    #[test]
    fn split_is_a_seeded_partition(n in 1usize..500, seed in any::<u64>()) {
        let data: Vec<usize> = (0..n).collect();
        let spec = SplitSpec { seed, ..Default::default() };
        let (a, b, c) = split_dataset(&data, &spec).unwrap();
        let want = split_oracle(n as u64, (8, 1, 1));
        prop_assert_eq!((a.len() as u64, b.len() as u64, c.len() as u64), want);
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort();
        prop_assert_eq!(all, data.clone());
        prop_assert_eq!(split_dataset(&data, &spec).unwrap(), (a, b, c));
    }

    #[test]
    fn softmax_sums_to_one(logits in proptest::collection::vec(-500.0f64..500.0, 1..90)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn single_token_pool_is_the_row(rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 1..10), pick in 0usize..10) {
        let n = rows.len();
        let m = compex::model::Matrix::from_rows(&rows);
        let i = pick % n;
        let v = TokenVectors(m);
        prop_assert_eq!(pool_span(&v, Span::new(i, i)).unwrap(), v.row(i).to_vec());
    }
}

#[test]
fn class_labels_are_a_bijection() {
    let labels = class_labels();
    assert_eq!(labels.len(), 40);
    for (i, c) in labels.iter().enumerate() {
        assert_eq!(c.index(), i);
        assert_eq!(ClassCode::from_index(i), Some(*c));
        assert_eq!(c.as_str().parse::<ClassCode>().unwrap(), *c);
    }
    assert_eq!(ClassCode::from_index(40), None);
}
