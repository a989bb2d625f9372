//! Token-level Aho-Corasick automaton over normalized surface forms.
//!
//! Forms are tokenized with the sentence tokenizer and every distinct
//! lowercased token is interned to a symbol, so a form can only match on
//! token boundaries. A sentence token that never occurs in any form sends
//! the automaton back to the root. One pass over a sentence reports every
//! occurrence of every form, in time linear in the sentence length plus the
//! number of reported matches.

use std::collections::{HashMap, VecDeque};

use log::warn;

use super::{tokenize, AnnotatedSentence, CorpusError, Entity, Span, Token};
use crate::taxonomy::{FormCandidate, FormSelection, Taxonomy};

const ROOT: u32 = 0;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    /// Sorted by symbol.
    next: Vec<(u32, u32)>,
    fail: u32,
    /// Nearest proper suffix state that ends a pattern.
    dict: u32,
    pattern: Option<u32>,
    depth: u32,
}

impl Node {
    fn new(depth: u32) -> Node {
        Node { next: Vec::new(), fail: ROOT, dict: NONE, pattern: None, depth }
    }

    fn goto(&self, symbol: u32) -> Option<u32> {
        self.next
            .binary_search_by_key(&symbol, |&(s, _)| s)
            .ok()
            .map(|i| self.next[i].1)
    }
}

/// A surface form known to the matcher.
#[derive(Debug, Clone)]
pub struct Pattern {
    pub form: String,
    pub n_tokens: usize,
    /// Sorted by class code; the first one wins when the form is ambiguous.
    pub candidates: Vec<FormCandidate>,
}

/// One occurrence of a pattern in a token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CandidateMatch {
    pub span: Span,
    pub pattern: usize,
}

#[derive(Debug, Clone)]
pub struct Matcher {
    symbols: HashMap<String, u32>,
    nodes: Vec<Node>,
    patterns: Vec<Pattern>,
}

pub fn build_matcher(taxonomy: &Taxonomy, selection: FormSelection) -> Result<Matcher, CorpusError> {
    Matcher::new(taxonomy.forms(selection))
}

fn token_key(text: &str) -> String {
    text.to_lowercase()
}

impl Matcher {
    /// Builds the automaton from normalized forms and their class candidates.
    pub fn new(
        forms: impl IntoIterator<Item = (String, Vec<FormCandidate>)>,
    ) -> Result<Matcher, CorpusError> {
        let mut symbols: HashMap<String, u32> = HashMap::new();
        let mut nodes = vec![Node::new(0)];
        let mut patterns = Vec::new();

        for (form, candidates) in forms {
            let tokens = tokenize(&form);
            if tokens.is_empty() {
                continue;
            }
            let mut state = ROOT;
            for token in &tokens {
                let next_symbol = symbols.len() as u32;
                let symbol = *symbols.entry(token_key(&token.text)).or_insert(next_symbol);
                state = match nodes[state as usize].goto(symbol) {
                    Some(s) => s,
                    None => {
                        let id = nodes.len() as u32;
                        let depth = nodes[state as usize].depth + 1;
                        nodes.push(Node::new(depth));
                        let next = &mut nodes[state as usize].next;
                        let at = next.partition_point(|&(s, _)| s < symbol);
                        next.insert(at, (symbol, id));
                        id
                    }
                };
            }
            let node = &mut nodes[state as usize];
            match node.pattern {
                // two raw forms that tokenize identically ("e-mail" / "e - mail")
                Some(existing) => {
                    let merged: &mut Pattern = &mut patterns[existing as usize];
                    for c in candidates {
                        if !merged.candidates.iter().any(|m| m.class == c.class) {
                            merged.candidates.push(c);
                        }
                    }
                    merged.candidates.sort_by_key(|c| c.class);
                }
                None => {
                    node.pattern = Some(patterns.len() as u32);
                    patterns.push(Pattern { form, n_tokens: tokens.len(), candidates });
                }
            }
        }
        if patterns.is_empty() {
            return Err(CorpusError::EmptyTaxonomy);
        }

        // breadth-first failure and dictionary links
        let mut queue = VecDeque::new();
        for &(_, child) in &nodes[ROOT as usize].next {
            queue.push_back(child);
        }
        while let Some(state) = queue.pop_front() {
            let children = nodes[state as usize].next.clone();
            for (symbol, child) in children {
                let mut f = nodes[state as usize].fail;
                let fail = loop {
                    if let Some(t) = nodes[f as usize].goto(symbol) {
                        break t;
                    }
                    if f == ROOT {
                        break ROOT;
                    }
                    f = nodes[f as usize].fail;
                };
                let dict = if nodes[fail as usize].pattern.is_some() {
                    fail
                } else {
                    nodes[fail as usize].dict
                };
                let node = &mut nodes[child as usize];
                node.fail = fail;
                node.dict = dict;
                queue.push_back(child);
            }
        }

        Ok(Matcher { symbols, nodes, patterns })
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn pattern(&self, index: usize) -> &Pattern {
        &self.patterns[index]
    }

    /// Every occurrence of every pattern, ordered by end token then by
    /// decreasing length.
    pub fn find_candidates(&self, tokens: &[Token]) -> Vec<CandidateMatch> {
        let mut out = Vec::new();
        let mut state = ROOT;
        for (i, token) in tokens.iter().enumerate() {
            let Some(&symbol) = self.symbols.get(&token_key(&token.text)) else {
                state = ROOT;
                continue;
            };
            state = loop {
                if let Some(t) = self.nodes[state as usize].goto(symbol) {
                    break t;
                }
                if state == ROOT {
                    break ROOT;
                }
                state = self.nodes[state as usize].fail;
            };
            let mut hit = if self.nodes[state as usize].pattern.is_some() {
                state
            } else {
                self.nodes[state as usize].dict
            };
            while hit != NONE {
                let node = &self.nodes[hit as usize];
                let pattern = node.pattern.expect("dictionary links end patterns") as usize;
                out.push(CandidateMatch {
                    span: Span::new(i + 1 - node.depth as usize, i),
                    pattern,
                });
                hit = node.dict;
            }
        }
        out
    }

    /// Leftmost-longest non-overlapping selection of candidate matches.
    pub fn select(&self, mut candidates: Vec<CandidateMatch>) -> Vec<Entity> {
        candidates.sort_by(|a, b| {
            a.span.first.cmp(&b.span.first).then(b.span.last.cmp(&a.span.last))
        });
        let mut entities = Vec::new();
        let mut next_free = 0;
        for c in candidates {
            if c.span.first < next_free {
                continue;
            }
            let pattern = &self.patterns[c.pattern];
            if pattern.candidates.len() > 1 {
                warn!(
                    "ambiguous form {:?} ({} classes), using {}",
                    pattern.form,
                    pattern.candidates.len(),
                    pattern.candidates[0].class
                );
            }
            entities.push(Entity { span: c.span, class: pattern.candidates[0].class });
            next_free = c.span.last + 1;
        }
        entities
    }
}

/// Annotates an already tokenized sentence.
pub fn annotate(text: impl Into<String>, tokens: Vec<Token>, matcher: &Matcher) -> AnnotatedSentence {
    let entities = matcher.select(matcher.find_candidates(&tokens));
    AnnotatedSentence::new(text, tokens, entities).expect("selected matches are disjoint")
}

pub fn annotate_text(text: &str, matcher: &Matcher) -> AnnotatedSentence {
    annotate(text, tokenize(text), matcher)
}
