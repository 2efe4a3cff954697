//! Counterfactual data augmentation over multilingual corpora.
//!
//! Each text is scanned once, left to right. At every position the longest
//! lexicon term (either side of any pair of the selected attributes) is
//! replaced by its counterpart and scanning resumes after the match, so a
//! swapped-in term is never swapped back. Space-delimited languages only
//! match at word boundaries, case-insensitively, and carry the matched
//! surface's case pattern over to the replacement. CJK languages match
//! literal substrings.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::lang::{Attribute, LanguageCode};
use crate::lexicon::{fold_char, Side, TermLexicon, TermRef};
use crate::textproc::{is_word_char, normalize, CorpusRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentMode {
    /// Replace terms in place.
    OneSided,
    /// Emit the original record followed by its counterfactual.
    #[default]
    TwoSided,
}

impl std::str::FromStr for AugmentMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "one-sided" => Ok(AugmentMode::OneSided),
            "two-sided" => Ok(AugmentMode::TwoSided),
            other => Err(crate::Error::Invalid(format!("unknown augment mode `{other}`"))),
        }
    }
}

/// A lexicon match in NFC-normalized text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermMatch {
    /// Byte range in the normalized text.
    pub span: Range<usize>,
    pub term: TermRef,
}

#[derive(Default, Debug, Clone)]
struct Node {
    children: HashMap<char, usize>,
    terminal: Option<TermRef>,
}

#[derive(Debug, Clone)]
struct Trie {
    nodes: Vec<Node>,
}

impl Trie {
    fn new() -> Self {
        Trie {
            nodes: vec![Node::default()],
        }
    }

    fn insert(&mut self, key: impl Iterator<Item = char>, value: TermRef) {
        let mut at = 0;
        for c in key {
            at = match self.nodes[at].children.get(&c) {
                Some(&n) => n,
                None => {
                    self.nodes.push(Node::default());
                    let n = self.nodes.len() - 1;
                    self.nodes[at].children.insert(c, n);
                    n
                }
            };
        }
        self.nodes[at].terminal.get_or_insert(value);
    }
}

/// Precompiled matcher for one lexicon and attribute selection.
#[derive(Debug, Clone)]
pub struct Augmenter<'a> {
    lexicon: &'a TermLexicon,
    tries: HashMap<LanguageCode, Trie>,
}

impl<'a> Augmenter<'a> {
    pub fn new(lexicon: &'a TermLexicon, attributes: &[Attribute]) -> Self {
        let mut tries: HashMap<LanguageCode, Trie> = HashMap::new();
        for (i, p) in lexicon.pairs().iter().enumerate() {
            if !attributes.contains(&p.attribute) {
                continue;
            }
            let trie = tries.entry(p.language).or_insert_with(Trie::new);
            for side in [Side::Left, Side::Right] {
                let term = p.term(side);
                let r = TermRef { pair: i, side };
                if p.language.is_cjk() {
                    trie.insert(term.chars(), r);
                } else {
                    trie.insert(term.chars().map(fold_char), r);
                }
            }
        }
        Augmenter { lexicon, tries }
    }

    pub fn lexicon(&self) -> &TermLexicon {
        self.lexicon
    }

    /// All matches in `text` under the single-pass longest-match rule.
    /// Returns the normalized text the spans refer to.
    pub fn find_matches(&self, text: &str, language: LanguageCode) -> (String, Vec<TermMatch>) {
        let norm = normalize(text);
        let Some(trie) = self.tries.get(&language) else {
            return (norm, Vec::new());
        };
        let chars: Vec<(usize, char)> = norm.char_indices().collect();
        let byte_at = |i: usize| chars.get(i).map_or(norm.len(), |&(b, _)| b);
        let cjk = language.is_cjk();
        let boundary =
            |i: usize| cjk || i == 0 || i == chars.len() || !(is_word_char(chars[i - 1].1) && is_word_char(chars[i].1));

        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let mut best: Option<(usize, TermRef)> = None;
            if boundary(i) {
                let mut node = 0;
                let mut j = i;
                while j < chars.len() {
                    let c = if cjk { chars[j].1 } else { fold_char(chars[j].1) };
                    let Some(&next) = trie.nodes[node].children.get(&c) else {
                        break;
                    };
                    node = next;
                    j += 1;
                    if let Some(t) = trie.nodes[node].terminal {
                        if boundary(j) {
                            best = Some((j, t));
                        }
                    }
                }
            }
            match best {
                Some((end, term)) => {
                    out.push(TermMatch {
                        span: byte_at(i)..byte_at(end),
                        term,
                    });
                    i = end;
                }
                None => i += 1,
            }
        }
        (norm, out)
    }

    /// Rewrites `text`, returning the new text and the number of replacements.
    pub fn augment_sentence(&self, text: &str, language: LanguageCode) -> (String, usize) {
        let (norm, matches) = self.find_matches(text, language);
        if matches.is_empty() {
            return (text.to_string(), 0);
        }
        let mut out = String::with_capacity(norm.len() + 8);
        let mut cursor = 0;
        for m in &matches {
            out.push_str(&norm[cursor..m.span.start]);
            let pair = self.lexicon.pair(m.term);
            let source = pair.term(m.term.side);
            let target = pair.term(m.term.side.other());
            let surface = &norm[m.span.clone()];
            if language.is_cjk() {
                out.push_str(target);
            } else {
                out.push_str(&transfer_case(surface, source, target));
            }
            cursor = m.span.end;
        }
        out.push_str(&norm[cursor..]);
        (out, matches.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CasePattern {
    Lower,
    Upper,
    Title,
    Other,
}

fn case_pattern(surface: &str) -> CasePattern {
    let letters: Vec<char> = surface.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.iter().all(|c| !c.is_uppercase()) {
        return CasePattern::Lower;
    }
    let title = surface.split(' ').all(|word| {
        let mut cs = word.chars().filter(|c| c.is_alphabetic());
        match cs.next() {
            Some(first) => !first.is_lowercase() && cs.all(|c| !c.is_uppercase()),
            None => true,
        }
    });
    if title {
        return CasePattern::Title;
    }
    if letters.iter().all(|c| !c.is_lowercase()) {
        return CasePattern::Upper;
    }
    CasePattern::Other
}

fn title_case(word: &str) -> String {
    let mut cs = word.chars();
    match cs.next() {
        Some(first) => first.to_uppercase().chain(cs.flat_map(char::to_lowercase)).collect(),
        None => String::new(),
    }
}

fn apply_pattern(pattern: CasePattern, target: &str) -> String {
    match pattern {
        CasePattern::Lower => target.to_lowercase(),
        CasePattern::Upper => target.to_uppercase(),
        CasePattern::Title => target.split(' ').map(title_case).collect::<Vec<_>>().join(" "),
        CasePattern::Other => target.to_string(),
    }
}

/// Chooses the replacement surface. A surface in the lexicon's own casing
/// maps to the counterpart's lexicon casing. Otherwise lower, UPPER and Title
/// patterns are carried over word by word when both terms have the same
/// number of words, and for the whole term when they do not. Mixed casing
/// inside a word falls back to the lexicon form.
fn transfer_case(surface: &str, source: &str, target: &str) -> String {
    if surface == source {
        return target.to_string();
    }
    let surface_words: Vec<&str> = surface.split(' ').collect();
    let target_words: Vec<&str> = target.split(' ').collect();
    if surface_words.len() == target_words.len() {
        surface_words
            .iter()
            .zip(&target_words)
            .map(|(s, t)| apply_pattern(case_pattern(s), t))
            .collect::<Vec<_>>()
            .join(" ")
    } else {
        apply_pattern(case_pattern(surface), target)
    }
}

/// Convenience wrapper compiling a matcher for a single sentence.
pub fn augment_sentence(
    text: &str,
    language: LanguageCode,
    lexicon: &TermLexicon,
    attributes: &[Attribute],
) -> (String, usize) {
    Augmenter::new(lexicon, attributes).augment_sentence(text, language)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub records_in: usize,
    pub records_out: usize,
    pub records_matched: usize,
    /// Replacement counts keyed by `language/attribute/term`, where `term` is
    /// the lexicon form of the term that was replaced.
    pub replacements: BTreeMap<String, usize>,
}

impl AugmentReport {
    pub fn total_replacements(&self) -> usize {
        self.replacements.values().sum()
    }
}

pub fn augment_corpus(
    corpus: &[CorpusRecord],
    lexicon: &TermLexicon,
    attributes: &[Attribute],
    mode: AugmentMode,
) -> (Vec<CorpusRecord>, AugmentReport) {
    let aug = Augmenter::new(lexicon, attributes);
    let mut report = AugmentReport {
        records_in: corpus.len(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(corpus.len() * 2);
    for record in corpus {
        let (norm, matches) = aug.find_matches(&record.text, record.language);
        for m in &matches {
            let pair = lexicon.pair(m.term);
            let key = format!("{}/{}/{}", pair.language, pair.attribute, pair.term(m.term.side));
            *report.replacements.entry(key).or_default() += 1;
        }
        drop(norm);
        if matches.is_empty() {
            out.push(record.clone());
            continue;
        }
        report.records_matched += 1;
        let (text, _) = aug.augment_sentence(&record.text, record.language);
        match mode {
            AugmentMode::OneSided => out.push(CorpusRecord { text, ..record.clone() }),
            AugmentMode::TwoSided => {
                out.push(record.clone());
                out.push(CorpusRecord {
                    language: record.language,
                    source_id: format!("{}#cf", record.source_id),
                    text,
                });
            }
        }
    }
    report.records_out = out.len();
    (out, report)
}
