//! Multilingual sensitive-term pair lists.
//!
//! File format: UTF-8, one `attribute,language,left,right` row per line,
//! `#` starts a comment line, blank lines are ignored. Terms may contain
//! spaces but never commas. For gender rows the left term is the male-side
//! term and the right term the female-side term.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::{Attribute, LanguageCode, Segmentation};
use crate::textproc::normalize;

/// The illustrative term list shipped with the crate.
pub const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.csv");

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TermPair {
    pub attribute: Attribute,
    pub language: LanguageCode,
    pub left: String,
    pub right: String,
}

impl TermPair {
    pub fn new(attribute: Attribute, language: LanguageCode, left: &str, right: &str) -> Self {
        TermPair {
            attribute,
            language,
            left: normalize(left.trim()),
            right: normalize(right.trim()),
        }
    }

    pub fn term(&self, side: Side) -> &str {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

impl fmt::Display for TermPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}: {}↔{}", self.attribute, self.language, self.left, self.right)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Gender side of a term. Gender rows list the male-side term first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gender {
    Male,
    Female,
}

impl From<Side> for Gender {
    fn from(side: Side) -> Gender {
        match side {
            Side::Left => Gender::Male,
            Side::Right => Gender::Female,
        }
    }
}

/// Lookup key: case-folded for space-delimited languages, verbatim for CJK.
pub fn fold_term(term: &str, language: LanguageCode) -> String {
    match language.segmentation() {
        Segmentation::SpaceDelimited => term.chars().map(fold_char).collect(),
        Segmentation::Cjk => term.to_string(),
    }
}

/// Single-character lowercase mapping; characters whose lowercase form is
/// longer than one character are kept as-is.
pub fn fold_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermRef {
    pub pair: usize,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyTerm {
        pair: TermPair,
    },
    DegeneratePair {
        pair: TermPair,
    },
    DuplicateTerm {
        term: String,
        first: TermPair,
        second: TermPair,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyTerm { pair } => write!(f, "empty term in pair {pair}"),
            Violation::DegeneratePair { pair } => write!(f, "both sides equal in pair {pair}"),
            Violation::DuplicateTerm { term, first, second } => {
                write!(f, "term `{term}` appears in pairs {first} and {second}")
            }
        }
    }
}

/// An immutable set of term pairs with a symmetric (language, term) index.
#[derive(Debug, Clone, Default)]
pub struct TermLexicon {
    pairs: Vec<TermPair>,
    index: HashMap<(LanguageCode, String), TermRef>,
}

impl PartialEq for TermLexicon {
    fn eq(&self, other: &Self) -> bool {
        self.pairs == other.pairs
    }
}

impl Eq for TermLexicon {}

impl TermLexicon {
    /// Builds a lexicon and fails on the first invariant violation.
    pub fn from_pairs(pairs: impl IntoIterator<Item = TermPair>) -> Result<Self> {
        let lex = Self::from_pairs_unchecked(pairs);
        if let Some(v) = lex.validate().into_iter().next() {
            return Err(Error::LexiconConflict(v.to_string()));
        }
        Ok(lex)
    }

    /// Builds a lexicon without checking invariants. When a term is listed
    /// twice the first pair wins in the index; [`TermLexicon::validate`]
    /// reports the conflict.
    pub fn from_pairs_unchecked(pairs: impl IntoIterator<Item = TermPair>) -> Self {
        let pairs: Vec<TermPair> = pairs.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut index = HashMap::new();
        for (i, p) in pairs.iter().enumerate() {
            for side in [Side::Left, Side::Right] {
                let key = (p.language, fold_term(p.term(side), p.language));
                index.entry(key).or_insert(TermRef { pair: i, side });
            }
        }
        TermLexicon { pairs, index }
    }

    pub fn builtin() -> Self {
        parse_lexicon(BUILTIN_LEXICON).expect("builtin lexicon is valid")
    }

    pub fn pairs(&self) -> &[TermPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pair(&self, r: TermRef) -> &TermPair {
        &self.pairs[r.pair]
    }

    pub fn lookup(&self, term: &str, language: LanguageCode) -> Option<TermRef> {
        let key = fold_term(&normalize(term), language);
        self.index.get(&(language, key)).copied()
    }

    /// The paired term (in the lexicon's canonical casing) and its attribute.
    pub fn counterpart(&self, term: &str, language: LanguageCode) -> Option<(String, Attribute)> {
        self.lookup(term, language).map(|r| {
            let p = &self.pairs[r.pair];
            (p.term(r.side.other()).to_string(), p.attribute)
        })
    }

    pub fn languages(&self) -> BTreeSet<LanguageCode> {
        self.pairs.iter().map(|p| p.language).collect()
    }

    /// Restricts the lexicon to the given languages and attributes.
    pub fn restrict(&self, languages: Option<&[LanguageCode]>, attributes: &[Attribute]) -> Self {
        Self::from_pairs_unchecked(
            self.pairs
                .iter()
                .filter(|p| languages.is_none_or(|ls| ls.contains(&p.language)))
                .filter(|p| attributes.contains(&p.attribute))
                .cloned(),
        )
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen: HashMap<(LanguageCode, String), usize> = HashMap::new();
        for (i, p) in self.pairs.iter().enumerate() {
            if p.left.is_empty() || p.right.is_empty() {
                out.push(Violation::EmptyTerm { pair: p.clone() });
                continue;
            }
            if fold_term(&p.left, p.language) == fold_term(&p.right, p.language) {
                out.push(Violation::DegeneratePair { pair: p.clone() });
                continue;
            }
            for side in [Side::Left, Side::Right] {
                let key = (p.language, fold_term(p.term(side), p.language));
                match seen.get(&key) {
                    Some(&j) if j != i => out.push(Violation::DuplicateTerm {
                        term: p.term(side).to_string(),
                        first: self.pairs[j].clone(),
                        second: p.clone(),
                    }),
                    Some(_) => {}
                    None => {
                        seen.insert(key, i);
                    }
                }
            }
        }
        out
    }

    /// Canonical file form: pairs sorted by attribute, language, then terms.
    pub fn to_file_string(&self) -> String {
        let mut out = String::from("# attribute,language,left,right\n");
        for p in &self.pairs {
            let _ = writeln!(out, "{},{},{},{}", p.attribute, p.language, p.left, p.right);
        }
        out
    }
}

pub fn parse_lexicon(content: &str) -> Result<TermLexicon> {
    let mut pairs = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 comma-separated fields, found {}", fields.len()),
            });
        }
        let at_line = |e: Error| Error::Parse {
            line: line_no,
            message: e.to_string(),
        };
        let attribute: Attribute = fields[0].parse().map_err(at_line)?;
        let language: LanguageCode = fields[1].parse().map_err(at_line)?;
        if fields[2].is_empty() || fields[3].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty term".into(),
            });
        }
        pairs.push(TermPair::new(attribute, language, fields[2], fields[3]));
    }
    TermLexicon::from_pairs(pairs)
}
