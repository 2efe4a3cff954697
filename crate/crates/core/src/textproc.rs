//! Deterministic multilingual tokenization, word-level vocabularies, and the
//! tab-separated corpus format.
//!
//! Text is NFC-normalized before it is segmented. Space-delimited languages
//! split on Unicode whitespace and peel leading/trailing punctuation off each
//! chunk; CJK languages emit one token per ideograph or kana and keep runs of
//! Latin letters and digits together.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::lang::{LanguageCode, Segmentation};

pub type TokenId = usize;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const MASK: &str = "[MASK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const SPECIALS: [&str; 5] = [PAD, UNK, MASK, CLS, SEP];

pub const PAD_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;
pub const MASK_ID: TokenId = 2;
pub const CLS_ID: TokenId = 3;
pub const SEP_ID: TokenId = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Word,
    CjkChar,
    Punct,
    Special,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub surface: String,
    pub kind: TokenKind,
}

impl Token {
    pub fn special(surface: &str) -> Result<Token> {
        if !SPECIALS.contains(&surface) {
            return Err(Error::Invalid(format!("`{surface}` is not a reserved token")));
        }
        Ok(Token {
            surface: surface.to_string(),
            kind: TokenKind::Special,
        })
    }
}

pub fn normalize(text: &str) -> String {
    text.nfc().collect()
}

/// Ideographs, Hiragana and Katakana.
pub fn is_cjk_char(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x309F      // Hiragana
        | 0x30A0..=0x30FF    // Katakana
        | 0x31F0..=0x31FF    // Katakana phonetic extensions
        | 0x3400..=0x4DBF    // CJK Unified Ideographs Extension A
        | 0x4E00..=0x9FFF    // CJK Unified Ideographs
        | 0xF900..=0xFAFF    // CJK Compatibility Ideographs
        | 0x20000..=0x2FA1F) // Extensions B..F and compatibility supplement
}

pub fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

fn is_punct(c: char) -> bool {
    !c.is_whitespace() && !c.is_alphanumeric()
}

/// Tokenizes `text`, discarding offsets.
pub fn tokenize(text: &str, language: LanguageCode) -> Vec<Token> {
    let (_, spans) = tokenize_with_offsets(text, language);
    spans.into_iter().map(|(t, _)| t).collect()
}

/// Tokenizes `text` and returns the NFC-normalized text together with the
/// byte range each token occupies in it.
pub fn tokenize_with_offsets(text: &str, language: LanguageCode) -> (String, Vec<(Token, Range<usize>)>) {
    let norm = normalize(text);
    let spans = match language.segmentation() {
        Segmentation::SpaceDelimited => segment_spaced(&norm),
        Segmentation::Cjk => segment_cjk(&norm),
    };
    let tokens = spans
        .into_iter()
        .map(|(kind, range)| {
            (
                Token {
                    surface: norm[range.clone()].to_string(),
                    kind,
                },
                range,
            )
        })
        .collect();
    (norm, tokens)
}

fn segment_spaced(text: &str) -> Vec<(TokenKind, Range<usize>)> {
    let mut out = Vec::new();
    let mut chunk_start = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        if c.is_whitespace() {
            if let Some(start) = chunk_start.take() {
                split_chunk(text, start, i, &mut out);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    out
}

fn split_chunk(text: &str, start: usize, end: usize, out: &mut Vec<(TokenKind, Range<usize>)>) {
    let chars: Vec<(usize, char)> = text[start..end].char_indices().map(|(i, c)| (start + i, c)).collect();
    let lead = chars.iter().take_while(|(_, c)| is_punct(*c)).count();
    if lead == chars.len() {
        out.extend(chars.iter().map(|&(i, c)| (TokenKind::Punct, i..i + c.len_utf8())));
        return;
    }
    let trail = chars.iter().rev().take_while(|(_, c)| is_punct(*c)).count();
    for &(i, c) in &chars[..lead] {
        out.push((TokenKind::Punct, i..i + c.len_utf8()));
    }
    let word_start = chars[lead].0;
    let (last_i, last_c) = chars[chars.len() - trail - 1];
    out.push((TokenKind::Word, word_start..last_i + last_c.len_utf8()));
    for &(i, c) in &chars[chars.len() - trail..] {
        out.push((TokenKind::Punct, i..i + c.len_utf8()));
    }
}

fn segment_cjk(text: &str) -> Vec<(TokenKind, Range<usize>)> {
    let mut out = Vec::new();
    let mut run: Option<usize> = None;
    for (i, c) in text.char_indices() {
        let in_run = !c.is_whitespace() && !is_cjk_char(c) && c.is_alphanumeric();
        if !in_run {
            if let Some(start) = run.take() {
                out.push((TokenKind::Word, start..i));
            }
        }
        if c.is_whitespace() {
            continue;
        }
        if is_cjk_char(c) {
            out.push((TokenKind::CjkChar, i..i + c.len_utf8()));
        } else if in_run {
            run.get_or_insert(i);
        } else {
            out.push((TokenKind::Punct, i..i + c.len_utf8()));
        }
    }
    if let Some(start) = run {
        out.push((TokenKind::Word, start..text.len()));
    }
    out
}

/// A word-level vocabulary with the five reserved tokens at ids 0..=4.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, TokenId>,
    pub min_freq: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered list of surfaces that must start
    /// with the reserved tokens.
    pub fn from_surfaces(surfaces: Vec<String>, min_freq: usize) -> Result<Self> {
        if surfaces.len() < SPECIALS.len() || surfaces[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Invalid("vocabulary must start with the reserved tokens".into()));
        }
        let mut ids = HashMap::with_capacity(surfaces.len());
        for (i, s) in surfaces.iter().enumerate() {
            if ids.insert(s.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary entry `{s}`")));
            }
        }
        Ok(Vocabulary {
            surfaces,
            ids,
            min_freq: min_freq.max(1),
        })
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn id_of(&self, surface: &str) -> TokenId {
        self.ids.get(surface).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.ids.contains_key(surface)
    }

    pub fn surface_of(&self, id: TokenId) -> Result<&str> {
        self.surfaces
            .get(id)
            .map(String::as_str)
            .ok_or(Error::UnknownTokenId(id))
    }

    pub fn encode<S: AsRef<str>>(&self, surfaces: &[S]) -> Vec<TokenId> {
        surfaces.iter().map(|s| self.id_of(s.as_ref())).collect()
    }

    pub fn encode_tokens(&self, tokens: &[Token]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id_of(&t.surface)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter().map(|&id| self.surface_of(id).map(str::to_string)).collect()
    }

    /// True if `id` is one of PAD, UNK, MASK, CLS, SEP.
    pub fn is_special(id: TokenId) -> bool {
        id < SPECIALS.len()
    }
}

/// Builds a vocabulary: reserved tokens first, then every surface seen at
/// least `min_freq` times (plus the `forced` surfaces regardless of count),
/// by descending frequency with ties broken lexicographically.
pub fn build_vocab<'a, I, F, S>(corpus: I, min_freq: usize, forced: F) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a CorpusRecord>,
    F: IntoIterator<Item = S>,
    S: Into<String>,
{
    if min_freq == 0 {
        return Err(Error::Invalid("min_freq must be at least 1".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut n_records = 0usize;
    for record in corpus {
        n_records += 1;
        for tok in tokenize(&record.text, record.language) {
            *counts.entry(tok.surface).or_default() += 1;
        }
    }
    if n_records == 0 {
        return Err(Error::Empty("corpus"));
    }
    let mut kept: BTreeMap<String, usize> = counts
        .iter()
        .filter(|(_, &c)| c >= min_freq)
        .map(|(s, &c)| (s.clone(), c))
        .collect();
    for f in forced {
        let f = normalize(&f.into());
        if f.is_empty() {
            continue;
        }
        let c = counts.get(&f).copied().unwrap_or(0);
        kept.entry(f).or_insert(c);
    }
    for s in SPECIALS {
        kept.remove(s);
    }
    let mut ordered: Vec<(String, usize)> = kept.into_iter().collect();
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let surfaces = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(ordered.into_iter().map(|(s, _)| s))
        .collect();
    Vocabulary::from_surfaces(surfaces, min_freq)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub language: LanguageCode,
    pub source_id: String,
    pub text: String,
}

impl CorpusRecord {
    pub fn new(language: LanguageCode, source_id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Invalid("corpus record text is empty".into()));
        }
        Ok(CorpusRecord {
            language,
            source_id: source_id.into(),
            text,
        })
    }

    pub fn token_count(&self) -> usize {
        tokenize(&self.text, self.language).len()
    }
}

/// Parses the `language<TAB>source_id<TAB>text` corpus format. Blank lines
/// are skipped.
pub fn parse_corpus(content: &str) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(lang), Some(id), Some(text)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse {
                line: line_no,
                message: "expected `language<TAB>source_id<TAB>text`".into(),
            });
        };
        let language: LanguageCode = lang.parse().map_err(|e: Error| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let record = CorpusRecord::new(language, id, text).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn format_corpus(records: &[CorpusRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{}", r.language, r.source_id, r.text);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub per_language_token_budget: usize,
    pub sampling_seed: u64,
}

impl CorpusConfig {
    pub const FULL_SCALE_BUDGET: usize = 26_800_000;
    pub const DESK_SCALE_BUDGET: usize = 50_000;

    pub fn full_scale(seed: u64) -> Self {
        CorpusConfig {
            per_language_token_budget: Self::FULL_SCALE_BUDGET,
            sampling_seed: seed,
        }
    }
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            per_language_token_budget: Self::DESK_SCALE_BUDGET,
            sampling_seed: 42,
        }
    }
}

/// Per-language seeded uniform record sampling: records of each language are
/// visited in a seeded random order and kept until the language's token
/// budget is first met or exceeded. Kept records are returned in input order.
pub fn downsample(corpus: &[CorpusRecord], config: &CorpusConfig) -> Result<Vec<CorpusRecord>> {
    if config.per_language_token_budget == 0 {
        return Err(Error::Invalid("token budget must be positive".into()));
    }
    let mut by_lang: BTreeMap<LanguageCode, Vec<usize>> = BTreeMap::new();
    for (i, r) in corpus.iter().enumerate() {
        by_lang.entry(r.language).or_default().push(i);
    }
    let mut keep = vec![false; corpus.len()];
    for (lang, mut indices) in by_lang {
        let lang_seed = config.sampling_seed ^ ((lang as u64 + 1) << 32);
        let mut rng = ChaCha8Rng::seed_from_u64(lang_seed);
        indices.shuffle(&mut rng);
        let mut total = 0usize;
        for i in indices {
            if total >= config.per_language_token_budget {
                break;
            }
            total += corpus[i].token_count();
            keep[i] = true;
        }
    }
    Ok(corpus
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect())
}
