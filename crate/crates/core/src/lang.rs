//! Registered languages and sensitive attributes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// How a language separates words in running text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segmentation {
    /// Words are separated by whitespace; matching is case-insensitive.
    SpaceDelimited,
    /// No word separators; ideographs and kana are segmented per character.
    Cjk,
}

/// A registered language.
///
/// The registry is the enum itself: adding a language means adding a variant
/// and its row in [`LanguageCode::ALL`] plus the two lookup tables below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LanguageCode {
    En,
    De,
    Es,
    Zh,
    Ja,
}

impl LanguageCode {
    pub const ALL: [LanguageCode; 5] = [
        LanguageCode::En,
        LanguageCode::De,
        LanguageCode::Es,
        LanguageCode::Zh,
        LanguageCode::Ja,
    ];

    pub fn code(self) -> &'static str {
        match self {
            LanguageCode::En => "EN",
            LanguageCode::De => "DE",
            LanguageCode::Es => "ES",
            LanguageCode::Zh => "ZH",
            LanguageCode::Ja => "JA",
        }
    }

    pub fn segmentation(self) -> Segmentation {
        match self {
            LanguageCode::En | LanguageCode::De | LanguageCode::Es => Segmentation::SpaceDelimited,
            LanguageCode::Zh | LanguageCode::Ja => Segmentation::Cjk,
        }
    }

    pub fn is_cjk(self) -> bool {
        self.segmentation() == Segmentation::Cjk
    }

    /// Punctuation that ends a declarative sentence.
    pub fn sentence_final(self) -> &'static str {
        match self.segmentation() {
            Segmentation::SpaceDelimited => ".",
            Segmentation::Cjk => "。",
        }
    }

    /// Column order used in report tables: the four evaluation languages
    /// first, then anything else.
    pub fn table_rank(self) -> usize {
        match self {
            LanguageCode::De => 0,
            LanguageCode::Zh => 1,
            LanguageCode::Es => 2,
            LanguageCode::Ja => 3,
            LanguageCode::En => 4,
        }
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for LanguageCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        LanguageCode::ALL
            .into_iter()
            .find(|l| l.code() == upper)
            .ok_or_else(|| Error::UnknownLanguage(s.trim().to_string()))
    }
}

impl From<LanguageCode> for String {
    fn from(l: LanguageCode) -> String {
        l.code().to_string()
    }
}

impl TryFrom<String> for LanguageCode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

/// A protected attribute along which bias is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Gender,
    Race,
    Religion,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Gender, Attribute::Race, Attribute::Religion];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::Race => "race",
            Attribute::Religion => "religion",
        }
    }

    /// Parses a comma-separated attribute list such as `gender,race`.
    pub fn parse_list(s: &str) -> Result<Vec<Attribute>, Error> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let a: Attribute = part.parse()?;
            if !out.contains(&a) {
                out.push(a);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Attribute::ALL
            .into_iter()
            .find(|a| a.name() == lower)
            .ok_or_else(|| Error::UnknownAttribute(s.trim().to_string()))
    }
}
