//! Bias metrics over any [`MaskedScorer`](crate::backend::MaskedScorer):
//! CrowS-style pseudo-log-likelihood comparison, the similarity-weighted
//! gendered-term comparison (MBE), and the bias-score report.

mod crows;
mod mbe;
mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use crows::{crows_metric, format_crows_pairs, parse_crows_pairs, pseudo_loglik, shared_positions, CrowsPair};
pub use mbe::{analyze_gendered, build_mbe_pairs, jaccard, mbe_score, GenderedSentence, MbePair};
pub use report::{
    bias_score, bias_score_of, format_scores_csv, make_report, parse_scores_csv, round_half_up, BiasReport, ReportRow,
    ReportTable, ScoreEntry,
};

use crate::error::{Error, Result};
use crate::lang::{Attribute, LanguageCode};
use crate::selfdebias::{SelfDebiasConfig, SelfDebiasTemplate, TemplateRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Crows,
    Mbe,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Crows => "crows",
            MetricKind::Mbe => "mbe",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            MetricKind::Crows => "CrowS-Pairs",
            MetricKind::Mbe => "MBE",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "crows" | "crows-pairs" | "crowspairs" => Ok(MetricKind::Crows),
            "mbe" => Ok(MetricKind::Mbe),
            other => Err(Error::Invalid(format!("unknown metric `{other}`"))),
        }
    }
}

/// A percentage-valued metric over `n_pairs` scored pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub kind: MetricKind,
    pub value: f64,
    pub n_pairs: usize,
    /// Ids of pairs that could not be scored (no shared tokens).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

/// Which self-debias prompt to apply while scoring. With
/// `template_language = None` every pair uses the prompt in its own language;
/// otherwise the given language's prompt is used for all pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfDebiasContext {
    pub registry: TemplateRegistry,
    pub config: SelfDebiasConfig,
    pub template_language: Option<LanguageCode>,
}

impl SelfDebiasContext {
    pub fn multilingual(config: SelfDebiasConfig) -> Self {
        SelfDebiasContext {
            registry: TemplateRegistry::builtin(),
            config,
            template_language: None,
        }
    }

    pub fn monolingual(language: LanguageCode, config: SelfDebiasConfig) -> Self {
        SelfDebiasContext {
            registry: TemplateRegistry::builtin(),
            config,
            template_language: Some(language),
        }
    }

    pub fn template(&self, language: LanguageCode, attribute: Attribute) -> Result<&SelfDebiasTemplate> {
        self.registry
            .template_for(self.template_language.unwrap_or(language), attribute)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoringOptions {
    pub self_debias: Option<SelfDebiasContext>,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}
