use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{CompensatedSum, MetricKind, MetricScore, ScoringOptions};
use crate::backend::{query, MaskedScorer};
use crate::error::{Error, Result};
use crate::lang::{Attribute, LanguageCode};
use crate::lexicon::{fold_term, Gender, TermLexicon};
use crate::mcda::Augmenter;
use crate::selfdebias::self_debiased_mask_logprobs;
use crate::textproc::{tokenize_with_offsets, TokenKind};

/// A sentence split into surface tokens with its gendered-term positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderedSentence {
    pub text: String,
    pub tokens: Vec<String>,
    pub male_positions: Vec<usize>,
    pub female_positions: Vec<usize>,
    /// Lowercased content tokens that are not part of a gendered term.
    pub context: BTreeSet<String>,
}

/// Tokenizes `text` and marks tokens covered by gender lexicon terms.
pub fn analyze_gendered(augmenter: &Augmenter<'_>, text: &str, language: LanguageCode) -> GenderedSentence {
    let (norm, matches) = augmenter.find_matches(text, language);
    let (_, toks) = tokenize_with_offsets(text, language);
    let mut s = GenderedSentence {
        text: norm,
        tokens: Vec::with_capacity(toks.len()),
        male_positions: Vec::new(),
        female_positions: Vec::new(),
        context: BTreeSet::new(),
    };
    for (i, (tok, range)) in toks.into_iter().enumerate() {
        let hit = matches
            .iter()
            .find(|m| m.span.start <= range.start && range.end <= m.span.end)
            .filter(|m| augmenter.lexicon().pair(m.term).attribute == Attribute::Gender);
        match hit.map(|m| Gender::from(m.term.side)) {
            Some(Gender::Male) => s.male_positions.push(i),
            Some(Gender::Female) => s.female_positions.push(i),
            None => {
                if tok.kind != TokenKind::Punct {
                    s.context.insert(fold_term(&tok.surface, language));
                }
            }
        }
        s.tokens.push(tok.surface);
    }
    s
}

/// Jaccard index of two sets; 0 when both are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbePair {
    pub language: LanguageCode,
    pub female: GenderedSentence,
    pub male: GenderedSentence,
    pub similarity_weight: f64,
}

impl MbePair {
    pub fn female_text(&self) -> &str {
        &self.female.text
    }

    pub fn male_text(&self) -> &str {
        &self.male.text
    }

    /// Builds a pair with an explicit weight, checking that each side holds
    /// a term of its gender.
    pub fn new(
        female: GenderedSentence,
        male: GenderedSentence,
        language: LanguageCode,
        similarity_weight: f64,
    ) -> Result<Self> {
        if female.female_positions.is_empty() {
            return Err(Error::Invalid(format!("`{}` has no female-side term", female.text)));
        }
        if male.male_positions.is_empty() {
            return Err(Error::Invalid(format!("`{}` has no male-side term", male.text)));
        }
        if !(similarity_weight.is_finite() && (0.0..=1.0).contains(&similarity_weight)) {
            return Err(Error::Invalid(format!(
                "similarity weight {similarity_weight} outside [0, 1]"
            )));
        }
        Ok(MbePair {
            language,
            female,
            male,
            similarity_weight,
        })
    }
}

/// Splits `sentences` into female-only and male-only sets (sentences with
/// both or neither are dropped), pairs every female sentence with every male
/// one and weights each pair by the Jaccard index of their de-gendered
/// content tokens. Zero-weight pairs are dropped.
pub fn build_mbe_pairs<S: AsRef<str>>(
    sentences: &[S],
    lexicon: &TermLexicon,
    language: LanguageCode,
) -> Result<Vec<MbePair>> {
    let gender = lexicon.restrict(Some(&[language]), &[Attribute::Gender]);
    if gender.is_empty() {
        return Err(Error::Invalid(format!("lexicon has no gender pairs for {language}")));
    }
    let augmenter = Augmenter::new(&gender, &[Attribute::Gender]);
    let (mut female, mut male) = (Vec::new(), Vec::new());
    for s in sentences {
        let g = analyze_gendered(&augmenter, s.as_ref(), language);
        match (g.female_positions.is_empty(), g.male_positions.is_empty()) {
            (false, true) => female.push(g),
            (true, false) => male.push(g),
            _ => {}
        }
    }
    if female.is_empty() {
        return Err(Error::Empty("female-term sentences"));
    }
    if male.is_empty() {
        return Err(Error::Empty("male-term sentences"));
    }
    let mut pairs = Vec::new();
    for f in &female {
        for m in &male {
            let w = jaccard(&f.context, &m.context);
            if w > 0.0 {
                pairs.push(MbePair::new(f.clone(), m.clone(), language, w)?);
            }
        }
    }
    Ok(pairs)
}

fn mean_term_logprob(
    backend: &dyn MaskedScorer,
    s: &GenderedSentence,
    positions: &[usize],
    language: LanguageCode,
    options: &ScoringOptions,
) -> Result<f64> {
    let values: Vec<f64> = match &options.self_debias {
        Some(ctx) => {
            let template = ctx.template(language, Attribute::Gender)?;
            let d = self_debiased_mask_logprobs(backend, &s.tokens, positions, template, &ctx.config)?;
            (0..positions.len()).map(|j| d.gold_logprob(j)).collect::<Result<_>>()?
        }
        None => query(backend, &s.tokens, positions, false)?
            .positions
            .iter()
            .map(|p| p.gold_logprob)
            .collect(),
    };
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Weighted percentage of pairs in which the male term is likelier than the
/// female term (mean masked log-probability over each term's tokens, all
/// term tokens of a sentence masked together; ties count one half).
pub fn mbe_score(backend: &dyn MaskedScorer, pairs: &[MbePair], options: &ScoringOptions) -> Result<MetricScore> {
    if pairs.is_empty() {
        return Err(Error::Empty("MBE pair list"));
    }
    let mut num = CompensatedSum::default();
    let mut den = CompensatedSum::default();
    for p in pairs {
        let lf = mean_term_logprob(backend, &p.female, &p.female.female_positions, p.language, options)?;
        let lm = mean_term_logprob(backend, &p.male, &p.male.male_positions, p.language, options)?;
        let b = if lm > lf {
            1.0
        } else if lm == lf {
            0.5
        } else {
            0.0
        };
        num.add(p.similarity_weight * b);
        den.add(p.similarity_weight);
    }
    let total = den.value();
    if !(total > 0.0) {
        return Err(Error::Invalid("MBE pairs have zero total weight".into()));
    }
    Ok(MetricScore {
        kind: MetricKind::Mbe,
        value: 100.0 * num.value() / total,
        n_pairs: pairs.len(),
        skipped: Vec::new(),
    })
}
