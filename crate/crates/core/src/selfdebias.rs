//! Decoding-time self-debiasing: compare each masked-token distribution
//! with the one obtained under a bias-eliciting prompt and damp the tokens
//! the prompt makes more likely.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backend::{query, MaskedScoreResponse, MaskedScorer};
use crate::error::{Error, Result};
use crate::lang::{Attribute, LanguageCode, Segmentation};
use crate::textproc::tokenize;

pub const BUILTIN_TEMPLATES: &str = include_str!("../data/templates.csv");
pub const DEFAULT_DECAY: f64 = 50.0;
const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfDebiasTemplate {
    pub language: LanguageCode,
    pub attribute: Attribute,
    pub prompt_text: String,
    /// False for maintainer renderings with no published source prompt.
    pub canonical: bool,
}

fn ends_sentence(s: &str) -> bool {
    s.ends_with(['.', '!', '?', '。', '！', '？'])
}

impl SelfDebiasTemplate {
    /// Prompt followed by the separator: the language's sentence-final mark
    /// (unless the prompt already ends a sentence), then a space for
    /// space-delimited languages.
    pub fn prefix(&self) -> String {
        let mut s = self.prompt_text.clone();
        if !ends_sentence(&s) {
            s.push_str(self.language.sentence_final());
        }
        if self.language.segmentation() == Segmentation::SpaceDelimited {
            s.push(' ');
        }
        s
    }

    pub fn prompted_text(&self, sentence: &str) -> String {
        format!("{}{sentence}", self.prefix())
    }

    /// Surface tokens of [`prefix`](Self::prefix); masked positions shift by this length.
    pub fn prefix_tokens(&self) -> Vec<String> {
        tokenize(&self.prefix(), self.language)
            .into_iter()
            .map(|t| t.surface)
            .collect()
    }
}

/// One template per (language, attribute).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TemplateRegistry {
    templates: BTreeMap<(LanguageCode, Attribute), SelfDebiasTemplate>,
}

impl TemplateRegistry {
    pub fn builtin() -> TemplateRegistry {
        parse_templates(BUILTIN_TEMPLATES).expect("built-in templates parse")
    }

    pub fn insert(&mut self, template: SelfDebiasTemplate) -> Result<()> {
        if template.prompt_text.trim().is_empty() {
            return Err(Error::Invalid("empty self-debias prompt".into()));
        }
        let key = (template.language, template.attribute);
        if self.templates.contains_key(&key) {
            return Err(Error::Invalid(format!("duplicate template for ({}, {})", key.0, key.1)));
        }
        self.templates.insert(key, template);
        Ok(())
    }

    pub fn template_for(&self, language: LanguageCode, attribute: Attribute) -> Result<&SelfDebiasTemplate> {
        self.templates
            .get(&(language, attribute))
            .ok_or_else(|| Error::MissingTemplate {
                language: language.to_string(),
                attribute: attribute.to_string(),
            })
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SelfDebiasTemplate> {
        self.templates.values()
    }

    pub fn languages(&self) -> Vec<LanguageCode> {
        let mut l: Vec<LanguageCode> = self.templates.keys().map(|k| k.0).collect();
        l.dedup();
        l
    }

    /// Keeps only templates in `languages`.
    pub fn restrict(&self, languages: &[LanguageCode]) -> TemplateRegistry {
        TemplateRegistry {
            templates: self
                .templates
                .iter()
                .filter(|(k, _)| languages.contains(&k.0))
                .map(|(k, v)| (*k, v.clone()))
                .collect(),
        }
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::from("# language,attribute,prompt_text[,status]\n");
        for t in self.iter() {
            let _ = write!(out, "{},{},{}", t.language, t.attribute, t.prompt_text);
            if !t.canonical {
                out.push_str(",translated");
            }
            out.push('\n');
        }
        out
    }
}

/// Parses `language,attribute,prompt_text[,translated]` rows. Prompts may
/// not contain commas. `#` starts a comment line.
pub fn parse_templates(content: &str) -> Result<TemplateRegistry> {
    let mut reg = TemplateRegistry::default();
    for (idx, raw) in content.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at_line = |e: Error| Error::Parse {
            line: line_no,
            message: e.to_string(),
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let canonical = match fields.len() {
            3 => true,
            4 if fields[3] == "translated" => false,
            4 => {
                return Err(at_line(Error::Invalid(format!("unknown status `{}`", fields[3]))));
            }
            n => {
                return Err(at_line(Error::Invalid(format!("expected 3 or 4 fields, found {n}"))));
            }
        };
        let template = SelfDebiasTemplate {
            language: fields[0].parse().map_err(at_line)?,
            attribute: fields[1].parse().map_err(at_line)?,
            prompt_text: crate::textproc::normalize(fields[2]),
            canonical,
        };
        reg.insert(template).map_err(at_line)?;
    }
    Ok(reg)
}

/// Looks up the built-in registry.
pub fn template_for(language: LanguageCode, attribute: Attribute) -> Result<SelfDebiasTemplate> {
    TemplateRegistry::builtin().template_for(language, attribute).cloned()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfDebiasConfig {
    pub decay_constant: f64,
}

impl Default for SelfDebiasConfig {
    fn default() -> Self {
        SelfDebiasConfig {
            decay_constant: DEFAULT_DECAY,
        }
    }
}

impl SelfDebiasConfig {
    pub fn new(decay_constant: f64) -> Result<Self> {
        let c = SelfDebiasConfig { decay_constant };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay_constant.is_finite() && self.decay_constant > 0.0) {
            return Err(Error::Config(format!(
                "decay constant must be positive and finite, got {}",
                self.decay_constant
            )));
        }
        Ok(())
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::NotADistribution(format!("{what} is empty")));
    }
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::NotADistribution(format!("{what} has entry {x}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(Error::NotADistribution(format!("{what} sums to {sum}")));
    }
    Ok(())
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Damped log-weights `ln p_plain(w) − λ·max(0, Δ(w))`, or `None` when no
/// token is flagged.
fn damped_log_weights(lp_plain: &[f64], p_plain: &[f64], p_diag: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let mut flagged = false;
    let w = lp_plain
        .iter()
        .zip(p_plain.iter().zip(p_diag))
        .map(|(&lp, (&pp, &pd))| {
            let delta = pd - pp;
            if delta > 0.0 {
                flagged = true;
                lp - lambda * delta
            } else {
                lp
            }
        })
        .collect();
    flagged.then_some(w)
}

fn renormalize_log(w: Vec<f64>) -> Result<Vec<f64>> {
    let lse = log_sum_exp(&w);
    if !lse.is_finite() {
        return Err(Error::NotADistribution("all probability mass suppressed".into()));
    }
    Ok(w.into_iter().map(|v| v - lse).collect())
}

/// Rescales `p_plain` given the diagnosis distribution `p_diag`:
/// `α(Δ) = 1` for `Δ ≤ 0`, `exp(−λΔ)` otherwise, then renormalizes.
/// Returns `p_plain` unchanged when no token is flagged.
pub fn rescale(p_plain: &[f64], p_diag: &[f64], config: &SelfDebiasConfig) -> Result<Vec<f64>> {
    config.validate()?;
    check_distribution(p_plain, "plain distribution")?;
    check_distribution(p_diag, "diagnosis distribution")?;
    if p_plain.len() != p_diag.len() {
        return Err(Error::NotADistribution(format!(
            "distributions differ in length ({} vs {})",
            p_plain.len(),
            p_diag.len()
        )));
    }
    let lp: Vec<f64> = p_plain.iter().map(|p| p.ln()).collect();
    match damped_log_weights(&lp, p_plain, p_diag, config.decay_constant) {
        None => Ok(p_plain.to_vec()),
        Some(w) => Ok(renormalize_log(w)?.into_iter().map(f64::exp).collect()),
    }
}

/// [`rescale`] on log-probabilities. Inputs are renormalized first, so
/// vectors that are normalized only to protocol tolerance are accepted.
pub fn rescale_log(lp_plain: &[f64], lp_diag: &[f64], config: &SelfDebiasConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if lp_plain.len() != lp_diag.len() || lp_plain.is_empty() {
        return Err(Error::NotADistribution(format!(
            "log-distributions have lengths {} and {}",
            lp_plain.len(),
            lp_diag.len()
        )));
    }
    if let Some(x) = lp_plain
        .iter()
        .chain(lp_diag)
        .find(|x| x.is_nan() || **x == f64::INFINITY)
    {
        return Err(Error::NotADistribution(format!("log-probability {x}")));
    }
    let lp = renormalize_log(lp_plain.to_vec())?;
    let ld = renormalize_log(lp_diag.to_vec())?;
    let pp: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
    let pd: Vec<f64> = ld.iter().map(|x| x.exp()).collect();
    match damped_log_weights(&lp, &pp, &pd, config.decay_constant) {
        None => Ok(lp),
        Some(w) => renormalize_log(w),
    }
}

/// Rescaled distributions for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct DebiasedDistributions {
    pub vocabulary: Vec<String>,
    /// Index of each position's gold surface in `vocabulary`, if it is a single entry.
    pub gold_index: Vec<Option<usize>>,
    pub logprobs: Vec<Vec<f64>>,
}

impl DebiasedDistributions {
    /// Rescaled log-probability of the gold surface at the `j`-th position.
    pub fn gold_logprob(&self, j: usize) -> Result<f64> {
        let g = self.gold_index[j].ok_or_else(|| {
            Error::InvalidResponse("self-debias needs the gold surface as a single vocabulary entry".into())
        })?;
        Ok(self.logprobs[j][g])
    }
}

fn full_vectors(resp: &MaskedScoreResponse) -> Result<Vec<&Vec<f64>>> {
    resp.positions
        .iter()
        .map(|p| {
            p.logprobs
                .as_ref()
                .ok_or_else(|| Error::InvalidResponse(format!("no distribution at position {}", p.position)))
        })
        .collect()
}

/// Queries `backend` on the sentence alone and with the template prompt
/// prepended (positions shifted by the prompt's token count), then returns
/// the rescaled log-distributions at `positions`.
pub fn self_debiased_mask_logprobs(
    backend: &dyn MaskedScorer,
    tokens: &[String],
    positions: &[usize],
    template: &SelfDebiasTemplate,
    config: &SelfDebiasConfig,
) -> Result<DebiasedDistributions> {
    config.validate()?;
    let first = positions.first().copied().unwrap_or(0);
    let at = |e: Error| Error::at_position(first, e);
    let plain = query(backend, tokens, positions, true).map_err(at)?;

    let prefix = template.prefix_tokens();
    let mut prompted = prefix.clone();
    prompted.extend_from_slice(tokens);
    let shifted: Vec<usize> = positions.iter().map(|p| p + prefix.len()).collect();
    let diag = query(backend, &prompted, &shifted, true).map_err(at)?;

    if plain.vocabulary != diag.vocabulary {
        return Err(at(Error::InvalidResponse(
            "plain and prompted queries returned different vocabularies".into(),
        )));
    }
    let lp_plain = full_vectors(&plain).map_err(at)?;
    let lp_diag = full_vectors(&diag).map_err(at)?;
    let logprobs = positions
        .iter()
        .zip(lp_plain.into_iter().zip(lp_diag))
        .map(|(&pos, (a, b))| rescale_log(a, b, config).map_err(|e| Error::at_position(pos, e)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DebiasedDistributions {
        vocabulary: plain.vocabulary.unwrap_or_default(),
        gold_index: plain.positions.iter().map(|p| p.gold_index).collect(),
        logprobs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MaskedScoreRequest, PositionScores};
    use proptest::prelude::*;
    use std::cell::RefCell;

    #[test]
    fn worked_example() {
        let out = rescale(&[0.8, 0.2], &[0.9, 0.1], &SelfDebiasConfig::default()).unwrap();
        let a = 0.8 * (-5.0f64).exp();
        let oracle = [a / (a + 0.2), 0.2 / (a + 0.2)];
        assert!((out[0] - oracle[0]).abs() < 1e-12 && (out[1] - oracle[1]).abs() < 1e-12);
        assert!((out[0] - 0.0263).abs() < 1e-4 && (out[1] - 0.9737).abs() < 1e-4);
    }

    #[test]
    fn identity_cases() {
        let p = [0.5, 0.3, 0.2];
        let cfg = SelfDebiasConfig::default();
        assert_eq!(rescale(&p, &p, &cfg).unwrap(), p.to_vec());
        // Diagnosis mass moves only onto tokens that are already likelier.
        let d = [0.5, 0.3, 0.2];
        assert_eq!(rescale(&p, &d, &cfg).unwrap(), p.to_vec());
    }

    #[test]
    fn bad_inputs() {
        let cfg = SelfDebiasConfig::default();
        assert!(rescale(&[0.5, 0.4], &[0.5, 0.5], &cfg).is_err());
        assert!(rescale(&[0.5, 0.5], &[1.0], &cfg).is_err());
        assert!(rescale(&[1.5, -0.5], &[0.5, 0.5], &cfg).is_err());
        assert!(rescale(&[], &[], &cfg).is_err());
        assert!(SelfDebiasConfig::new(0.0).is_err());
        assert!(SelfDebiasConfig::new(f64::INFINITY).is_err());
    }

    #[test]
    fn extreme_lambda_stays_normalized() {
        let cfg = SelfDebiasConfig::new(1e6).unwrap();
        let out = rescale(&[0.6, 0.4], &[0.7, 0.3], &cfg).unwrap();
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out[0] < 1e-300);
        let lp = rescale_log(&[-1e-300, -800.0], &[-800.0, -1e-300], &cfg).unwrap();
        assert!(lp.iter().all(|x| !x.is_nan()));
    }

    fn dist(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, len).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn output_is_distribution_with_ratio_and_monotonicity(
            (p, q) in (2usize..12).prop_flat_map(|n| (dist(n), dist(n))),
            lambda in 0.01f64..200.0,
        ) {
            let cfg = SelfDebiasConfig::new(lambda).unwrap();
            let out = rescale(&p, &q, &cfg).unwrap();
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(out.iter().all(|x| *x >= 0.0));
            let unflagged: Vec<usize> = (0..p.len()).filter(|&i| q[i] <= p[i]).collect();
            for &i in &unflagged {
                for &j in &unflagged {
                    prop_assert!((out[i] / out[j] - p[i] / p[j]).abs() <= 1e-9 * (p[i] / p[j]).max(1.0));
                }
            }
            for i in 0..p.len() {
                // Flagged tokens never gain relative to unflagged ones.
                if q[i] > p[i] {
                    if let Some(&j) = unflagged.first() {
                        prop_assert!(out[i] / out[j] <= p[i] / p[j] * (1.0 + 1e-12));
                    }
                }
            }
        }

        #[test]
        fn small_lambda_is_continuous(
            (p, q) in (2usize..12).prop_flat_map(|n| (dist(n), dist(n))),
        ) {
            let out = rescale(&p, &q, &SelfDebiasConfig::new(1e-6).unwrap()).unwrap();
            let tv: f64 = out.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
            prop_assert!(tv < 1e-4);
        }

        #[test]
        fn log_and_linear_agree(
            (p, q) in (2usize..8).prop_flat_map(|n| (dist(n), dist(n))),
        ) {
            let cfg = SelfDebiasConfig::default();
            let a = rescale(&p, &q, &cfg).unwrap();
            let lp: Vec<f64> = p.iter().map(|x| x.ln()).collect();
            let lq: Vec<f64> = q.iter().map(|x| x.ln()).collect();
            let b = rescale_log(&lp, &lq, &cfg).unwrap();
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y.exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn monotone_suppression() {
        let p = [0.25, 0.25, 0.5];
        let q = [0.4, 0.3, 0.3];
        let out = rescale(&p, &q, &SelfDebiasConfig::default()).unwrap();
        assert!(out[0] < out[1]);
    }

    #[test]
    fn templates_from_the_registry() {
        let reg = TemplateRegistry::builtin();
        assert_eq!(reg.len(), 15);
        let en = reg.template_for(LanguageCode::En, Attribute::Gender).unwrap();
        assert_eq!(
            en.prompt_text,
            "The following text discriminates against people because of their gender."
        );
        assert!(en.canonical);
        assert_eq!(
            template_for(LanguageCode::Zh, Attribute::Gender).unwrap().prompt_text,
            "以下文字因性别歧视人"
        );
        let ja = template_for(LanguageCode::Ja, Attribute::Religion).unwrap();
        assert_eq!(ja.prompt_text, "以下の文章は宗教に基づいて人々を差別しています");
        assert!(ja.canonical);
        let de = template_for(LanguageCode::De, Attribute::Race).unwrap();
        assert_eq!(
            de.prompt_text,
            "Der folgende Text diskriminiert Menschen aufgrund ihrer Rasse/Farbe"
        );
        assert!(!template_for(LanguageCode::Es, Attribute::Gender).unwrap().canonical);
        assert_eq!(parse_templates(&reg.to_file_string()).unwrap(), reg);
        let en_only = reg.restrict(&[LanguageCode::En]);
        let missing = en_only.template_for(LanguageCode::Zh, Attribute::Race);
        assert!(matches!(missing, Err(Error::MissingTemplate { .. })));
    }

    #[test]
    fn registry_errors() {
        assert!(matches!(
            parse_templates("EN,gender,a\nEN,gender,b\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_templates("XX,gender,a\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(parse_templates("EN,gender, \n").is_err());
        assert!(parse_templates("EN,gender,a,b,c\n").is_err());
    }

    #[test]
    fn separators() {
        let en = template_for(LanguageCode::En, Attribute::Gender).unwrap();
        assert_eq!(
            en.prompted_text("He is a nurse."),
            "The following text discriminates against people because of their gender. He is a nurse."
        );
        let zh = template_for(LanguageCode::Zh, Attribute::Gender).unwrap();
        assert_eq!(zh.prompted_text("他是护士。"), "以下文字因性别歧视人。他是护士。");
        assert_eq!(zh.prefix_tokens().len(), 11);
        let de = template_for(LanguageCode::De, Attribute::Race).unwrap();
        assert!(de.prefix().ends_with("Rasse/Farbe. "));
        assert_eq!(en.prefix_tokens().len(), 11);
    }

    /// Serves fixed plain/prompted tables and records every request.
    struct Scripted {
        plain: Vec<Vec<f64>>,
        diag: Vec<Vec<f64>>,
        log: RefCell<Vec<MaskedScoreRequest>>,
    }

    impl MaskedScorer for Scripted {
        fn score(&self, r: &MaskedScoreRequest) -> Result<MaskedScoreResponse> {
            self.log.borrow_mut().push(r.clone());
            let table = if r.text_tokens.len() > 3 {
                &self.diag
            } else {
                &self.plain
            };
            Ok(MaskedScoreResponse {
                request_id: r.request_id.clone(),
                vocabulary: Some(vec!["he".into(), "she".into()]),
                positions: r
                    .masked_positions
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| {
                        let lp: Vec<f64> = table[j].iter().map(|x| x.ln()).collect();
                        PositionScores {
                            position: p,
                            gold_logprob: lp[0],
                            gold_index: Some(0),
                            candidate_logprobs: None,
                            logprobs: Some(lp),
                        }
                    })
                    .collect(),
            })
        }
        fn name(&self) -> &str {
            "scripted"
        }
    }

    #[test]
    fn scripted_backend_matches_hand_rescale() {
        let backend = Scripted {
            plain: vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            diag: vec![vec![0.9, 0.1], vec![0.3, 0.7]],
            log: RefCell::new(Vec::new()),
        };
        let template = template_for(LanguageCode::En, Attribute::Gender).unwrap();
        let tokens: Vec<String> = ["he", "is", "."].map(String::from).to_vec();
        let cfg = SelfDebiasConfig::default();
        let out = self_debiased_mask_logprobs(&backend, &tokens, &[0, 2], &template, &cfg).unwrap();
        let expected0 = rescale(&[0.8, 0.2], &[0.9, 0.1], &cfg).unwrap();
        assert!((out.logprobs[0][0].exp() - expected0[0]).abs() < 1e-12);
        assert!((out.logprobs[1][1].exp() - 0.7).abs() < 1e-12);
        assert!(
            (out.gold_logprob(0).unwrap().exp() - 0.8 * (-5.0f64).exp() / (0.8 * (-5.0f64).exp() + 0.2)).abs() < 1e-12
        );

        let log = backend.log.borrow();
        assert_eq!(log.len(), 2);
        assert_eq!(log[0].masked_positions, vec![0, 2]);
        let k = template.prefix_tokens().len();
        assert_eq!(log[1].masked_positions, vec![k, k + 2]);
        assert_eq!(&log[1].text_tokens[k..], &tokens[..]);
    }

    #[test]
    fn identical_backend_is_identity() {
        let backend = Scripted {
            plain: vec![vec![0.6, 0.4]],
            diag: vec![vec![0.6, 0.4]],
            log: RefCell::new(Vec::new()),
        };
        let template = template_for(LanguageCode::En, Attribute::Gender).unwrap();
        let tokens: Vec<String> = ["he", "is", "."].map(String::from).to_vec();
        let out =
            self_debiased_mask_logprobs(&backend, &tokens, &[0], &template, &SelfDebiasConfig::default()).unwrap();
        assert!((out.logprobs[0][0] - 0.6f64.ln()).abs() < 1e-15);
    }
}
