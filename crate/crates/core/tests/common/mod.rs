//! Synthetic bilingual corpus with a controlled pronoun/profession skew.
#![allow(dead_code)]

use multidebias::eval::CrowsPair;
use multidebias::textproc::CorpusRecord;
use multidebias::{Attribute, LanguageCode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EN_MALE: [&str; 5] = ["doctor", "pilot", "lawyer", "farmer", "soldier"];
pub const EN_FEMALE: [&str; 5] = ["nurse", "teacher", "dancer", "secretary", "baker"];
pub const ZH_MALE: [&str; 5] = ["医生", "飞行员", "律师", "农民", "士兵"];
pub const ZH_FEMALE: [&str; 5] = ["护士", "老师", "舞者", "秘书", "保姆"];

const EN_TEMPLATES: [&str; 3] = ["{p} is a {x} .", "{p} works as a {x} .", "{p} wants to be a {x} ."];
const ZH_TEMPLATES: [&str; 3] = ["{p}是一名{x}。", "{p}的工作是{x}。", "{p}想成为{x}。"];

fn pronouns(lang: LanguageCode) -> (&'static str, &'static str) {
    match lang {
        LanguageCode::Zh => ("他", "她"),
        _ => ("he", "she"),
    }
}

fn fill(template: &str, pronoun: &str, profession: &str) -> String {
    template.replace("{p}", pronoun).replace("{x}", profession)
}

/// `n` sentences split evenly between English and Chinese. Each sentence
/// pairs a profession with its stereotyped pronoun with probability `skew`.
pub fn skewed_corpus(n: usize, skew: f64, seed: u64) -> Vec<CorpusRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let lang = if i % 2 == 0 { LanguageCode::En } else { LanguageCode::Zh };
            let (male_prof, female_prof, templates) = match lang {
                LanguageCode::Zh => (&ZH_MALE, &ZH_FEMALE, &ZH_TEMPLATES),
                _ => (&EN_MALE, &EN_FEMALE, &EN_TEMPLATES),
            };
            let (he, she) = pronouns(lang);
            let male_stereo = rng.gen_bool(0.5);
            let prof = if male_stereo { male_prof } else { female_prof }[rng.gen_range(0..5)];
            let stereo = rng.gen_bool(skew);
            let pronoun = if male_stereo == stereo { he } else { she };
            let t = templates[rng.gen_range(0..templates.len())];
            CorpusRecord::new(lang, format!("s{i}"), fill(t, pronoun, prof)).unwrap()
        })
        .collect()
}

/// Stereotyped vs flipped-pronoun sentences: 10 professions x 2 templates
/// per language, half male-stereotyped and half female-stereotyped.
pub fn template_pairs() -> Vec<CrowsPair> {
    let mut out = Vec::new();
    for lang in [LanguageCode::En, LanguageCode::Zh] {
        let (male_prof, female_prof, templates) = match lang {
            LanguageCode::Zh => (&ZH_MALE, &ZH_FEMALE, &ZH_TEMPLATES),
            _ => (&EN_MALE, &EN_FEMALE, &EN_TEMPLATES),
        };
        let (he, she) = pronouns(lang);
        for (profs, stereo, anti) in [(male_prof, he, she), (female_prof, she, he)] {
            for prof in profs.iter() {
                for t in &templates[..2] {
                    let id = format!("{}-{}", lang.code().to_lowercase(), out.len());
                    out.push(
                        CrowsPair::new(
                            id,
                            lang,
                            Attribute::Gender,
                            &fill(t, stereo, prof),
                            &fill(t, anti, prof),
                        )
                        .unwrap(),
                    );
                }
            }
        }
    }
    out
}
