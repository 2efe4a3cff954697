//! Builds gendered sentence pairs and scores them with a scripted scorer
//! that always prefers the male term.

use multidebias::backend::{MaskedScoreRequest, MaskedScoreResponse, MaskedScorer, PositionScores};
use multidebias::eval::{build_mbe_pairs, mbe_score, ScoringOptions};
use multidebias::lexicon::TermLexicon;
use multidebias::LanguageCode;

struct PrefersMale;

impl MaskedScorer for PrefersMale {
    fn score(&self, r: &MaskedScoreRequest) -> multidebias::Result<MaskedScoreResponse> {
        let positions = r
            .masked_positions
            .iter()
            .map(|&p| PositionScores {
                position: p,
                gold_logprob: if r.text_tokens[p] == "he" { -0.5 } else { -2.0 },
                gold_index: None,
                candidate_logprobs: None,
                logprobs: None,
            })
            .collect();
        Ok(MaskedScoreResponse {
            request_id: r.request_id.clone(),
            vocabulary: None,
            positions,
        })
    }

    fn name(&self) -> &str {
        "prefers-male"
    }
}

fn main() -> multidebias::Result<()> {
    let sentences = [
        "he sings in the choir .",
        "she sings in the choir .",
        "she reads a book .",
        "he cooks dinner .",
    ];
    let pairs = build_mbe_pairs(&sentences, &TermLexicon::builtin(), LanguageCode::En)?;
    for p in &pairs {
        println!("{:.3}  {}  |  {}", p.similarity_weight, p.female_text(), p.male_text());
    }
    let score = mbe_score(&PrefersMale, &pairs, &ScoringOptions::default())?;
    println!("MBE = {:.2} over {} pairs", score.value, score.n_pairs);
    Ok(())
}
