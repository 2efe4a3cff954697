use super::protocol::{MaskedScoreRequest, MaskedScoreResponse, PositionScores};
use super::MaskedScorer;
use crate::error::{Error, Result};
use crate::mlm::ToyMlm;
use crate::textproc::{TokenId, Vocabulary, CLS_ID, SEP_ID};

/// Scores a request with the toy model. Surfaces are encoded with `vocab`
/// (unknown surfaces become UNK) and wrapped in `[CLS] .. [SEP]`, exactly as
/// during training, so requested position `i` is model position `i + 1`.
pub fn score_local(model: &ToyMlm, vocab: &Vocabulary, request: &MaskedScoreRequest) -> Result<MaskedScoreResponse> {
    request.validate()?;
    let ids = wrap(vocab, &request.text_tokens);
    let shifted: Vec<usize> = request.masked_positions.iter().map(|p| p + 1).collect();
    let rows = model.forward_mlm(&ids, &shifted)?;
    let vocabulary = request.full_distribution.then(|| vocabulary_listing(model, vocab));
    let positions = request
        .masked_positions
        .iter()
        .zip(rows)
        .enumerate()
        .map(|(j, (&position, row))| {
            let gold = ids[position + 1];
            let candidate_logprobs = request
                .candidates
                .as_ref()
                .map(|c| c[j].iter().map(|s| row[vocab.id_of(s)]).collect());
            PositionScores {
                position,
                gold_logprob: row[gold],
                gold_index: request.full_distribution.then_some(gold),
                candidate_logprobs,
                logprobs: request.full_distribution.then_some(row),
            }
        })
        .collect();
    Ok(MaskedScoreResponse {
        request_id: request.request_id.clone(),
        vocabulary,
        positions,
    })
}

pub(crate) fn wrap(vocab: &Vocabulary, tokens: &[String]) -> Vec<TokenId> {
    let mut ids = Vec::with_capacity(tokens.len() + 2);
    ids.push(CLS_ID);
    ids.extend(vocab.encode(tokens));
    ids.push(SEP_ID);
    ids
}

/// One surface per output row. Rows past the end of `vocab` are listed as
/// `[UNUSED<i>]`.
fn vocabulary_listing(model: &ToyMlm, vocab: &Vocabulary) -> Vec<String> {
    (0..model.config().vocab_size)
        .map(|i| {
            vocab
                .surfaces()
                .get(i)
                .cloned()
                .unwrap_or_else(|| format!("[UNUSED{i}]"))
        })
        .collect()
}

/// In-process scorer over a toy model.
#[derive(Debug, Clone)]
pub struct LocalBackend {
    model: ToyMlm,
    vocab: Vocabulary,
    name: String,
}

impl LocalBackend {
    pub fn new(model: ToyMlm, vocab: Vocabulary, name: impl Into<String>) -> Result<Self> {
        if vocab.len() > model.config().vocab_size {
            return Err(Error::Config("vocabulary larger than the model's vocab_size".into()));
        }
        Ok(LocalBackend {
            model,
            vocab,
            name: name.into(),
        })
    }

    pub fn model(&self) -> &ToyMlm {
        &self.model
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }
}

impl MaskedScorer for LocalBackend {
    fn score(&self, request: &MaskedScoreRequest) -> Result<MaskedScoreResponse> {
        score_local(&self.model, &self.vocab, request)
    }

    fn name(&self) -> &str {
        &self.name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlm::{init_model, MlmConfig};

    fn backend() -> LocalBackend {
        let mut s: Vec<String> = crate::textproc::SPECIALS.iter().map(|s| s.to_string()).collect();
        s.extend(["he", "she", "reads", "a", "book"].map(String::from));
        let vocab = Vocabulary::from_surfaces(s, 1).unwrap();
        let model = init_model(MlmConfig {
            vocab_size: 12,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 8,
            max_seq_len: 8,
            ..Default::default()
        })
        .unwrap();
        LocalBackend::new(model, vocab, "toy").unwrap()
    }

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn matches_forward_exactly() {
        let b = backend();
        let req = MaskedScoreRequest::new("q", toks("he reads a zebra"), vec![0, 3])
            .with_full_distribution()
            .with_candidates(vec![vec!["she".into()], vec!["book".into(), "he".into()]]);
        let resp = b.score(&req).unwrap();
        resp.validate_against(&req).unwrap();
        assert_eq!(resp.request_id, "q");
        let ids = [CLS_ID, 5, 7, 8, crate::textproc::UNK_ID, SEP_ID];
        let rows = b.model().forward_mlm(&ids, &[1, 4]).unwrap();
        assert_eq!(resp.positions[0].gold_logprob, rows[0][5]);
        assert_eq!(resp.positions[1].gold_logprob, rows[1][1]);
        assert_eq!(
            resp.positions[0].candidate_logprobs.as_ref().unwrap(),
            &vec![rows[0][6]]
        );
        assert_eq!(
            resp.positions[1].candidate_logprobs.as_ref().unwrap(),
            &vec![rows[1][9], rows[1][5]]
        );
        let vocab = resp.vocabulary.unwrap();
        assert_eq!(vocab.len(), 12);
        assert_eq!(vocab[11], "[UNUSED11]");
        let mass: f64 = resp.positions[0]
            .logprobs
            .as_ref()
            .unwrap()
            .iter()
            .map(|x| x.exp())
            .sum();
        assert!((mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn length_and_range_errors() {
        let b = backend();
        let req = MaskedScoreRequest::new("q", toks("he reads a book he reads a"), vec![0]);
        assert!(matches!(b.score(&req), Err(Error::SequenceTooLong { len: 9, max: 8 })));
        let req = MaskedScoreRequest::new("q", toks("he reads"), vec![2]);
        assert!(matches!(b.score(&req), Err(Error::PositionOutOfRange { .. })));
    }
}
