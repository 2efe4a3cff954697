use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::{MlmExample, ToyMlm};
use super::params::Params;
use crate::error::{Error, Result};
use crate::textproc::{tokenize, CorpusRecord, TokenId, Vocabulary, CLS_ID, MASK_ID, SEP_ID, SPECIALS};

/// Per-step training losses, with the epoch boundaries needed for epoch means.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub steps: Vec<f64>,
    pub steps_per_epoch: Vec<usize>,
}

impl LossTrace {
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps_per_epoch.len());
        let mut start = 0;
        for &n in &self.steps_per_epoch {
            let epoch = &self.steps[start..start + n];
            out.push(epoch.iter().sum::<f64>() / n as f64);
            start += n;
        }
        out
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Wraps a record as `[CLS] tokens [SEP]`, truncating to `max_len`.
pub fn encode_record(record: &CorpusRecord, vocab: &Vocabulary, max_len: usize) -> Vec<TokenId> {
    let tokens = tokenize(&record.text, record.language);
    let mut ids = Vec::with_capacity(tokens.len() + 2);
    ids.push(CLS_ID);
    ids.extend(vocab.encode_tokens(&tokens).into_iter().take(max_len.saturating_sub(2)));
    ids.push(SEP_ID);
    ids
}

/// Samples loss positions and corrupts them. UNK may be masked; the other
/// specials never are. Returns `None` when nothing is maskable.
pub fn mask_sequence(
    ids: &[TokenId],
    vocab_size: usize,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Option<MlmExample> {
    let mut candidates: Vec<usize> = (0..ids.len())
        .filter(|&i| ids[i] == crate::textproc::UNK_ID || !Vocabulary::is_special(ids[i]))
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let n_mask = ((config.mask_fraction * candidates.len() as f64).round() as usize).clamp(1, candidates.len());
    let (chosen, _) = candidates.partial_shuffle(rng, n_mask);
    let mut positions = chosen.to_vec();
    positions.sort_unstable();

    let mut corrupted = ids.to_vec();
    let gold = positions.iter().map(|&p| ids[p]).collect();
    for &p in &positions {
        let r: f64 = rng.gen();
        if r < config.mask_token_prob {
            corrupted[p] = MASK_ID;
        } else if r < config.mask_token_prob + config.random_token_prob {
            corrupted[p] = rng.gen_range(SPECIALS.len()..vocab_size);
        }
    }
    Some(MlmExample {
        ids: corrupted,
        positions,
        gold,
    })
}

fn decays(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    !(leaf.contains("bias") || leaf.contains("gain") || matches!(leaf, "bq" | "bk" | "bv" | "bo" | "b1" | "b2"))
}

struct AdamW {
    m: Params,
    v: Params,
    step: i32,
}

impl AdamW {
    fn new(params: &Params) -> Self {
        AdamW {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut ToyMlm, grads: &Params, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let trainable = model.trainable.clone();
        let params = model.params.tensors_mut();
        let grads = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(ms).zip(vs) {
            if !trainable.get(&p.group).copied().unwrap_or(false) {
                continue;
            }
            let decay = if decays(&p.name) { cfg.weight_decay } else { 0.0 };
            ndarray::Zip::from(p.value)
                .and(g.value)
                .and(m.value)
                .and(v.value)
                .for_each(|w, &g, m, v| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let update = (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
                    *w -= cfg.learning_rate * (update + decay * *w);
                });
        }
    }
}

/// Trains the trainable groups of `model` on `corpus` with masked-token
/// prediction. One generator seeded from `config.seed` drives shuffling,
/// masking and dropout, so the loss trace is a function of the inputs.
pub fn train(
    mut model: ToyMlm,
    corpus: &[CorpusRecord],
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<(ToyMlm, LossTrace)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let vocab_size = model.config.vocab_size;
    if vocab.len() > vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries but the model only {vocab_size}",
            vocab.len()
        )));
    }
    let sequences: Vec<Vec<TokenId>> = corpus
        .iter()
        .map(|r| encode_record(r, vocab, model.config.max_seq_len))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::new(&model.params);
    let mut trace = LossTrace::default();
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut steps = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<MlmExample> = chunk
                .iter()
                .filter_map(|&i| mask_sequence(&sequences[i], vocab_size, config, &mut rng))
                .collect();
            if batch.is_empty() {
                continue;
            }
            let (loss, grads) = model.loss_and_grad(&batch, Some(&mut rng))?;
            let step = trace.steps.len();
            if !loss.is_finite() {
                let bad = grads
                    .tensors()
                    .iter()
                    .filter(|t| t.value.iter().any(|v| !v.is_finite()))
                    .map(|t| t.name.clone())
                    .collect::<Vec<_>>();
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: format!("loss {loss}; non-finite gradients in [{}]", bad.join(", ")),
                });
            }
            opt.update(&mut model, &grads, config);
            trace.steps.push(loss);
            steps += 1;
        }
        trace.steps_per_epoch.push(steps);
    }
    if trace.is_empty() {
        return Err(Error::Empty("training corpus (no maskable tokens)"));
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::LanguageCode;
    use crate::mlm::{init_model, MlmConfig, PeftConfig, TuningMode};
    use crate::textproc::{build_vocab, UNK_ID};

    fn corpus(n: usize) -> Vec<CorpusRecord> {
        let subjects = ["he", "she", "the doctor", "the nurse", "my friend"];
        let verbs = ["reads", "writes", "likes", "sees"];
        let objects = ["a book", "the letter", "music", "the sea"];
        (0..n)
            .map(|i| {
                let text = format!("{} {} {} .", subjects[i % 5], verbs[(i / 5) % 4], objects[(i / 20) % 4]);
                CorpusRecord::new(LanguageCode::En, format!("s{i}"), text).unwrap()
            })
            .collect()
    }

    fn small_model(vocab: &Vocabulary) -> ToyMlm {
        init_model(MlmConfig {
            vocab_size: vocab.len(),
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 32,
            max_seq_len: 16,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn masking_respects_specials_and_counts() {
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ids = vec![CLS_ID, 7, 8, UNK_ID, 9, 10, 11, SEP_ID];
        for _ in 0..200 {
            let ex = mask_sequence(&ids, 20, &cfg, &mut rng).unwrap();
            assert_eq!(ex.positions.len(), 1); // round(0.15 * 6)
            for &p in &ex.positions {
                assert!(p != 0 && p != 7);
                assert_eq!(ex.gold[0], ids[p]);
            }
            assert_eq!(ex.ids[0], CLS_ID);
            assert_eq!(ex.ids[7], SEP_ID);
        }
        assert!(mask_sequence(&[CLS_ID, SEP_ID], 20, &cfg, &mut rng).is_none());
        let long: Vec<TokenId> = (5..45).collect();
        let ex = mask_sequence(&long, 50, &cfg, &mut rng).unwrap();
        assert_eq!(ex.positions.len(), 6);
    }

    #[test]
    fn corruption_split_is_roughly_80_10_10() {
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ids: Vec<TokenId> = std::iter::repeat_n(7, 20).collect();
        let (mut masked, mut kept, mut total) = (0, 0, 0);
        for _ in 0..5000 {
            let ex = mask_sequence(&ids, 1000, &cfg, &mut rng).unwrap();
            for &p in &ex.positions {
                total += 1;
                match ex.ids[p] {
                    MASK_ID => masked += 1,
                    7 => kept += 1,
                    _ => {}
                }
            }
        }
        let frac = |n: usize| n as f64 / total as f64;
        assert!((frac(masked) - 0.8).abs() < 0.02);
        // Random replacement lands on the gold id 1 time in 995.
        assert!((frac(kept) - 0.1).abs() < 0.02);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let data = corpus(200);
        let vocab = build_vocab(data.iter(), 1, std::iter::empty::<&str>()).unwrap();
        let cfg = TrainConfig::default();
        let (m1, t1) = train(small_model(&vocab), &data, &vocab, &cfg).unwrap();
        let (m2, t2) = train(small_model(&vocab), &data, &vocab, &cfg).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(m1, m2);
        assert!(t1.steps.iter().all(|l| l.is_finite() && *l >= 0.0));
        let means = t1.epoch_means();
        assert_eq!(means.len(), 2);
        assert!(means[1] < means[0], "{means:?}");
    }

    #[test]
    fn peft_training_leaves_base_untouched() {
        let data = corpus(60);
        let vocab = build_vocab(data.iter(), 1, std::iter::empty::<&str>()).unwrap();
        for mode in [TuningMode::Adapter, TuningMode::Prefix, TuningMode::Prompt] {
            let base = small_model(&vocab).apply_peft(mode, PeftConfig::default()).unwrap();
            let (trained, _) = train(base.clone(), &data, &vocab, &TrainConfig::default()).unwrap();
            for (before, after) in base.params().tensors().iter().zip(trained.params().tensors()) {
                if base.is_trainable(&before.group) {
                    continue;
                }
                let a: Vec<u64> = before.value.iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = after.value.iter().map(|v| v.to_bits()).collect();
                assert_eq!(a, b, "{mode:?} {}", before.name);
            }
            assert_ne!(base.params(), trained.params());
        }
    }

    #[test]
    fn empty_corpus_and_oversized_vocab() {
        let data = corpus(10);
        let vocab = build_vocab(data.iter(), 1, std::iter::empty::<&str>()).unwrap();
        let m = small_model(&vocab);
        assert!(matches!(
            train(m.clone(), &[], &vocab, &TrainConfig::default()),
            Err(Error::Empty(_))
        ));
        let tiny = init_model(MlmConfig {
            vocab_size: 6,
            d_model: 4,
            n_heads: 1,
            n_layers: 1,
            d_ff: 4,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(
            train(tiny, &data, &vocab, &TrainConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn weight_decay_skips_biases_and_gains() {
        assert!(decays("encoder.0.attention.wq"));
        assert!(decays("embeddings.token"));
        assert!(!decays("encoder.0.attention.bq"));
        assert!(!decays("embeddings.norm_gain"));
        assert!(!decays("head.output_bias"));
        assert!(!decays("adapter.1.ffn.down_bias"));
    }
}
