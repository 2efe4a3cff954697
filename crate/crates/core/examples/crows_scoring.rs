//! Scores the sample CrowS-style pairs with a freshly trained toy model,
//! with and without self-debiasing.

use multidebias::backend::LocalBackend;
use multidebias::eval::{bias_score, crows_metric, parse_crows_pairs, ScoringOptions, SelfDebiasContext};
use multidebias::lexicon::TermLexicon;
use multidebias::mlm::{init_model, train, MlmConfig, TrainConfig};
use multidebias::pipeline::{fit_vocab, forced_surfaces};
use multidebias::selfdebias::{SelfDebiasConfig, TemplateRegistry};
use multidebias::textproc::parse_corpus;

fn main() -> multidebias::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample");
    let corpus = parse_corpus(&std::fs::read_to_string(format!("{dir}/corpus.tsv"))?)?;
    let pairs = parse_crows_pairs(&std::fs::read_to_string(format!("{dir}/crows_pairs.tsv"))?)?;

    let vocab = fit_vocab(
        &corpus,
        1,
        forced_surfaces(&TermLexicon::builtin(), &TemplateRegistry::builtin()),
        5000,
    )?;
    let config = MlmConfig {
        vocab_size: vocab.len(),
        d_model: 32,
        n_layers: 1,
        n_heads: 2,
        d_ff: 64,
        max_seq_len: 64,
        ..Default::default()
    };
    let (model, _) = train(init_model(config)?, &corpus, &vocab, &TrainConfig::default())?;
    let backend = LocalBackend::new(model, vocab, "toy")?;

    let plain = crows_metric(&backend, &pairs, &ScoringOptions::default())?;
    let debiased = crows_metric(
        &backend,
        &pairs,
        &ScoringOptions {
            self_debias: Some(SelfDebiasContext::multilingual(SelfDebiasConfig::default())),
        },
    )?;
    println!("pairs scored: {}", plain.n_pairs);
    println!(
        "plain:        metric {:.2}, bias {:.2}",
        plain.value,
        bias_score(plain.value)
    );
    println!(
        "self-debias:  metric {:.2}, bias {:.2}",
        debiased.value,
        bias_score(debiased.value)
    );
    Ok(())
}
