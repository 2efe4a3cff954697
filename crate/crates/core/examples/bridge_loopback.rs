//! Serves a toy model over the line protocol on in-process pipes and checks
//! that scores survive the round trip.

use std::time::Duration;

use multidebias::backend::{score_local, LocalBackend, MaskedScoreRequest, MaskedScorer, RemoteBackend};
use multidebias::mlm::{init_model, MlmConfig};
use multidebias::textproc::{build_vocab, parse_corpus};

fn main() -> multidebias::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample/corpus.tsv");
    let corpus = parse_corpus(&std::fs::read_to_string(path)?)?;
    let vocab = build_vocab(&corpus, 1, Vec::<String>::new())?;
    let model = init_model(MlmConfig {
        vocab_size: vocab.len(),
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_seq_len: 32,
        ..Default::default()
    })?;

    let remote = RemoteBackend::loopback(
        LocalBackend::new(model.clone(), vocab.clone(), "toy")?,
        Duration::from_secs(5),
    )?;
    println!("connected to `{}`", remote.model());

    let tokens: Vec<String> = "she is a doctor .".split(' ').map(String::from).collect();
    let request = MaskedScoreRequest::new("demo-1", tokens, vec![0, 3]);
    println!("request:  {}", request.to_line()?);
    let wire = remote.score(&request)?;
    let local = score_local(&model, &vocab, &request)?;
    println!("response: {}", wire.to_line()?);
    for (a, b) in wire.positions.iter().zip(&local.positions) {
        println!(
            "position {}: remote {:.6} local {:.6}",
            a.position, a.gold_logprob, b.gold_logprob
        );
    }
    Ok(())
}
