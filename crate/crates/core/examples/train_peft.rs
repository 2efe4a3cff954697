//! Trains the toy masked LM under each tuning mode and shows how many
//! parameters each one updates.

use multidebias::lexicon::TermLexicon;
use multidebias::mlm::{init_model, train, MlmConfig, PeftConfig, TrainConfig, TuningMode};
use multidebias::pipeline::{fit_vocab, forced_surfaces};
use multidebias::selfdebias::TemplateRegistry;
use multidebias::textproc::parse_corpus;

fn main() -> multidebias::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample/corpus.tsv");
    let corpus = parse_corpus(&std::fs::read_to_string(path)?)?;
    let forced = forced_surfaces(&TermLexicon::builtin(), &TemplateRegistry::builtin());
    let vocab = fit_vocab(&corpus, 1, forced, 5000)?;
    let config = MlmConfig {
        vocab_size: vocab.len(),
        d_model: 32,
        n_layers: 1,
        n_heads: 2,
        d_ff: 64,
        max_seq_len: 64,
        ..Default::default()
    };
    let tc = TrainConfig {
        epochs: 2,
        ..Default::default()
    };
    for mode in TuningMode::ALL {
        let mut model = init_model(config.clone())?;
        if mode != TuningMode::Full {
            model = model.apply_peft(mode, PeftConfig::default())?;
        }
        let (trainable, total) = (model.trainable_param_count(), model.total_param_count());
        let (_, trace) = train(model, &corpus, &vocab, &tc)?;
        let means = trace.epoch_means();
        println!(
            "{:<16} {trainable:>7} / {total} trainable, loss {:.3} -> {:.3}",
            mode.label(),
            means[0],
            means[means.len() - 1]
        );
    }
    Ok(())
}
