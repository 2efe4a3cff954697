//! Two-sided counterfactual augmentation of the bundled sample corpus.

use multidebias::lexicon::TermLexicon;
use multidebias::mcda::{augment_corpus, AugmentMode, Augmenter};
use multidebias::textproc::parse_corpus;
use multidebias::{Attribute, LanguageCode};

fn main() -> multidebias::Result<()> {
    let lexicon = TermLexicon::builtin();
    let aug = Augmenter::new(&lexicon, &[Attribute::Gender]);
    for (text, lang) in [
        ("She visited him and the boy.", LanguageCode::En),
        ("Vater und Sohn kochen heute.", LanguageCode::De),
        ("他是我的父亲。", LanguageCode::Zh),
    ] {
        let (swapped, n) = aug.augment_sentence(text, lang);
        println!("{lang}: {text}  ->  {swapped}  ({n} swaps)");
    }

    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample/corpus.tsv");
    let corpus = parse_corpus(&std::fs::read_to_string(path)?)?;
    let (augmented, report) = augment_corpus(&corpus, &lexicon, &[Attribute::Gender], AugmentMode::TwoSided);
    println!(
        "\n{} records in, {} out, {} replacements",
        report.records_in,
        augmented.len(),
        report.total_replacements()
    );
    Ok(())
}
