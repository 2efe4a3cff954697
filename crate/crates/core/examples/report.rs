//! Turns per-language metric values into a bias-score table.

use multidebias::eval::{make_report, MetricKind, ScoreEntry};
use multidebias::{Attribute, LanguageCode};

fn main() -> multidebias::Result<()> {
    let values = [
        ("Baseline", [58.48, 47.50, 54.26, 46.42]),
        ("MCDA", [51.37, 45.83, 50.26, 56.98]),
        ("MD w/ Adapter Tune", [50.20, 48.33, 49.40, 50.07]),
    ];
    let langs = [LanguageCode::De, LanguageCode::Zh, LanguageCode::Es, LanguageCode::Ja];
    let mut entries = Vec::new();
    for (method, row) in values {
        for (language, value) in langs.into_iter().zip(row) {
            entries.push(ScoreEntry {
                method: method.into(),
                attribute: Attribute::Gender,
                language,
                metric: MetricKind::Crows,
                value,
                n_pairs: 100,
            });
        }
    }
    let report = make_report(&entries)?;
    print!("{}", report.to_text());
    Ok(())
}
