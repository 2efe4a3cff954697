//! Runs the bundled augment -> train -> evaluate config into a temporary
//! directory, then runs it again to show stage reuse.

use std::path::Path;

use multidebias::pipeline::{run_pipeline, PipelineConfig};

fn main() -> multidebias::Result<()> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample/md_full.json");
    let mut cfg = PipelineConfig::load(&config)?;
    cfg.out = std::env::temp_dir().join("mdx-pipeline-example");

    let first = run_pipeline(&cfg)?;
    println!("{}\n", first.label);
    print!("{}", first.report.to_text());

    let second = run_pipeline(&cfg)?;
    println!("\nsecond run reused: {:?}", second.reused);
    println!("outputs in {}", cfg.out.display());
    Ok(())
}
