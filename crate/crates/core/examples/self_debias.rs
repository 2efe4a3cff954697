//! Rescales a next-token distribution with the self-debias decay rule and
//! prints the prompt for each language.

use multidebias::selfdebias::{rescale, SelfDebiasConfig, TemplateRegistry};

fn main() -> multidebias::Result<()> {
    let plain = [0.5, 0.3, 0.2];
    let diagnosed = [0.7, 0.2, 0.1];
    for lambda in [1.0, 10.0, 50.0] {
        let out = rescale(&plain, &diagnosed, &SelfDebiasConfig::new(lambda)?)?;
        println!("lambda {lambda:>4}: {out:.4?}");
    }
    println!();
    for t in TemplateRegistry::builtin().iter() {
        println!("{} {}: {}", t.language, t.attribute, t.prompted_text("…"));
    }
    Ok(())
}
