//! The `mdx` command line. Exit codes: 0 success, 1 runtime failure,
//! 2 invalid input.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::backend::{serve, BackendSpec, LocalBackend, MaskedScorer};
use crate::error::{Error, Result};
use crate::eval::{
    build_mbe_pairs, crows_metric, format_scores_csv, make_report, mbe_score, parse_crows_pairs, parse_scores_csv,
    ScoreEntry, ScoringOptions, SelfDebiasContext,
};
use crate::lang::{Attribute, LanguageCode};
use crate::lexicon::{parse_lexicon, TermLexicon};
use crate::mcda::{augment_corpus, AugmentMode};
use crate::mlm::{init_model, load_checkpoint, save_checkpoint, train, MlmConfig, PeftConfig, TrainConfig, TuningMode};
use crate::pipeline::{fit_vocab, forced_surfaces, run_pipeline, seed_from_env, PipelineConfig, SelfDebiasSection};
use crate::selfdebias::{parse_templates, SelfDebiasConfig, TemplateRegistry};
use crate::textproc::{format_corpus, parse_corpus, CorpusRecord};

#[derive(Debug, Parser)]
#[command(
    name = "mdx",
    version,
    about = "Multilingual debiasing toolkit for masked language models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a term-pair file and write it in canonical form.
    CompileTerms {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long, value_delimiter = ',')]
        languages: Vec<LanguageCode>,
        #[arg(long, value_delimiter = ',')]
        attributes: Vec<Attribute>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Swap sensitive terms in a corpus.
    Augment {
        /// Term-pair file; the built-in lexicon when omitted.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "gender")]
        attributes: Vec<Attribute>,
        #[arg(long, default_value = "two-sided")]
        mode: AugmentMode,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the toy masked LM and write a checkpoint.
    Train(TrainArgs),
    /// Score CrowS-style sentence pairs.
    ScoreCrowspairs {
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        score: ScoreArgs,
    },
    /// Score gendered-term likelihoods over a corpus.
    ScoreMbe {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[command(flatten)]
        score: ScoreArgs,
    },
    /// Merge score files into bias-score tables.
    Report {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run augment, train and evaluate from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        self_debias: bool,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Serve a checkpoint over the bridge protocol on stdin/stdout.
    ServeLocal {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus files with tab-separated language, id and text columns.
    #[arg(long = "corpus", required = true, num_args = 1..)]
    corpora: Vec<PathBuf>,
    #[arg(long, default_value = "full")]
    tuning: TuningMode,
    #[arg(long, default_value_t = 2)]
    epochs: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// JSON file with model dimensions; defaults otherwise.
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Existing checkpoint to continue from instead of a fresh model.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    min_freq: usize,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the per-step loss trace.
    #[arg(long)]
    loss: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// `local:<checkpoint>` or `bridge:<command line>`
    #[arg(long)]
    backend: BackendSpec,
    #[arg(long)]
    self_debias: bool,
    #[arg(long, default_value_t = 50.0)]
    lambda: f64,
    /// Use one language's prompts for every pair.
    #[arg(long)]
    template_language: Option<LanguageCode>,
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Row label in the score file.
    #[arg(long)]
    method: Option<String>,
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
    /// Score CSV to write; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ScoreArgs {
    fn options(&self) -> Result<ScoringOptions> {
        if !self.self_debias {
            return Ok(ScoringOptions::default());
        }
        let registry = match &self.templates {
            Some(p) => parse_templates(&read(p)?)?,
            None => TemplateRegistry::builtin(),
        };
        Ok(ScoringOptions {
            self_debias: Some(SelfDebiasContext {
                registry,
                config: SelfDebiasConfig::new(self.lambda)?,
                template_language: self.template_language,
            }),
        })
    }

    fn method(&self) -> String {
        self.method.clone().unwrap_or_else(|| {
            match (self.self_debias, self.template_language) {
                (false, _) => "Baseline",
                (true, Some(_)) => "SD",
                (true, None) => "MSD",
            }
            .into()
        })
    }

    fn emit(&self, entries: &[ScoreEntry]) -> Result<()> {
        let csv = format_scores_csv(entries)?;
        match &self.out {
            Some(p) => write(p, &csv)?,
            None => print!("{csv}"),
        }
        for e in entries {
            eprintln!(
                "{} {} {}: metric {:.2}, bias score {:.2} over {} pairs",
                e.metric,
                e.attribute,
                e.language,
                e.value,
                e.bias_score(),
                e.n_pairs
            );
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn load_lexicon(path: Option<&Path>) -> Result<TermLexicon> {
    match path {
        Some(p) => parse_lexicon(&read(p)?),
        None => Ok(TermLexicon::builtin()),
    }
}

fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    parse_corpus(&read(path)?)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::CompileTerms {
            lexicon,
            languages,
            attributes,
            out,
        } => {
            let lex = parse_lexicon(&read(&lexicon)?)?;
            let attrs = if attributes.is_empty() {
                Attribute::ALL.to_vec()
            } else {
                attributes
            };
            let langs = (!languages.is_empty()).then_some(languages.as_slice());
            let lex = lex.restrict(langs, &attrs);
            if lex.is_empty() {
                return Err(Error::Empty("lexicon after language/attribute filtering"));
            }
            let text = lex.to_file_string();
            match out {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
            eprintln!("{} term pairs over {} languages", lex.len(), lex.languages().len());
        }
        Command::Augment {
            lexicon,
            attributes,
            mode,
            input,
            out,
            report,
        } => {
            let lex = load_lexicon(lexicon.as_deref())?;
            let corpus = read_corpus(&input)?;
            if corpus.is_empty() {
                return Err(Error::Empty("corpus"));
            }
            let (augmented, rep) = augment_corpus(&corpus, &lex, &attributes, mode);
            write(&out, &format_corpus(&augmented))?;
            if let Some(p) = report {
                write(&p, &(serde_json::to_string_pretty(&rep)? + "\n"))?;
            }
            eprintln!(
                "{} records in, {} out, {} replacements",
                rep.records_in,
                rep.records_out,
                rep.total_replacements()
            );
        }
        Command::Train(args) => run_train(args)?,
        Command::ScoreCrowspairs { pairs, score } => {
            let backend = score.backend.open(Duration::from_secs(score.timeout_secs))?;
            let options = score.options()?;
            let all = parse_crows_pairs(&read(&pairs)?)?;
            if all.is_empty() {
                return Err(Error::Empty("pair file"));
            }
            let mut groups: std::collections::BTreeMap<(Attribute, LanguageCode), Vec<_>> = Default::default();
            for p in all {
                groups.entry((p.attribute, p.language)).or_default().push(p);
            }
            let method = score.method();
            let mut entries = Vec::new();
            for ((attribute, language), group) in groups {
                let m = crows_metric(backend.as_ref(), &group, &options)?;
                if !m.skipped.is_empty() {
                    eprintln!("skipped (no shared tokens): {}", m.skipped.join(", "));
                }
                entries.push(ScoreEntry::new(&method, attribute, language, &m));
            }
            score.emit(&entries)?;
        }
        Command::ScoreMbe { corpus, lexicon, score } => {
            let lex = load_lexicon(lexicon.as_deref())?;
            let backend = score.backend.open(Duration::from_secs(score.timeout_secs))?;
            let options = score.options()?;
            let records = read_corpus(&corpus)?;
            if records.is_empty() {
                return Err(Error::Empty("corpus"));
            }
            let mut by_lang: std::collections::BTreeMap<LanguageCode, Vec<String>> = Default::default();
            for r in records {
                by_lang.entry(r.language).or_default().push(r.text);
            }
            let method = score.method();
            let mut entries = Vec::new();
            for (language, sentences) in by_lang {
                let pairs = build_mbe_pairs(&sentences, &lex, language)?;
                let m = mbe_score(backend.as_ref(), &pairs, &options)?;
                entries.push(ScoreEntry::new(&method, Attribute::Gender, language, &m));
            }
            score.emit(&entries)?;
        }
        Command::Report { inputs, out } => {
            let mut entries = Vec::new();
            for p in &inputs {
                entries
                    .extend(parse_scores_csv(&read(p)?).map_err(|e| Error::Invalid(format!("{}: {e}", p.display())))?);
            }
            let report = make_report(&entries)?;
            report.write_dir(&out)?;
            print!("{}", report.to_text());
        }
        Command::Run {
            config,
            out,
            backend,
            self_debias,
            lambda,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(b) = backend {
                cfg.backend = Some(b);
                cfg.train = None;
                cfg.augment = None;
            }
            if self_debias && cfg.self_debias.is_none() {
                cfg.self_debias = Some(SelfDebiasSection::default());
            }
            if let Some(l) = lambda {
                cfg.self_debias.get_or_insert_with(SelfDebiasSection::default).lambda = l;
            }
            if let Some(seed) = seed_from_env()? {
                cfg.override_seed(seed);
            }
            let outcome = run_pipeline(&cfg)?;
            if !outcome.reused.is_empty() {
                eprintln!("reused stages: {}", outcome.reused.join(", "));
            }
            print!("{}", outcome.report.to_text());
        }
        Command::ServeLocal { checkpoint, name } => {
            let (model, vocab) = load_checkpoint(&checkpoint)?;
            let name = name.unwrap_or_else(|| {
                checkpoint
                    .file_stem()
                    .map_or("toy".into(), |s| s.to_string_lossy().into_owned())
            });
            let backend = LocalBackend::new(model, vocab, name)?;
            let stdout = io::stdout();
            serve(&backend, backend.name(), BufReader::new(io::stdin()), stdout.lock())?;
        }
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut corpus = Vec::new();
    for p in &args.corpora {
        corpus.extend(read_corpus(p)?);
    }
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let seed = seed_from_env()?.unwrap_or(args.seed);
    let mut tc = TrainConfig {
        epochs: args.epochs,
        seed,
        ..Default::default()
    };
    if let Some(b) = args.batch_size {
        tc.batch_size = b;
    }
    if let Some(lr) = args.learning_rate {
        tc.learning_rate = lr;
    }
    let (model, vocab) = match &args.init {
        Some(p) => load_checkpoint(p)?,
        None => {
            let mut mc: MlmConfig = match &args.model_config {
                Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Error::Config(e.to_string()))?,
                None => MlmConfig::default(),
            };
            if seed_from_env()?.is_some() {
                mc.init_seed = seed;
            }
            let forced = forced_surfaces(&TermLexicon::builtin(), &TemplateRegistry::builtin());
            let vocab = fit_vocab(&corpus, args.min_freq, forced, mc.vocab_size)?;
            mc.vocab_size = vocab.len();
            (init_model(mc)?, vocab)
        }
    };
    let model = match (args.tuning, model.tuning_mode()) {
        (mode, existing) if mode == existing => model,
        (mode, TuningMode::Full) => model.apply_peft(
            mode,
            PeftConfig {
                peft_init_seed: seed,
                ..Default::default()
            },
        )?,
        (mode, existing) => {
            return Err(Error::Invalid(format!(
                "checkpoint already uses {existing} tuning; cannot switch to {mode}"
            )))
        }
    };
    let (model, trace) = train(model, &corpus, &vocab, &tc)?;
    save_checkpoint(&model, &vocab, &args.out)?;
    if let Some(p) = &args.loss {
        write(p, &(serde_json::to_string_pretty(&trace)? + "\n"))?;
    }
    let means = trace.epoch_means();
    eprintln!(
        "trained {} steps ({} of {} parameters trainable); epoch losses {:?}",
        trace.steps.len(),
        model.trainable_param_count(),
        model.total_param_count(),
        means
    );
    Ok(())
}

/// Parses `args`, runs the command and maps errors to exit codes.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "mdx: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
