//! Config-driven augment -> train -> evaluate runs with a hashed manifest
//! so that unchanged stages are reused on rerun.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::backend::{BackendSpec, LocalBackend, MaskedScorer, DEFAULT_TIMEOUT};
use crate::error::{Error, Result};
use crate::eval::{
    build_mbe_pairs, crows_metric, make_report, mbe_score, parse_crows_pairs, parse_scores_csv, BiasReport, CrowsPair,
    ScoreEntry, ScoringOptions, SelfDebiasContext,
};
use crate::lang::{Attribute, LanguageCode};
use crate::lexicon::{parse_lexicon, TermLexicon};
use crate::mcda::{augment_corpus, AugmentMode};
use crate::mlm::{init_model, load_checkpoint, save_checkpoint, train, MlmConfig, PeftConfig, TrainConfig, TuningMode};
use crate::selfdebias::{parse_templates, SelfDebiasConfig, TemplateRegistry};
use crate::textproc::{
    build_vocab, downsample, format_corpus, parse_corpus, tokenize, CorpusConfig, CorpusRecord, Vocabulary,
};

pub const CONFIG_VERSION: u32 = 1;
pub const SEED_ENV: &str = "MDX_SEED";

pub const CORPUS_FILE: &str = "corpus.tsv";
pub const AUGMENT_REPORT_FILE: &str = "augment_report.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default)]
    pub tuning: TuningMode,
    #[serde(default)]
    pub peft: PeftConfig,
    #[serde(default)]
    pub model: MlmConfig,
    #[serde(default)]
    pub optimizer: TrainConfig,
    #[serde(default = "one")]
    pub min_freq: usize,
}

fn one() -> usize {
    1
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            tuning: TuningMode::Full,
            peft: PeftConfig::default(),
            model: MlmConfig::default(),
            optimizer: TrainConfig::default(),
            min_freq: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default)]
    pub crows_pairs: Vec<PathBuf>,
    #[serde(default)]
    pub mbe_corpora: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfDebiasSection {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Use this language's prompts for every pair instead of each pair's own.
    #[serde(default)]
    pub template_language: Option<LanguageCode>,
    #[serde(default)]
    pub templates: Option<PathBuf>,
}

fn default_lambda() -> f64 {
    SelfDebiasConfig::default().decay_constant
}

impl Default for SelfDebiasSection {
    fn default() -> Self {
        SelfDebiasSection {
            lambda: default_lambda(),
            template_language: None,
            templates: None,
        }
    }
}

fn default_attributes() -> Vec<Attribute> {
    vec![Attribute::Gender]
}

/// One pipeline run. Relative paths in a config file are resolved against
/// the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    #[serde(default)]
    pub corpora: Vec<PathBuf>,
    /// Restricts corpora, lexicon and evaluation data to these languages.
    #[serde(default)]
    pub languages: Option<Vec<LanguageCode>>,
    /// Term-pair file; the built-in lexicon when absent.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default = "default_attributes")]
    pub attributes: Vec<Attribute>,
    #[serde(default)]
    pub downsample: Option<CorpusConfig>,
    #[serde(default)]
    pub augment: Option<AugmentMode>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub evaluation: EvalSection,
    #[serde(default)]
    pub self_debias: Option<SelfDebiasSection>,
    /// Model to evaluate when no training is configured.
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    pub out: PathBuf,
}

impl PipelineConfig {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            corpora: Vec::new(),
            languages: None,
            lexicon: None,
            attributes: default_attributes(),
            downsample: None,
            augment: None,
            train: None,
            evaluation: EvalSection::default(),
            self_debias: None,
            backend: None,
            timeout_secs: None,
            out: out.into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("pipeline config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.corpora.iter_mut().for_each(fix);
        self.evaluation.crows_pairs.iter_mut().for_each(fix);
        self.evaluation.mbe_corpora.iter_mut().for_each(fix);
        if let Some(p) = &mut self.lexicon {
            fix(p);
        }
        if let Some(p) = self.self_debias.as_mut().and_then(|s| s.templates.as_mut()) {
            fix(p);
        }
        fix(&mut self.out);
        if let Some(spec) = &self.backend {
            if let Some(rest) = spec.strip_prefix("local:") {
                if Path::new(rest).is_relative() {
                    self.backend = Some(format!("local:{}", base.join(rest).display()));
                }
            }
        }
    }

    /// Replaces every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(t) = &mut self.train {
            t.optimizer.seed = seed;
            t.model.init_seed = seed;
            t.peft.peft_init_seed = seed;
        }
        if let Some(d) = &mut self.downsample {
            d.sampling_seed = seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Invalid(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.attributes.is_empty() {
            return Err(Error::Invalid("attribute set is empty".into()));
        }
        if matches!(&self.languages, Some(l) if l.is_empty()) {
            return Err(Error::Invalid("language restriction is empty".into()));
        }
        let paths = self
            .corpora
            .iter()
            .chain(&self.evaluation.crows_pairs)
            .chain(&self.evaluation.mbe_corpora)
            .chain(&self.lexicon)
            .chain(self.self_debias.as_ref().and_then(|s| s.templates.as_ref()));
        for p in paths {
            if !p.exists() {
                return Err(Error::Invalid(format!("{} does not exist", p.display())));
            }
        }
        if self.evaluation.crows_pairs.is_empty() && self.evaluation.mbe_corpora.is_empty() {
            return Err(Error::Invalid("no evaluation data configured".into()));
        }
        match (&self.train, &self.backend) {
            (Some(t), None) => {
                if self.corpora.is_empty() {
                    return Err(Error::Invalid("training needs at least one corpus".into()));
                }
                t.model.validate()?;
                t.peft.validate()?;
                t.optimizer.validate()?;
                if t.min_freq == 0 {
                    return Err(Error::Invalid("min_freq must be at least 1".into()));
                }
            }
            (Some(_), Some(_)) => {
                return Err(Error::Invalid("`train` and `backend` are mutually exclusive".into()));
            }
            (None, None) => return Err(Error::Invalid("configure either `train` or `backend`".into())),
            (None, Some(spec)) => {
                spec.parse::<BackendSpec>()?;
            }
        }
        if self.augment.is_some() && self.train.is_none() {
            return Err(Error::Invalid("augmentation requires a `train` section".into()));
        }
        if let Some(sd) = &self.self_debias {
            SelfDebiasConfig::new(sd.lambda)?;
        }
        if let Some(d) = &self.downsample {
            if d.per_language_token_budget == 0 {
                return Err(Error::Invalid("token budget must be positive".into()));
            }
        }
        Ok(())
    }

    fn is_monolingual(&self) -> bool {
        matches!(&self.languages, Some(l) if l.len() == 1)
    }

    /// Report row label for this run.
    pub fn method_label(&self) -> String {
        let tuning = self.train.as_ref().map(|t| t.tuning).unwrap_or_default();
        let suffix = |base: &str| match tuning {
            TuningMode::Full => base.to_string(),
            m => format!("{base} w/ {}", m.label()),
        };
        match (self.augment.is_some(), &self.self_debias) {
            (true, Some(_)) => format!("MD w/ {}", tuning.label()),
            (true, None) => suffix(if self.is_monolingual() { "CDA" } else { "MCDA" }),
            (false, Some(sd)) => {
                if sd.template_language.is_some() || self.is_monolingual() {
                    "SD".into()
                } else {
                    "MSD".into()
                }
            }
            (false, None) => "Baseline".into(),
        }
    }

    fn keeps(&self, language: LanguageCode) -> bool {
        self.languages.as_ref().is_none_or(|l| l.contains(&language))
    }

    fn timeout(&self) -> Duration {
        self.timeout_secs.map(Duration::from_secs).unwrap_or(DEFAULT_TIMEOUT)
    }
}

/// Reads `MDX_SEED`; an unparsable value is a validation error.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Invalid(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Option<Manifest> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn reusable(&self, stage: &str, key: &str, dir: &Path) -> bool {
        let Some(rec) = self.stages.get(stage) else {
            return false;
        };
        rec.key == key
            && !rec.artifacts.is_empty()
            && rec
                .artifacts
                .iter()
                .all(|(name, hash)| file_hash(&dir.join(name)).is_ok_and(|h| &h == hash))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub label: String,
    pub report: BiasReport,
    /// Stages skipped because their manifest entry was still valid.
    pub reused: Vec<&'static str>,
}

fn stage_err(stage: &'static str, artifact: PathBuf) -> impl FnOnce(Error) -> Error {
    move |source| Error::Stage {
        stage,
        artifact,
        source: Box::new(source),
    }
}

fn write(path: &Path, content: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn load_lexicon(cfg: &PipelineConfig) -> Result<TermLexicon> {
    let lex = match &cfg.lexicon {
        Some(p) => parse_lexicon(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => TermLexicon::builtin(),
    };
    Ok(lex.restrict(cfg.languages.as_deref(), &cfg.attributes))
}

fn load_templates(cfg: &PipelineConfig) -> Result<TemplateRegistry> {
    match cfg.self_debias.as_ref().and_then(|s| s.templates.as_ref()) {
        Some(p) => parse_templates(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => Ok(TemplateRegistry::builtin()),
    }
}

fn read_corpora(paths: &[PathBuf], cfg: &PipelineConfig) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for p in paths {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        out.extend(parse_corpus(&text)?.into_iter().filter(|r| cfg.keeps(r.language)));
    }
    Ok(out)
}

/// Surfaces kept in the vocabulary regardless of corpus frequency: every
/// lexicon term and every self-debias prompt token.
pub fn forced_surfaces(lexicon: &TermLexicon, templates: &TemplateRegistry) -> Vec<String> {
    let mut out: Vec<String> = lexicon
        .pairs()
        .iter()
        .flat_map(|p| {
            [&p.left, &p.right]
                .into_iter()
                .flat_map(|t| tokenize(t, p.language))
                .map(|t| t.surface)
                .collect::<Vec<_>>()
        })
        .collect();
    out.extend(templates.iter().flat_map(|t| t.prefix_tokens()));
    out
}

/// Builds the vocabulary, keeping at most `max_size` entries (reserved
/// tokens, then by frequency).
pub fn fit_vocab(corpus: &[CorpusRecord], min_freq: usize, forced: Vec<String>, max_size: usize) -> Result<Vocabulary> {
    let vocab = build_vocab(corpus, min_freq, forced)?;
    if vocab.len() <= max_size {
        return Ok(vocab);
    }
    Vocabulary::from_surfaces(vocab.surfaces()[..max_size].to_vec(), vocab.min_freq)
}

fn stage_key(parts: &serde_json::Value) -> String {
    sha256_hex(parts.to_string().as_bytes())
}

fn input_hashes(paths: &[PathBuf]) -> Result<Vec<String>> {
    paths.iter().map(|p| file_hash(p)).collect()
}

/// Runs every configured stage, reusing stages whose inputs and outputs are
/// unchanged since the last run into the same directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let out = cfg.out.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let previous = Manifest::load(&out).unwrap_or_default();
    let mut manifest = Manifest {
        config_sha256: sha256_hex(serde_json::to_string(cfg)?.as_bytes()),
        stages: BTreeMap::new(),
    };
    let mut reused = Vec::new();
    let lexicon = load_lexicon(cfg)?;
    let templates = load_templates(cfg)?;
    let lexicon_text = lexicon.to_file_string();

    let mut upstream = String::new();
    if let Some(section) = &cfg.train {
        // Corpus preparation: filter, downsample, augment.
        let corpus_path = out.join(CORPUS_FILE);
        let key = stage_key(&json!([
            "augment",
            input_hashes(&cfg.corpora)?,
            cfg.languages,
            cfg.downsample,
            cfg.augment,
            cfg.attributes,
            lexicon_text,
        ]));
        if previous.reusable("augment", &key, &out) {
            reused.push("augment");
            manifest
                .stages
                .insert("augment".into(), previous.stages["augment"].clone());
        } else {
            let err = stage_err("augment", corpus_path.clone());
            let result = (|| -> Result<StageRecord> {
                let mut corpus = read_corpora(&cfg.corpora, cfg)?;
                if corpus.is_empty() {
                    return Err(Error::Empty("training corpus"));
                }
                if let Some(d) = &cfg.downsample {
                    corpus = downsample(&corpus, d)?;
                }
                let mut artifacts = BTreeMap::new();
                if let Some(mode) = cfg.augment {
                    let (aug, report) = augment_corpus(&corpus, &lexicon, &cfg.attributes, mode);
                    corpus = aug;
                    let report_path = out.join(AUGMENT_REPORT_FILE);
                    let text = serde_json::to_string_pretty(&report)? + "\n";
                    write(&report_path, &text)?;
                    artifacts.insert(AUGMENT_REPORT_FILE.to_string(), sha256_hex(text.as_bytes()));
                }
                let text = format_corpus(&corpus);
                write(&corpus_path, &text)?;
                artifacts.insert(CORPUS_FILE.to_string(), sha256_hex(text.as_bytes()));
                Ok(StageRecord { key, artifacts })
            })();
            manifest.stages.insert("augment".into(), result.map_err(err)?);
        }
        manifest.save(&out)?;
        upstream = manifest.stages["augment"].artifacts[CORPUS_FILE].clone();

        let ckpt_path = out.join(CHECKPOINT_FILE);
        let key = stage_key(&json!([
            "train",
            upstream,
            section,
            lexicon_text,
            templates.to_file_string()
        ]));
        if previous.reusable("train", &key, &out) {
            reused.push("train");
            manifest.stages.insert("train".into(), previous.stages["train"].clone());
        } else {
            let err = stage_err("train", ckpt_path.clone());
            let result = (|| -> Result<StageRecord> {
                let text = fs::read_to_string(&corpus_path).map_err(|e| Error::io(&corpus_path, e))?;
                let corpus = parse_corpus(&text)?;
                let vocab = fit_vocab(
                    &corpus,
                    section.min_freq,
                    forced_surfaces(&lexicon, &templates),
                    section.model.vocab_size,
                )?;
                let model_cfg = MlmConfig {
                    vocab_size: vocab.len(),
                    ..section.model.clone()
                };
                let mut model = init_model(model_cfg)?;
                if section.tuning != TuningMode::Full {
                    model = model.apply_peft(section.tuning, section.peft.clone())?;
                }
                let (model, trace) = train(model, &corpus, &vocab, &section.optimizer)?;
                save_checkpoint(&model, &vocab, &ckpt_path)?;
                let loss = serde_json::to_string_pretty(&trace)? + "\n";
                write(&out.join(LOSS_FILE), &loss)?;
                let mut artifacts = BTreeMap::new();
                artifacts.insert(CHECKPOINT_FILE.to_string(), file_hash(&ckpt_path)?);
                artifacts.insert(LOSS_FILE.to_string(), sha256_hex(loss.as_bytes()));
                Ok(StageRecord { key, artifacts })
            })();
            manifest.stages.insert("train".into(), result.map_err(err)?);
        }
        manifest.save(&out)?;
        upstream = manifest.stages["train"].artifacts[CHECKPOINT_FILE].clone();
    }

    let label = cfg.method_label();
    let scores_path = out.join(SCORES_FILE);
    let err = stage_err("evaluate", scores_path.clone());
    let key = stage_key(&json!([
        "evaluate",
        upstream,
        cfg.backend,
        cfg.languages,
        cfg.attributes,
        cfg.evaluation,
        input_hashes(&cfg.evaluation.crows_pairs)?,
        input_hashes(&cfg.evaluation.mbe_corpora)?,
        cfg.self_debias,
        lexicon_text,
        label,
    ]));
    // A bridge's model can change behind the same command line.
    let local = !matches!(
        cfg.backend.as_deref().map(str::parse::<BackendSpec>),
        Some(Ok(BackendSpec::Bridge(_)))
    );
    if local && previous.reusable("evaluate", &key, &out) {
        let text = fs::read_to_string(&scores_path).map_err(|e| Error::io(&scores_path, e))?;
        let report = parse_scores_csv(&text).and_then(|e| make_report(&e)).map_err(err)?;
        reused.push("evaluate");
        manifest
            .stages
            .insert("evaluate".into(), previous.stages["evaluate"].clone());
        manifest.save(&out)?;
        return Ok(PipelineOutcome { label, report, reused });
    }
    let result = (|| -> Result<(StageRecord, BiasReport)> {
        let backend: Box<dyn MaskedScorer + Send + Sync> = match &cfg.backend {
            Some(spec) => spec.parse::<BackendSpec>()?.open(cfg.timeout())?,
            None => {
                let (model, vocab) = load_checkpoint(&out.join(CHECKPOINT_FILE))?;
                Box::new(LocalBackend::new(model, vocab, label.clone())?)
            }
        };
        let options = ScoringOptions {
            self_debias: cfg.self_debias.as_ref().map(|sd| SelfDebiasContext {
                registry: templates.clone(),
                config: SelfDebiasConfig {
                    decay_constant: sd.lambda,
                },
                template_language: sd.template_language,
            }),
        };
        let entries = evaluate(cfg, &label, backend.as_ref(), &lexicon, &options)?;
        let report = make_report(&entries)?;
        let mut artifacts = BTreeMap::new();
        for path in report.write_dir(&out)? {
            let name = path.file_name().expect("file name").to_string_lossy().into_owned();
            artifacts.insert(name, file_hash(&path)?);
        }
        Ok((StageRecord { key, artifacts }, report))
    })();
    let (record, report) = result.map_err(err)?;
    manifest.stages.insert("evaluate".into(), record);
    manifest.save(&out)?;
    Ok(PipelineOutcome { label, report, reused })
}

/// Scores every configured dataset and returns one entry per
/// (metric, attribute, language) group.
pub fn evaluate(
    cfg: &PipelineConfig,
    label: &str,
    backend: &dyn MaskedScorer,
    lexicon: &TermLexicon,
    options: &ScoringOptions,
) -> Result<Vec<ScoreEntry>> {
    let mut entries = Vec::new();
    let mut groups: BTreeMap<(Attribute, LanguageCode), Vec<CrowsPair>> = BTreeMap::new();
    for p in &cfg.evaluation.crows_pairs {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        for pair in parse_crows_pairs(&text)? {
            if cfg.keeps(pair.language) && cfg.attributes.contains(&pair.attribute) {
                groups.entry((pair.attribute, pair.language)).or_default().push(pair);
            }
        }
    }
    for ((attribute, language), pairs) in groups {
        let score = crows_metric(backend, &pairs, options)?;
        entries.push(ScoreEntry::new(label, attribute, language, &score));
    }
    if cfg.attributes.contains(&Attribute::Gender) {
        let records = read_corpora(&cfg.evaluation.mbe_corpora, cfg)?;
        let mut by_lang: BTreeMap<LanguageCode, Vec<String>> = BTreeMap::new();
        for r in records {
            by_lang.entry(r.language).or_default().push(r.text);
        }
        for (language, sentences) in by_lang {
            let pairs = build_mbe_pairs(&sentences, lexicon, language)?;
            let score = mbe_score(backend, &pairs, options)?;
            entries.push(ScoreEntry::new(label, Attribute::Gender, language, &score));
        }
    }
    if entries.is_empty() {
        return Err(Error::Empty("evaluation data after language/attribute filtering"));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        let mut c = PipelineConfig::new("out");
        c.backend = Some("local:x".into());
        assert_eq!(c.method_label(), "Baseline");
        c.self_debias = Some(SelfDebiasSection::default());
        assert_eq!(c.method_label(), "MSD");
        c.languages = Some(vec![LanguageCode::De]);
        assert_eq!(c.method_label(), "SD");
        c.languages = None;
        c.backend = None;
        c.train = Some(TrainSection::default());
        c.augment = Some(AugmentMode::TwoSided);
        assert_eq!(c.method_label(), "MD w/ Full Fine-Tune");
        c.self_debias = None;
        assert_eq!(c.method_label(), "MCDA");
        c.train.as_mut().unwrap().tuning = TuningMode::Adapter;
        assert_eq!(c.method_label(), "MCDA w/ Adapter Tune");
        c.languages = Some(vec![LanguageCode::En]);
        assert_eq!(c.method_label(), "CDA w/ Adapter Tune");
    }

    #[test]
    fn config_parsing_and_validation() {
        let c = PipelineConfig::from_json(r#"{"version":1,"out":"o","backend":"local:m.ckpt"}"#).unwrap();
        assert_eq!(c.attributes, vec![Attribute::Gender]);
        assert!(matches!(c.validate(), Err(Error::Invalid(m)) if m.contains("evaluation")));
        assert!(PipelineConfig::from_json(r#"{"version":1,"out":"o","bogus":1}"#).is_err());
        let mut c = PipelineConfig::new("o");
        c.version = 2;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::new("o");
        c.evaluation.crows_pairs.push("/nonexistent/pairs.tsv".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn seed_override_touches_every_seed() {
        let mut c = PipelineConfig::new("o");
        c.train = Some(TrainSection::default());
        c.downsample = Some(CorpusConfig::default());
        c.override_seed(7);
        let t = c.train.as_ref().unwrap();
        assert_eq!((t.optimizer.seed, t.model.init_seed, t.peft.peft_init_seed), (7, 7, 7));
        assert_eq!(c.downsample.unwrap().sampling_seed, 7);
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(
            &path,
            r#"{"version":1,"out":"runs/a","backend":"local:m.ckpt","evaluation":{"crows_pairs":["p.tsv"]}}"#,
        )
        .unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.out, dir.path().join("runs/a"));
        assert_eq!(c.evaluation.crows_pairs[0], dir.path().join("p.tsv"));
        assert_eq!(
            c.backend.unwrap(),
            format!("local:{}", dir.path().join("m.ckpt").display())
        );
    }

    #[test]
    fn vocab_cap() {
        let corpus = vec![CorpusRecord::new(LanguageCode::En, "a", "a b c d e f g a a b").unwrap()];
        let v = fit_vocab(&corpus, 1, vec![], 7).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(&v.surfaces()[5..], ["a", "b"]);
    }
}
