//! The `quist` command-line tool.
//!
//! Every command validates its inputs before writing anything, writes its
//! artifacts under the output directory, and finishes with a manifest naming
//! the config hash and seeds. Exit status: 0 on success, 2 for invalid
//! configuration or usage, 1 for failures during the run.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augmentation::{generate_synthetic_qa, write_synthetic, ContextAnswer, GeneratorHandle};
use crate::backend::checkpoint::{load_classifier, load_seq2seq, save_classifier, save_seq2seq};
use crate::backend::{Trainable, TransformerClassifier, TransformerSeq2Seq};
use crate::config::RunConfig;
use crate::corpus::{load_corpus, split_corpus, write_jsonl, Corpus, CorpusFormat, LoadOptions, QAExample, Split};
use crate::error::{QuistError, Result};
use crate::evaluation::metrics::MeteorConfig;
use crate::evaluation::{
    code_switch_report, compute_metric, detect_code_switching, CodeSwitchLabel, EvalReport, InterrogativeLexicon,
    LanguageIdentifier, MetricName, ScriptHeuristicIdentifier, WordTableIdentifier,
};
use crate::exemplar::{
    build_english_bank, build_target_bank, build_typeless_bank, select_exemplars, type_target_questions,
    DictionaryTranslator, ExemplarBank, ExemplarPolicy, ExemplarSet, Provenance,
};
use crate::language::TOY_TARGET;
use crate::qg::{
    denoising_pool, pipeline_generate_batch, pretrain_backbone, train_qg, ExemplarSource, GenerationRecord,
    QGExample, QGResources, QGTrainConfig,
};
use crate::qtc::{evaluate_qtc, train_qtc, QTCExample};
use crate::question_typing::{annotate_corpus, AuxiliaryLexicon, MatchMode, QuestionType, TypedQuestion};
use crate::seed::derive_seed;
use crate::tokenizer::Tokenizer;
use crate::toy;

/// Environment variable naming the directory where pretrained backbones
/// are cached between runs.
pub const CACHE_ENV: &str = "QUIST_CACHE_DIR";

const ANNOTATED: &str = "annotated.jsonl";
const HISTOGRAM: &str = "type_histogram.json";
const BANK: &str = "bank.json";
const QTC_DIR: &str = "qtc";
const QG_DIR: &str = "qg";
const GENERATIONS: &str = "generations.jsonl";
const REPORT: &str = "report.json";

#[derive(Debug, Parser)]
#[command(name = "quist", version, about = "Cross-lingual question generation with question exemplars")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the backend: reference or external.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "quist-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Type the English training questions with the lexical rules.
    Annotate,
    /// Build the English, target and typeless exemplar bank.
    BuildBank,
    /// Train the question-type classifier.
    TrainQtc,
    /// Train the question generator in the configured mode.
    TrainQg,
    /// Generate questions for the test set.
    Generate,
    /// Score generations against their references.
    Evaluate,
    /// Tabulate code-switching in generated questions.
    CodeswitchReport,
    /// Emit synthetic QA data from context–answer pairs.
    Augment,
    /// Train and evaluate every (model seed, exemplar seed) pair.
    Sweep,
    /// Write the bundled toy corpus and a config for it.
    ToyData,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Annotate => "annotate",
            Command::BuildBank => "build-bank",
            Command::TrainQtc => "train-qtc",
            Command::TrainQg => "train-qg",
            Command::Generate => "generate",
            Command::Evaluate => "evaluate",
            Command::CodeswitchReport => "codeswitch-report",
            Command::Augment => "augment",
            Command::Sweep => "sweep",
            Command::ToyData => "toy-data",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub component_seeds: BTreeMap<String, u64>,
    pub backend: String,
    pub mode: String,
    pub beam_size: usize,
    pub bank: Option<String>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Serialize)]
struct ErrorReport<'a> {
    status: &'a str,
    command: &'a str,
    exit_code: i32,
    message: String,
}

/// Parses arguments, runs the command, and returns the exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let command = cli.command;
    match load_config(&cli).and_then(|cfg| run(command, &cfg, &cli.out)) {
        Ok(_) => 0,
        Err(e) => {
            let code = if e.is_usage() { 2 } else { 1 };
            let report = ErrorReport {
                status: "error",
                command: command.name(),
                exit_code: code,
                message: e.to_string(),
            };
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| e.to_string()));
            code
        }
    }
}

/// The config file with flag overrides applied.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(b) = &cli.backend {
        cfg.backend = b.parse().map_err(|e: QuistError| QuistError::Config(e.to_string()))?;
    }
    Ok(cfg)
}

/// Validates, runs `command`, and writes its manifest. Returns the
/// artifacts written, relative to `out`.
pub fn run(command: Command, cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    if command == Command::ToyData {
        return write_toy_data(cfg.seed, out);
    }
    cfg.validate()?;
    validate_inputs(command, cfg, out)?;
    fs::create_dir_all(out).map_err(|e| QuistError::io(out, e))?;
    let runner = Runner { cfg, out };
    let artifacts = match command {
        Command::Annotate => runner.annotate()?,
        Command::BuildBank => runner.build_bank()?,
        Command::TrainQtc => runner.train_qtc()?,
        Command::TrainQg => runner.train_qg()?,
        Command::Generate => runner.generate()?,
        Command::Evaluate => runner.evaluate()?,
        Command::CodeswitchReport => runner.codeswitch_report()?,
        Command::Augment => runner.augment()?,
        Command::Sweep => runner.sweep()?,
        Command::ToyData => unreachable!("handled above"),
    };
    runner.write_manifest(command, &artifacts)?;
    Ok(artifacts)
}

fn missing(what: &str, path: &Path) -> QuistError {
    QuistError::Config(format!("{what} not found at {}", path.display()))
}

fn need_file(what: &str, path: Option<&PathBuf>) -> Result<()> {
    match path {
        None => Err(QuistError::Config(format!("paths.{what} is not set"))),
        Some(p) if !p.exists() => Err(missing(what, p)),
        Some(_) => Ok(()),
    }
}

fn optional_file(what: &str, path: Option<&PathBuf>) -> Result<()> {
    match path {
        Some(p) if !p.exists() => Err(missing(what, p)),
        _ => Ok(()),
    }
}

fn bank_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.paths.bank.clone().unwrap_or_else(|| out.join(BANK))
}

fn generations_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.paths.generations.clone().unwrap_or_else(|| out.join(GENERATIONS))
}

/// Whether generation needs a bank and, if typed, a classifier.
fn uses_bank(cfg: &RunConfig) -> bool {
    cfg.mode.infers_with_exemplars()
}

fn uses_classifier(cfg: &RunConfig) -> bool {
    uses_bank(cfg) && !cfg.exemplars.typeless
}

/// Every input a command reads must exist before anything is written.
fn validate_inputs(command: Command, cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = &cfg.paths;
    optional_file("auxiliaries", p.auxiliaries.as_ref())?;
    optional_file("adjective_hints", p.adjective_hints.as_ref())?;
    let need_dir = |what: &str, dir: PathBuf| -> Result<()> {
        if dir.join("manifest.txt").exists() {
            Ok(())
        } else {
            Err(missing(what, &dir))
        }
    };
    let training_inputs = || -> Result<()> {
        need_file("train_corpus", p.train_corpus.as_ref())?;
        optional_file("validation_corpus", p.validation_corpus.as_ref())?;
        optional_file("pretraining_texts", p.pretraining_texts.as_ref())
    };
    match command {
        Command::Annotate | Command::TrainQtc => training_inputs()?,
        Command::BuildBank => {
            training_inputs()?;
            optional_file("target_questions", p.target_questions.as_ref())?;
            if p.target_questions.is_some() {
                need_file("translations", p.translations.as_ref())?;
            }
        }
        Command::TrainQg => {
            training_inputs()?;
            let bank_needed = cfg.mode.trains_with_exemplars() && cfg.exemplars.policy == ExemplarPolicy::Static
                || cfg.mode == crate::qg::QGTrainingMode::BaselineMulti;
            if bank_needed && !bank_path(cfg, out).exists() {
                return Err(missing("exemplar bank", &bank_path(cfg, out)));
            }
        }
        Command::Generate | Command::Augment => {
            if command == Command::Generate {
                need_file("test_corpus", p.test_corpus.as_ref())?;
            } else {
                need_file("augment_pairs", p.augment_pairs.as_ref())?;
            }
            need_dir("QG checkpoint", out.join(QG_DIR))?;
            if uses_bank(cfg) && !bank_path(cfg, out).exists() {
                return Err(missing("exemplar bank", &bank_path(cfg, out)));
            }
            if uses_classifier(cfg) {
                need_dir("QTC checkpoint", out.join(QTC_DIR))?;
            }
        }
        Command::Evaluate => {
            let g = generations_path(cfg, out);
            if !g.exists() {
                return Err(missing("generations", &g));
            }
        }
        Command::CodeswitchReport => {
            if p.codeswitch_inputs.is_empty() {
                let g = generations_path(cfg, out);
                if !g.exists() {
                    return Err(missing("generations", &g));
                }
            }
            for input in &p.codeswitch_inputs {
                if !input.path.exists() {
                    return Err(missing("codeswitch input", &input.path));
                }
            }
        }
        Command::Sweep => {
            training_inputs()?;
            need_file("test_corpus", p.test_corpus.as_ref())?;
            let have_bank = bank_path(cfg, out).exists();
            if uses_bank(cfg) && !have_bank && cfg.target_language != "en" {
                need_file("target_questions", p.target_questions.as_ref())?;
                need_file("translations", p.translations.as_ref())?;
            }
            let stored: BTreeSet<u64> = cfg.exemplars.seeds.iter().copied().collect();
            if let Some(s) = cfg.sweep.exemplar_seeds.iter().find(|s| !stored.contains(s)) {
                return Err(QuistError::Config(format!("sweep exemplar seed {s} is not in exemplars.seeds")));
            }
        }
        Command::ToyData => {}
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnnotatedRecord {
    #[serde(flatten)]
    example: QAExample,
    qtype: QuestionType,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunSummary {
    model_seed: u64,
    exemplar_seed: Option<u64>,
    records: usize,
    metrics: BTreeMap<MetricName, f64>,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| QuistError::io(parent, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| QuistError::io(path, e))
}

pub fn read_generations(path: &Path) -> Result<Vec<GenerationRecord>> {
    let text = fs::read_to_string(path).map_err(|e| QuistError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| QuistError::Format {
                path: path.to_path_buf(),
                location: format!("line {}", i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

fn load_triplets(path: &Path, split: Split) -> Result<Corpus> {
    load_corpus(
        path,
        CorpusFormat::TripletJsonl,
        &LoadOptions {
            split,
            ..LoadOptions::default()
        },
    )
}

/// Identifier used for reports: the toy word table for the toy target,
/// the script heuristic for everything else.
#[derive(Debug, Clone)]
pub struct DefaultIdentifier {
    toy: WordTableIdentifier,
    script: ScriptHeuristicIdentifier,
}

impl Default for DefaultIdentifier {
    fn default() -> Self {
        Self::new()
    }
}

impl DefaultIdentifier {
    pub fn new() -> Self {
        Self {
            toy: toy::identifier(),
            script: ScriptHeuristicIdentifier::default(),
        }
    }
}

impl LanguageIdentifier for DefaultIdentifier {
    fn proportion(&self, text: &str, language: &str) -> f64 {
        if language == TOY_TARGET {
            self.toy.proportion(text, language)
        } else {
            self.script.proportion(text, language)
        }
    }
}

/// An example with its rule-assigned type.
type Typed = (QAExample, QuestionType);

/// Run key for grouping records: (model seed, exemplar seed).
type RunKey = (u64, Option<u64>);

/// Scores every run in `records`, one report per language.
pub fn evaluate_records(records: &[GenerationRecord], cfg: &RunConfig) -> Result<Vec<EvalReport>> {
    if records.is_empty() {
        return Err(QuistError::Input("no generation records to evaluate".into()));
    }
    let mut by_language: BTreeMap<&str, BTreeMap<RunKey, Vec<&GenerationRecord>>> = BTreeMap::new();
    for r in records {
        by_language
            .entry(r.language.as_str())
            .or_default()
            .entry((r.model_seed, r.exemplar_key.as_ref().map(|k| k.seed)))
            .or_default()
            .push(r);
    }
    let identifier = DefaultIdentifier::new();
    let lexicon = InterrogativeLexicon::default();
    let mut reports = Vec::new();
    for (language, runs) in by_language {
        let subword = if cfg.evaluation.metrics.contains(&MetricName::SpRouge) {
            let refs: Vec<&str> = runs.values().flatten().map(|r| r.reference_question.as_str()).collect();
            Some(Tokenizer::train_subword(refs, cfg.evaluation.subword_vocab_size))
        } else {
            None
        };
        let mut per_run: BTreeMap<MetricName, Vec<f64>> = BTreeMap::new();
        let mut code_switch: BTreeMap<CodeSwitchLabel, usize> = BTreeMap::new();
        for batch in runs.values() {
            let preds: Vec<String> = batch.iter().map(|r| r.generated_question.clone()).collect();
            let refs: Vec<String> = batch.iter().map(|r| r.reference_question.clone()).collect();
            for &m in &cfg.evaluation.metrics {
                per_run
                    .entry(m)
                    .or_default()
                    .push(compute_metric(m, &preds, &refs, language, subword.as_ref())?);
            }
            for p in &preds {
                let label = detect_code_switching(p, language, &identifier, &lexicon);
                *code_switch.entry(label).or_default() += 1;
            }
        }
        let mut report = EvalReport::from_runs(language, per_run)?;
        if language != "en" {
            report.code_switch = code_switch;
        }
        report.notes.insert("runs".into(), runs.len().to_string());
        if cfg.evaluation.metrics.contains(&MetricName::Meteor) {
            report.notes.insert("meteor".into(), MeteorConfig::default().describe(language));
        }
        if cfg.evaluation.metrics.contains(&MetricName::RougeL) {
            report.notes.insert("rouge_l".into(), "sentence-averaged LCS F1".into());
        }
        reports.push(report);
    }
    Ok(reports)
}

impl Runner<'_> {
    fn lexicon(&self) -> Result<AuxiliaryLexicon> {
        match (&self.cfg.paths.auxiliaries, &self.cfg.paths.adjective_hints) {
            (Some(a), Some(h)) => AuxiliaryLexicon::from_files(a, h),
            (None, None) => Ok(AuxiliaryLexicon::default()),
            _ => Err(QuistError::Config(
                "paths.auxiliaries and paths.adjective_hints must be set together".into(),
            )),
        }
    }

    fn train_corpus(&self) -> Result<Corpus> {
        let path = self.cfg.paths.train_corpus.as_ref().expect("validated");
        let format: CorpusFormat = match &self.cfg.paths.train_format {
            Some(f) => f.parse().map_err(|e: QuistError| QuistError::Config(e.to_string()))?,
            None => CorpusFormat::TripletJsonl,
        };
        load_corpus(
            path,
            format,
            &LoadOptions {
                language: Some("en".into()),
                ..LoadOptions::default()
            },
        )
    }

    /// Rule-typed English train and validation examples. Without a
    /// validation file a tenth of the training data is held out.
    fn typed_splits(&self) -> Result<(Vec<Typed>, Vec<Typed>)> {
        let lexicon = self.lexicon()?;
        let train = self.train_corpus()?;
        let (train, validation) = match &self.cfg.paths.validation_corpus {
            Some(p) => (train, load_triplets(p, Split::Validation)?),
            None => split_corpus(&train, 0.1, self.cfg.component_seed("split"))?,
        };
        Ok((
            annotate_corpus(&train, &lexicon)?.typed,
            annotate_corpus(&validation, &lexicon)?.typed,
        ))
    }

    fn test_examples(&self) -> Result<Vec<QAExample>> {
        let path = self.cfg.paths.test_corpus.as_ref().expect("validated");
        let mut examples = load_triplets(path, Split::Test)?.into_examples();
        if let Some(limit) = self.cfg.generation.limit {
            examples.truncate(limit);
        }
        Ok(examples)
    }

    fn tokenizer(&self) -> Result<Tokenizer> {
        let p = &self.cfg.paths;
        let mut texts: Vec<String> = Vec::new();
        for path in [&p.train_corpus, &p.validation_corpus, &p.test_corpus, &p.target_questions, &p.augment_pairs]
            .into_iter()
            .flatten()
        {
            let corpus = if Some(path) == p.train_corpus.as_ref() {
                self.train_corpus()?
            } else {
                load_triplets(path, Split::Train)?
            };
            for e in corpus.examples() {
                texts.push(e.context.clone());
                texts.push(e.question.clone());
                texts.push(e.answer_text.clone());
            }
        }
        texts.extend(self.pretraining_texts()?);
        Ok(Tokenizer::whitespace(
            texts.iter().map(String::as_str),
            self.cfg.tokenizer.min_count,
        ))
    }

    fn pretraining_texts(&self) -> Result<Vec<String>> {
        match &self.cfg.paths.pretraining_texts {
            None => Ok(Vec::new()),
            Some(p) => Ok(fs::read_to_string(p)
                .map_err(|e| QuistError::io(p, e))?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(String::from)
                .collect()),
        }
    }

    fn cache_dir(&self) -> PathBuf {
        std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.out.join("cache"))
    }

    /// A fresh generator, denoising-pretrained when pretraining is
    /// configured. Pretrained weights are cached by content hash.
    fn backbone(&self, tokenizer: &Tokenizer) -> Result<TransformerSeq2Seq> {
        let mut model_cfg = self.cfg.model.clone();
        model_cfg.seed = self.cfg.component_seed("qg_init");
        let texts = self.pretraining_texts()?;
        if texts.is_empty() || self.cfg.pretrain.steps == 0 {
            return TransformerSeq2Seq::new(model_cfg, tokenizer.clone());
        }
        let mut pretrain = self.cfg.pretrain.clone();
        pretrain.seed = self.cfg.component_seed("pretrain");
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&model_cfg)?);
        h.update(serde_json::to_string(&pretrain)?);
        h.update(serde_json::to_string(tokenizer)?);
        for t in &texts {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        let key: String = h.finalize().iter().take(12).map(|b| format!("{b:02x}")).collect();
        let dir = self.cache_dir().join(format!("backbone-{key}"));
        if dir.join("manifest.txt").exists() {
            return load_seq2seq(&dir);
        }
        let mut model = TransformerSeq2Seq::new(model_cfg, tokenizer.clone())?;
        pretrain_backbone(&mut model, &texts, &pretrain)?;
        save_seq2seq(&model, &dir)?;
        Ok(model)
    }

    fn load_bank(&self) -> Result<ExemplarBank> {
        ExemplarBank::load(&bank_path(self.cfg, self.out))
    }

    fn typed_questions(typed: &[(QAExample, QuestionType)]) -> Vec<TypedQuestion> {
        typed
            .iter()
            .map(|(e, t)| TypedQuestion {
                question: e.question.clone(),
                qtype: *t,
            })
            .collect()
    }

    fn make_bank(&self, typed: &[(QAExample, QuestionType)]) -> Result<ExemplarBank> {
        let cfg = self.cfg;
        let sizes: BTreeSet<usize> = cfg.exemplars.sizes.iter().copied().collect();
        let seeds: BTreeSet<u64> = cfg.exemplars.seeds.iter().copied().collect();
        let english = Self::typed_questions(typed);
        let mut bank = build_english_bank(&english, &sizes, &seeds)?;
        let per_type = cfg.exemplars.typeless_per_type;
        for &s in &seeds {
            bank.insert(build_typeless_bank(&english, "en", per_type, s)?, Provenance::Typeless)?;
        }
        if let Some(path) = &cfg.paths.target_questions {
            let corpus = load_triplets(path, Split::Train)?;
            let language = corpus.language.clone();
            let questions: Vec<String> = corpus.examples().iter().map(|e| e.question.clone()).collect();
            let translator = DictionaryTranslator::load(cfg.paths.translations.as_ref().expect("validated"))?;
            let lexicon = self.lexicon()?;
            bank.merge(build_target_bank(&questions, &language, &translator, &lexicon, &sizes, &seeds)?)?;
            let typed_target = type_target_questions(&questions, &language, &translator, &lexicon)?;
            for &s in &seeds {
                bank.insert(build_typeless_bank(&typed_target, &language, per_type, s)?, Provenance::Typeless)?;
            }
        }
        Ok(bank)
    }

    fn qtc_examples(typed: &[(QAExample, QuestionType)]) -> Vec<QTCExample> {
        QTCExample::from_annotated(typed)
    }

    fn fit_classifier(
        &self,
        tokenizer: &Tokenizer,
        train: &[(QAExample, QuestionType)],
        validation: &[(QAExample, QuestionType)],
    ) -> Result<(TransformerClassifier, crate::qtc::QTCTrainLog)> {
        let mut model_cfg = self.cfg.model.clone();
        model_cfg.seed = self.cfg.component_seed("qtc_init");
        let mut classifier = TransformerClassifier::new(model_cfg, tokenizer.clone())?;
        let mut qtc_cfg = self.cfg.qtc.clone();
        qtc_cfg.optim.seed = self.cfg.component_seed("qtc");
        let log = train_qtc(
            &mut classifier,
            &Self::qtc_examples(train),
            &Self::qtc_examples(validation),
            &qtc_cfg,
        )?;
        Ok((classifier, log))
    }

    fn qg_config(&self, optim_seed: u64) -> QGTrainConfig {
        let mut optim = self.cfg.qg.optim.clone();
        optim.seed = optim_seed;
        QGTrainConfig {
            optim,
            exemplar_size: self.cfg.exemplars.size,
            exemplar_seed: self.cfg.exemplars.seed,
            policy: self.cfg.exemplars.policy,
            mask_ratio: self.cfg.qg.mask_ratio,
            record_sources: false,
        }
    }

    fn fit_generator(
        &self,
        model: &mut TransformerSeq2Seq,
        train: &[(QAExample, QuestionType)],
        validation: &[(QAExample, QuestionType)],
        bank: Option<&ExemplarBank>,
        optim_seed: u64,
    ) -> Result<crate::qg::TrainLog> {
        let mode = self.cfg.mode;
        let english = Self::typed_questions(train);
        let denoising = match (mode, bank) {
            (crate::qg::QGTrainingMode::BaselineMulti, Some(b)) => {
                Some(denoising_pool(b, &self.cfg.target_language, self.cfg.exemplars.seed)?)
            }
            _ => None,
        };
        let resources = QGResources {
            bank,
            dynamic_pool: Some(&english),
            denoising: denoising.as_deref(),
        };
        train_qg(
            model,
            &QGExample::from_annotated(train),
            &QGExample::from_annotated(validation),
            mode,
            &resources,
            &self.qg_config(optim_seed),
        )
    }

    fn typeless_set<'b>(&self, bank: &'b ExemplarBank, language: &str, seed: u64) -> Result<&'b ExemplarSet> {
        let size = self.cfg.exemplars.typeless_per_type * QuestionType::COUNT;
        select_exemplars(bank, language, None, size, seed)
    }

    fn generate_records(
        &self,
        qg: &TransformerSeq2Seq,
        classifier: Option<&TransformerClassifier>,
        bank: Option<&ExemplarBank>,
        examples: &[QAExample],
        model_seed: u64,
        exemplar_seed: u64,
    ) -> Result<Vec<GenerationRecord>> {
        let beam = self.cfg.generation.beam_size;
        if !uses_bank(self.cfg) {
            return pipeline_generate_batch(ExemplarSource::<TransformerClassifier>::None, qg, examples, model_seed, beam);
        }
        let bank = bank.expect("bank loaded when exemplars are used");
        if self.cfg.exemplars.typeless {
            let mut out = Vec::with_capacity(examples.len());
            let mut by_language: BTreeMap<&str, Vec<QAExample>> = BTreeMap::new();
            for e in examples {
                by_language.entry(e.language.as_str()).or_default().push(e.clone());
            }
            for (language, group) in by_language {
                let set = self.typeless_set(bank, language, exemplar_seed)?;
                out.extend(pipeline_generate_batch(
                    ExemplarSource::<TransformerClassifier>::Typeless(set),
                    qg,
                    &group,
                    model_seed,
                    beam,
                )?);
            }
            let order: BTreeMap<&str, usize> = examples.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
            out.sort_by_key(|r| order[r.example_id.as_str()]);
            return Ok(out);
        }
        let classifier = classifier.expect("classifier loaded for typed exemplars");
        pipeline_generate_batch(
            ExemplarSource::Typed {
                classifier,
                bank,
                size: self.cfg.exemplars.size,
                seed: exemplar_seed,
            },
            qg,
            examples,
            model_seed,
            beam,
        )
    }

    fn annotate(&self) -> Result<Vec<String>> {
        let corpus = self.train_corpus()?;
        let annotation = annotate_corpus(&corpus, &self.lexicon()?)?;
        let records: Vec<AnnotatedRecord> = annotation
            .typed
            .iter()
            .map(|(e, t)| AnnotatedRecord {
                example: e.clone(),
                qtype: *t,
            })
            .collect();
        write_jsonl(&self.out.join(ANNOTATED), &records)?;
        #[derive(Serialize)]
        struct Histogram<'a> {
            kept: usize,
            dropped: usize,
            counts: &'a BTreeMap<QuestionType, usize>,
        }
        write_json(
            &self.out.join(HISTOGRAM),
            &Histogram {
                kept: annotation.typed.len(),
                dropped: annotation.dropped,
                counts: &annotation.histogram,
            },
        )?;
        Ok(vec![ANNOTATED.into(), HISTOGRAM.into()])
    }

    fn build_bank(&self) -> Result<Vec<String>> {
        let (train, _) = self.typed_splits()?;
        let bank = self.make_bank(&train)?;
        bank.save(&self.out.join(BANK))?;
        Ok(vec![BANK.into()])
    }

    fn train_qtc(&self) -> Result<Vec<String>> {
        let (train, validation) = self.typed_splits()?;
        let tokenizer = self.tokenizer()?;
        let (classifier, log) = self.fit_classifier(&tokenizer, &train, &validation)?;
        save_classifier(&classifier, &self.out.join(QTC_DIR))?;
        write_json(&self.out.join("qtc_log.json"), &log)?;
        let examples = Self::qtc_examples(&validation);
        let mut reports = BTreeMap::new();
        for mode in [MatchMode::Hard, MatchMode::Relaxed] {
            let mut r = evaluate_qtc(&classifier, &examples, mode)?;
            r.checkpoint = Some(QTC_DIR.into());
            reports.insert(format!("{mode:?}").to_lowercase(), r);
        }
        write_json(&self.out.join("qtc_eval.json"), &reports)?;
        Ok(vec![QTC_DIR.into(), "qtc_log.json".into(), "qtc_eval.json".into()])
    }

    fn train_qg(&self) -> Result<Vec<String>> {
        let (train, validation) = self.typed_splits()?;
        let tokenizer = self.tokenizer()?;
        let bank_path = bank_path(self.cfg, self.out);
        let bank = if bank_path.exists() { Some(self.load_bank()?) } else { None };
        let mut model = self.backbone(&tokenizer)?;
        let log = self.fit_generator(&mut model, &train, &validation, bank.as_ref(), self.cfg.component_seed("qg"))?;
        save_seq2seq(&model, &self.out.join(QG_DIR))?;
        write_json(&self.out.join("qg_log.json"), &log)?;
        Ok(vec![QG_DIR.into(), "qg_log.json".into()])
    }

    fn load_models(&self) -> Result<(TransformerSeq2Seq, Option<TransformerClassifier>, Option<ExemplarBank>)> {
        let qg = load_seq2seq(&self.out.join(QG_DIR))?;
        let classifier = if uses_classifier(self.cfg) {
            Some(load_classifier(&self.out.join(QTC_DIR))?)
        } else {
            None
        };
        let bank = if uses_bank(self.cfg) { Some(self.load_bank()?) } else { None };
        Ok((qg, classifier, bank))
    }

    fn generate(&self) -> Result<Vec<String>> {
        let examples = self.test_examples()?;
        let (qg, classifier, bank) = self.load_models()?;
        let records = self.generate_records(
            &qg,
            classifier.as_ref(),
            bank.as_ref(),
            &examples,
            self.cfg.seed,
            self.cfg.exemplars.seed,
        )?;
        write_jsonl(&self.out.join(GENERATIONS), &records)?;
        Ok(vec![GENERATIONS.into()])
    }

    fn evaluate(&self) -> Result<Vec<String>> {
        let records = read_generations(&generations_path(self.cfg, self.out))?;
        let reports = evaluate_records(&records, self.cfg)?;
        write_json(&self.out.join(REPORT), &reports)?;
        Ok(vec![REPORT.into()])
    }

    fn codeswitch_report(&self) -> Result<Vec<String>> {
        let mut batches = Vec::new();
        if self.cfg.paths.codeswitch_inputs.is_empty() {
            batches.push((
                self.cfg.mode.as_str().to_string(),
                read_generations(&generations_path(self.cfg, self.out))?,
            ));
        }
        for input in &self.cfg.paths.codeswitch_inputs {
            batches.push((input.model.clone(), read_generations(&input.path)?));
        }
        let report = code_switch_report(&batches, &DefaultIdentifier::new(), &InterrogativeLexicon::default())?;
        report.write_csv(&self.out.join("codeswitch.csv"))?;
        report.write_json(&self.out.join("codeswitch.json"))?;
        Ok(vec!["codeswitch.csv".into(), "codeswitch.json".into()])
    }

    fn augment(&self) -> Result<Vec<String>> {
        let path = self.cfg.paths.augment_pairs.as_ref().expect("validated");
        let pairs: Vec<ContextAnswer> = load_triplets(path, Split::Train)?
            .examples()
            .iter()
            .map(ContextAnswer::from)
            .collect();
        let (qg, classifier, bank) = self.load_models()?;
        let empty_bank = ExemplarBank::default();
        let placeholder;
        let classifier_ref = match &classifier {
            Some(c) => c,
            None => {
                // Never consulted when the mode uses no typed exemplars.
                placeholder = TransformerClassifier::new(self.cfg.model.clone(), Tokenizer::whitespace([], 1))?;
                &placeholder
            }
        };
        let handle = GeneratorHandle {
            classifier: classifier_ref,
            qg_model: &qg,
            bank: bank.as_ref().unwrap_or(&empty_bank),
            mode: self.cfg.mode,
            model_seed: self.cfg.seed,
            beam_size: self.cfg.generation.beam_size,
        };
        let records = generate_synthetic_qa(&pairs, &handle, self.cfg.exemplars.size, &[self.cfg.exemplars.seed])?;
        let sidecar = write_synthetic(&self.out.join("synthetic.jsonl"), &records)?;
        Ok(vec![
            "synthetic.jsonl".into(),
            sidecar.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        ])
    }

    fn sweep(&self) -> Result<Vec<String>> {
        let cfg = self.cfg;
        let dir = self.out.join("sweep");
        let (train, validation) = self.typed_splits()?;
        let examples = self.test_examples()?;
        let tokenizer = self.tokenizer()?;
        let mut artifacts = Vec::new();

        let bank = if bank_path(cfg, self.out).exists() {
            Some(self.load_bank()?)
        } else if uses_bank(cfg) || cfg.mode == crate::qg::QGTrainingMode::BaselineMulti {
            let bank = self.make_bank(&train)?;
            fs::create_dir_all(&dir).map_err(|e| QuistError::io(&dir, e))?;
            bank.save(&dir.join(BANK))?;
            artifacts.push(format!("sweep/{BANK}"));
            Some(bank)
        } else {
            None
        };
        let classifier = if uses_classifier(cfg) {
            Some(self.fit_classifier(&tokenizer, &train, &validation)?.0)
        } else {
            None
        };
        let base = self.backbone(&tokenizer)?;
        let base_weights = base.snapshot()?;

        let mut all = Vec::new();
        let mut summaries = Vec::new();
        for &m in &cfg.sweep.model_seeds {
            let mut model = TransformerSeq2Seq::new(base.config().clone(), tokenizer.clone())?;
            model.restore(&base_weights)?;
            let optim_seed = derive_seed(cfg.component_seed("qg"), &format!("model{m}"));
            self.fit_generator(&mut model, &train, &validation, bank.as_ref(), optim_seed)?;
            let exemplar_seeds: Vec<Option<u64>> = if uses_bank(cfg) {
                cfg.sweep.exemplar_seeds.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for e in exemplar_seeds {
                let records = self.generate_records(
                    &model,
                    classifier.as_ref(),
                    bank.as_ref(),
                    &examples,
                    m,
                    e.unwrap_or(cfg.exemplars.seed),
                )?;
                let run_cfg = RunConfig {
                    evaluation: cfg.evaluation.clone(),
                    ..RunConfig::default()
                };
                let report = evaluate_records(&records, &run_cfg)?;
                summaries.push(RunSummary {
                    model_seed: m,
                    exemplar_seed: e,
                    records: records.len(),
                    metrics: report
                        .iter()
                        .flat_map(|r| r.metrics.iter().map(|(k, v)| (*k, v.mean)))
                        .collect(),
                });
                all.extend(records);
            }
        }
        write_jsonl(&dir.join(GENERATIONS), &all)?;
        write_json(&dir.join("runs.json"), &summaries)?;
        write_json(&dir.join(REPORT), &evaluate_records(&all, cfg)?)?;
        artifacts.extend([
            format!("sweep/{GENERATIONS}"),
            "sweep/runs.json".into(),
            format!("sweep/{REPORT}"),
        ]);
        Ok(artifacts)
    }

    fn write_manifest(&self, command: Command, artifacts: &[String]) -> Result<()> {
        let labels = ["split", "qtc", "qtc_init", "qg", "qg_init", "pretrain"];
        let manifest = RunManifest {
            command: command.name().into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: self.cfg.hash()?,
            seed: self.cfg.seed,
            component_seeds: self.cfg.seed_table(&labels),
            backend: self.cfg.backend.to_string(),
            mode: self.cfg.mode.to_string(),
            beam_size: self.cfg.generation.beam_size,
            bank: uses_bank(self.cfg).then(|| bank_path(self.cfg, self.out).display().to_string()),
            artifacts: artifacts.to_vec(),
        };
        write_json(&self.out.join(format!("manifest-{}.json", command.name())), &manifest)
    }
}

/// Config written next to the toy fixtures. Paths are relative to it.
pub const TOY_CONFIG: &str = r#"seed = 0
mode = "quist"
target_language = "qx"

[paths]
train_corpus = "en_train.jsonl"
validation_corpus = "en_validation.jsonl"
test_corpus = "qx_test.jsonl"
target_questions = "qx_pool.jsonl"
translations = "qx_translations.json"
pretraining_texts = "pretrain.txt"
augment_pairs = "qx_test.jsonl"

[exemplars]
sizes = [1, 5, 15]
seeds = [0, 1, 2, 3, 4]
size = 5
seed = 0

[sweep]
model_seeds = [0, 1, 2, 3, 4]
exemplar_seeds = [0, 1, 2, 3, 4]

[model]
d_model = 64
n_heads = 4
n_layers = 2
d_ff = 256
max_source_len = 160
max_target_len = 16

[pretrain]
steps = 800
batch_size = 16
learning_rate = 0.003
warmup_steps = 100

[qtc]
upsample = true

[qtc.optim]
batch_size = 16
learning_rate = 0.002
warmup_steps = 50
max_steps = 300
eval_every = 100
patience = 3

[qg]
batch_size = 16
learning_rate = 0.002
warmup_steps = 50
max_steps = 400
eval_every = 100
patience = 3

[generation]
beam_size = 4

[evaluation]
metrics = ["bleu4", "meteor", "rouge_l", "sp_rouge"]
subword_vocab_size = 200
"#;

fn write_toy_data(seed_value: u64, out: &Path) -> Result<Vec<String>> {
    toy::ToyWorld::new(seed_value).write_fixtures(out)?;
    let path = out.join("config.toml");
    fs::write(&path, TOY_CONFIG).map_err(|e| QuistError::io(&path, e))?;
    Ok([
        "en_train.jsonl",
        "en_validation.jsonl",
        "qx_pool.jsonl",
        "qx_test.jsonl",
        "pretrain.txt",
        "qx_translations.json",
        "config.toml",
    ]
    .map(String::from)
    .to_vec())
}
