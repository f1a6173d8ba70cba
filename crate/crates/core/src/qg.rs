//! The exemplar-conditioned question generator, its baselines, and the
//! classify-then-generate pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::backend::{
    beam_decode, ClassifierModel, OptimConfig, ParameterGroup, Seq2SeqModel, SeqPair,
};
use crate::corpus::QAExample;
use crate::error::{QuistError, Result};
use crate::exemplar::{select_exemplars, DynamicSampler, ExemplarBank, ExemplarKey, ExemplarPolicy, ExemplarSet};
use crate::qtc::predict_type;
use crate::question_typing::{QuestionType, TypedQuestion};
use crate::seed;
use crate::tokenizer::{TokenId, Tokenizer, ANSWER_TAG, CONTEXT_TAG, EXEMPLAR_TAG};

pub const DEFAULT_MASK_RATIO: f64 = 0.15;
pub const DEFAULT_BEAM_SIZE: usize = 4;
pub const DENOISING_SET_SIZE: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QGTrainingMode {
    /// Encoder-only fine-tuning with type-matched exemplars.
    Quist,
    BaselineEncdec,
    BaselineEnc,
    /// All groups, English QG interleaved with target question denoising.
    BaselineMulti,
    /// Trained like `BaselineEnc`, given exemplars only at inference.
    InferenceOnlyExemplars,
}

impl QGTrainingMode {
    pub const ALL: [QGTrainingMode; 5] = [
        QGTrainingMode::Quist,
        QGTrainingMode::BaselineEncdec,
        QGTrainingMode::BaselineEnc,
        QGTrainingMode::BaselineMulti,
        QGTrainingMode::InferenceOnlyExemplars,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QGTrainingMode::Quist => "quist",
            QGTrainingMode::BaselineEncdec => "baseline_encdec",
            QGTrainingMode::BaselineEnc => "baseline_enc",
            QGTrainingMode::BaselineMulti => "baseline_multi",
            QGTrainingMode::InferenceOnlyExemplars => "inference_only_exemplars",
        }
    }

    /// The output head follows the decoder.
    pub fn trainable_groups(self) -> BTreeSet<ParameterGroup> {
        match self {
            QGTrainingMode::Quist | QGTrainingMode::BaselineEnc | QGTrainingMode::InferenceOnlyExemplars => {
                BTreeSet::from([ParameterGroup::Encoder])
            }
            QGTrainingMode::BaselineEncdec | QGTrainingMode::BaselineMulti => ParameterGroup::ALL.into_iter().collect(),
        }
    }

    pub fn trains_with_exemplars(self) -> bool {
        self == QGTrainingMode::Quist
    }

    pub fn infers_with_exemplars(self) -> bool {
        matches!(self, QGTrainingMode::Quist | QGTrainingMode::InferenceOnlyExemplars)
    }
}

impl fmt::Display for QGTrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QGTrainingMode {
    type Err = QuistError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| QuistError::Argument(format!("unknown training mode {s:?}")))
    }
}

/// One generated question with everything needed to trace it back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub example_id: String,
    pub language: String,
    /// `None` when no type was predicted (typeless exemplars or no
    /// exemplars at all).
    pub predicted_qtype: Option<QuestionType>,
    pub exemplar_key: Option<ExemplarKey>,
    pub generated_question: String,
    pub reference_question: String,
    pub model_seed: u64,
}

/// `exemplar: q1 ... exemplar: qk answer: A context: C`, with the context tail
/// cut first when the result exceeds `max_len`.
pub fn build_qg_input(
    exemplars: Option<&[String]>,
    answer: &str,
    context: &str,
    tokenizer: &Tokenizer,
    max_len: usize,
) -> Result<Vec<TokenId>> {
    if answer.trim().is_empty() {
        return Err(QuistError::Argument("answer must be non-empty".into()));
    }
    if context.trim().is_empty() {
        return Err(QuistError::Argument("context must be non-empty".into()));
    }
    let mut ids = Vec::new();
    for q in exemplars.unwrap_or_default() {
        ids.extend(tokenizer.encode(&format!("{EXEMPLAR_TAG} {q}")));
    }
    ids.extend(tokenizer.encode(&format!("{ANSWER_TAG} {answer} {CONTEXT_TAG}")));
    let context_ids = tokenizer.encode(context);
    let room = max_len.saturating_sub(ids.len());
    ids.extend_from_slice(&context_ids[..context_ids.len().min(room)]);
    Ok(ids)
}

/// Replaces ⌈ratio·n⌉ uniformly chosen positions with the mask token. The
/// target is the original question followed by end-of-sequence.
pub fn mask_question(
    question: &str,
    mask_ratio: f64,
    seed_value: u64,
    tokenizer: &Tokenizer,
) -> Result<(Vec<TokenId>, Vec<TokenId>)> {
    if !(mask_ratio > 0.0 && mask_ratio < 1.0) {
        return Err(QuistError::Argument(format!("mask ratio {mask_ratio} outside (0, 1)")));
    }
    let original = tokenizer.encode(question);
    if original.is_empty() {
        return Err(QuistError::Argument("question must be non-empty".into()));
    }
    let n = original.len();
    let k = ((mask_ratio * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = seed::labeled_rng(seed_value, &format!("mask/{question}"));
    let mut corrupted = original.clone();
    let mask = tokenizer.special().mask;
    for pos in index::sample(&mut rng, n, k) {
        corrupted[pos] = mask;
    }
    let mut target = original;
    target.push(tokenizer.special().end_of_sequence);
    Ok((corrupted, target))
}

/// The 8 × 15 target questions used by the denoising task.
pub fn denoising_pool(bank: &ExemplarBank, language: &str, seed_value: u64) -> Result<Vec<String>> {
    let mut pool = Vec::with_capacity(DENOISING_SET_SIZE * QuestionType::COUNT);
    for t in QuestionType::ALL {
        pool.extend(
            select_exemplars(bank, language, Some(t), DENOISING_SET_SIZE, seed_value)?
                .questions
                .iter()
                .cloned(),
        );
    }
    Ok(pool)
}

/// Settings for [`pretrain_backbone`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub mask_ratio: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 800,
            batch_size: 16,
            learning_rate: 3e-3,
            warmup_steps: 100,
            mask_ratio: DEFAULT_MASK_RATIO,
            seed: 0,
        }
    }
}

/// Masked-token restoration over monolingual text with every group
/// trainable. Stands in for the multilingual pretraining a real backbone
/// arrives with. Masks are redrawn each epoch. Returns per-step losses.
pub fn pretrain_backbone<M: Seq2SeqModel>(model: &mut M, texts: &[String], config: &PretrainConfig) -> Result<Vec<f32>> {
    if texts.is_empty() {
        return Err(QuistError::Argument("no pretraining texts".into()));
    }
    model.set_trainable(&ParameterGroup::ALL.into_iter().collect())?;
    let tokenizer = model.tokenizer().clone();
    let schedule = OptimConfig {
        learning_rate: config.learning_rate,
        warmup_steps: config.warmup_steps,
        max_steps: config.steps,
        ..OptimConfig::default()
    }
    .schedule();
    let mut cursor = BatchCursor::new(texts.len(), config.seed, "pretrain_batches");
    let mut losses = Vec::with_capacity(config.steps as usize);
    for step in 0..config.steps {
        let batch = cursor
            .next_batch(config.batch_size)
            .into_iter()
            .map(|(i, epoch)| {
                let (source, target) = mask_question(
                    &texts[i],
                    config.mask_ratio,
                    seed::derive_seed(config.seed, &format!("pretrain/{epoch}")),
                    &tokenizer,
                )?;
                Ok(SeqPair { source, target })
            })
            .collect::<Result<Vec<_>>>()?;
        losses.push(model.train_step(&batch, schedule.rate(step))?);
    }
    Ok(losses)
}

fn target_ids(question: &str, tokenizer: &Tokenizer) -> Vec<TokenId> {
    let mut t = tokenizer.encode(question);
    t.push(tokenizer.special().end_of_sequence);
    t
}

/// English training example with its rule-assigned type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QGExample {
    pub example: QAExample,
    pub qtype: QuestionType,
}

impl QGExample {
    pub fn from_annotated(typed: &[(QAExample, QuestionType)]) -> Vec<QGExample> {
        typed
            .iter()
            .map(|(example, qtype)| QGExample {
                example: example.clone(),
                qtype: *qtype,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QGTrainConfig {
    pub optim: OptimConfig,
    pub exemplar_size: usize,
    pub exemplar_seed: u64,
    pub policy: ExemplarPolicy,
    pub mask_ratio: f64,
    /// Keep every encoded training source in the log.
    pub record_sources: bool,
}

impl Default for QGTrainConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::qg_default(),
            exemplar_size: 15,
            exemplar_seed: 0,
            policy: ExemplarPolicy::Static,
            mask_ratio: DEFAULT_MASK_RATIO,
            record_sources: false,
        }
    }
}

/// Exemplar material for training.
#[derive(Debug, Clone, Copy, Default)]
pub struct QGResources<'a> {
    /// English bank for static exemplars.
    pub bank: Option<&'a ExemplarBank>,
    /// Typed English questions for the dynamic policy.
    pub dynamic_pool: Option<&'a [TypedQuestion]>,
    /// Target-language questions for the denoising task.
    pub denoising: Option<&'a [String]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Qg,
    Denoising,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub task: Task,
    pub loss: f32,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub validation_loss: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub epoch: usize,
    pub example_id: String,
    pub qtype: QuestionType,
    pub source: Vec<TokenId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    /// Step whose parameters were kept, if validation ran.
    pub best_step: Option<u64>,
    pub stopped_early: bool,
    pub sources: Vec<SourceRecord>,
}

impl TrainLog {
    pub fn losses(&self, task: Task) -> Vec<f32> {
        self.steps.iter().filter(|s| s.task == task).map(|s| s.loss).collect()
    }
}

/// Cycles through shuffled epochs of indices, one batch at a time.
pub(crate) struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
    pub epoch: usize,
    seed: u64,
    label: &'static str,
}

impl BatchCursor {
    pub fn new(n: usize, seed_value: u64, label: &'static str) -> Self {
        let mut c = Self {
            order: (0..n).collect(),
            pos: 0,
            epoch: 0,
            seed: seed_value,
            label,
        };
        c.shuffle();
        c
    }

    fn shuffle(&mut self) {
        let label = format!("{}/epoch{}", self.label, self.epoch);
        self.order.shuffle(&mut seed::labeled_rng(self.seed, &label));
    }

    /// Next `size` indices and the epoch each came from.
    pub fn next_batch(&mut self, size: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.pos = 0;
                self.epoch += 1;
                self.shuffle();
            }
            out.push((self.order[self.pos], self.epoch));
            self.pos += 1;
        }
        out
    }
}

struct SourceBuilder<'a> {
    mode: QGTrainingMode,
    config: &'a QGTrainConfig,
    static_sets: BTreeMap<QuestionType, &'a ExemplarSet>,
    sampler: Option<DynamicSampler>,
}

impl<'a> SourceBuilder<'a> {
    fn new(mode: QGTrainingMode, config: &'a QGTrainConfig, resources: &QGResources<'a>) -> Result<Self> {
        let mut static_sets = BTreeMap::new();
        let mut sampler = None;
        if mode.trains_with_exemplars() {
            match config.policy {
                ExemplarPolicy::Static => {
                    let bank = resources
                        .bank
                        .ok_or_else(|| QuistError::Usage(format!("{mode} training needs an English exemplar bank")))?;
                    for t in QuestionType::ALL {
                        let set = select_exemplars(bank, "en", Some(t), config.exemplar_size, config.exemplar_seed)?;
                        static_sets.insert(t, set);
                    }
                }
                ExemplarPolicy::Dynamic => {
                    let pool = resources.dynamic_pool.ok_or_else(|| {
                        QuistError::Usage("dynamic exemplars need a typed English question pool".into())
                    })?;
                    sampler = Some(DynamicSampler::new("en", pool));
                }
            }
        }
        Ok(Self {
            mode,
            config,
            static_sets,
            sampler,
        })
    }

    fn source(&self, ex: &QGExample, epoch: usize, tokenizer: &Tokenizer, max_len: usize) -> Result<Vec<TokenId>> {
        let dynamic;
        let exemplars: Option<&[String]> = if !self.mode.trains_with_exemplars() {
            None
        } else if let Some(sampler) = &self.sampler {
            let id = format!("{}/{epoch}", ex.example.id);
            dynamic = sampler.sample(ex.qtype, self.config.exemplar_size, self.config.exemplar_seed, &id)?;
            Some(&dynamic.questions)
        } else {
            Some(&self.static_sets[&ex.qtype].questions)
        };
        build_qg_input(exemplars, &ex.example.answer_text, &ex.example.context, tokenizer, max_len)
    }
}

/// Teacher-forced training in the given mode with warmup, periodic validation
/// and early stopping. The best validation checkpoint is restored at the end.
pub fn train_qg<M: Seq2SeqModel>(
    model: &mut M,
    train: &[QGExample],
    validation: &[QGExample],
    mode: QGTrainingMode,
    resources: &QGResources<'_>,
    config: &QGTrainConfig,
) -> Result<TrainLog> {
    if train.is_empty() {
        return Err(QuistError::Argument("empty QG training set".into()));
    }
    let denoising = if mode == QGTrainingMode::BaselineMulti {
        let pool = resources
            .denoising
            .filter(|p| !p.is_empty())
            .ok_or_else(|| QuistError::Usage("baseline_multi needs a target-language denoising pool".into()))?;
        Some(pool)
    } else {
        None
    };
    let builder = SourceBuilder::new(mode, config, resources)?;
    model.set_trainable(&mode.trainable_groups())?;

    let tokenizer = model.tokenizer().clone();
    let max_src = model.max_source_len();
    let targets: Vec<Vec<TokenId>> = train.iter().map(|e| target_ids(&e.example.question, &tokenizer)).collect();
    let validation_pairs = validation
        .iter()
        .map(|e| {
            Ok(SeqPair {
                source: builder.source(e, 0, &tokenizer, max_src)?,
                target: target_ids(&e.example.question, &tokenizer),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let optim = &config.optim;
    let schedule = optim.schedule();
    let mut cursor = BatchCursor::new(train.len(), optim.seed, "qg_batches");
    let mut denoise_cursor = denoising.map(|p| BatchCursor::new(p.len(), optim.seed, "denoise_batches"));
    let mut log = TrainLog::default();
    let mut best: Option<(f32, M::Snapshot)> = None;
    let mut bad_evals = 0;
    let mut qg_steps = 0u64;

    for step in 0..optim.max_steps {
        let lr = schedule.rate(step);
        let denoise_turn = denoise_cursor.is_some() && step % 2 == 1;
        if denoise_turn {
            let pool = denoising.expect("cursor implies pool");
            let cursor = denoise_cursor.as_mut().expect("checked above");
            let batch = cursor
                .next_batch(optim.batch_size)
                .into_iter()
                .map(|(i, epoch)| {
                    let (source, target) = mask_question(
                        &pool[i],
                        config.mask_ratio,
                        seed::derive_seed(optim.seed, &format!("denoise/{epoch}")),
                        &tokenizer,
                    )?;
                    Ok(SeqPair { source, target })
                })
                .collect::<Result<Vec<_>>>()?;
            let loss = model.train_step(&batch, lr)?;
            log.steps.push(StepRecord {
                step,
                task: Task::Denoising,
                loss,
                learning_rate: lr,
            });
            continue;
        }

        let mut batch = Vec::with_capacity(optim.batch_size);
        for (i, epoch) in cursor.next_batch(optim.batch_size) {
            let source = builder.source(&train[i], epoch, &tokenizer, max_src)?;
            if config.record_sources {
                log.sources.push(SourceRecord {
                    epoch,
                    example_id: train[i].example.id.clone(),
                    qtype: train[i].qtype,
                    source: source.clone(),
                });
            }
            batch.push(SeqPair {
                source,
                target: targets[i].clone(),
            });
        }
        let loss = model.train_step(&batch, lr)?;
        log.steps.push(StepRecord {
            step,
            task: Task::Qg,
            loss,
            learning_rate: lr,
        });
        qg_steps += 1;

        if !validation_pairs.is_empty() && optim.eval_every > 0 && qg_steps.is_multiple_of(optim.eval_every) {
            let v = mean_loss(model, &validation_pairs, optim.batch_size)?;
            log.evals.push(EvalRecord {
                step,
                validation_loss: v,
            });
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.snapshot()?));
                log.best_step = Some(step);
                bad_evals = 0;
            } else {
                bad_evals += 1;
                if bad_evals >= optim.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((_, snapshot)) = best {
        model.restore(&snapshot)?;
    }
    Ok(log)
}

fn mean_loss<M: Seq2SeqModel>(model: &M, pairs: &[SeqPair], batch_size: usize) -> Result<f32> {
    let mut total = 0.0f64;
    for chunk in pairs.chunks(batch_size.max(1)) {
        total += model.batch_loss(chunk)? as f64 * chunk.len() as f64;
    }
    Ok((total / pairs.len() as f64) as f32)
}

/// Beam-decodes one question.
pub fn generate<M: Seq2SeqModel>(
    model: &M,
    exemplars: Option<&ExemplarSet>,
    answer: &str,
    context: &str,
    beam_size: usize,
) -> Result<String> {
    let source = build_qg_input(
        exemplars.map(|s| s.questions.as_slice()),
        answer,
        context,
        model.tokenizer(),
        model.max_source_len(),
    )?;
    let ids = beam_decode(model, &source, beam_size, model.max_target_len())?;
    Ok(model.tokenizer().decode(&ids))
}

/// Where inference-time exemplars come from.
pub enum ExemplarSource<'a, C> {
    None,
    /// The classifier picks the type; the bank supplies the set.
    Typed {
        classifier: &'a C,
        bank: &'a ExemplarBank,
        size: usize,
        seed: u64,
    },
    /// One mixed set; no classifier involved.
    Typeless(&'a ExemplarSet),
}

impl<C> Clone for ExemplarSource<'_, C> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<C> Copy for ExemplarSource<'_, C> {}

/// Checks that the bank has a set of every type for the example's language.
pub fn check_bank_coverage(bank: &ExemplarBank, language: &str, size: usize, seed_value: u64) -> Result<()> {
    for t in QuestionType::ALL {
        select_exemplars(bank, language, Some(t), size, seed_value)?;
    }
    Ok(())
}

/// Classify, select, generate.
pub fn pipeline_generate<C: ClassifierModel, M: Seq2SeqModel>(
    source: ExemplarSource<'_, C>,
    qg_model: &M,
    example: &QAExample,
    model_seed: u64,
    beam_size: usize,
) -> Result<GenerationRecord> {
    let (predicted, set) = match source {
        ExemplarSource::None => (None, None),
        ExemplarSource::Typed {
            classifier,
            bank,
            size,
            seed,
        } => {
            check_bank_coverage(bank, &example.language, size, seed)?;
            let (t, _) = predict_type(classifier, &example.answer_text, &example.context)?;
            (Some(t), Some(select_exemplars(bank, &example.language, Some(t), size, seed)?))
        }
        ExemplarSource::Typeless(set) => (None, Some(set)),
    };
    let question = generate(qg_model, set, &example.answer_text, &example.context, beam_size)?;
    Ok(GenerationRecord {
        example_id: example.id.clone(),
        language: example.language.clone(),
        predicted_qtype: predicted,
        exemplar_key: set.map(ExemplarSet::key),
        generated_question: question,
        reference_question: example.question.clone(),
        model_seed,
    })
}

/// [`pipeline_generate`] over a test set, checking bank coverage up front.
pub fn pipeline_generate_batch<C: ClassifierModel, M: Seq2SeqModel>(
    source: ExemplarSource<'_, C>,
    qg_model: &M,
    examples: &[QAExample],
    model_seed: u64,
    beam_size: usize,
) -> Result<Vec<GenerationRecord>> {
    if let ExemplarSource::Typed { bank, size, seed, .. } = source {
        let languages: BTreeSet<&str> = examples.iter().map(|e| e.language.as_str()).collect();
        for l in languages {
            check_bank_coverage(bank, l, size, seed)?;
        }
    }
    examples
        .iter()
        .map(|e| pipeline_generate(source, qg_model, e, model_seed, beam_size))
        .collect()
}
