//! Backend-agnostic model interface.
//!
//! Training and generation code is written against [`Seq2SeqModel`] and
//! [`ClassifierModel`]. The bundled implementation is a small from-scratch
//! transformer ([`transformer`]); adapters for pretrained backbones implement
//! the same traits.

pub mod beam;
pub mod checkpoint;
pub mod nn;
pub mod schedule;
pub mod transformer;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{QuistError, Result};
use crate::question_typing::QuestionType;
use crate::tokenizer::{TokenId, Tokenizer};

pub use beam::{beam_search, greedy_search, Hypothesis};
pub use schedule::{LinearWarmup, OptimConfig};
pub use transformer::{TransformerClassifier, TransformerConfig, TransformerSeq2Seq};

/// Named parameter partitions. Freezing operates on whole groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParameterGroup {
    Embeddings,
    Encoder,
    Decoder,
    Head,
}

impl ParameterGroup {
    pub const ALL: [ParameterGroup; 4] = [
        ParameterGroup::Embeddings,
        ParameterGroup::Encoder,
        ParameterGroup::Decoder,
        ParameterGroup::Head,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParameterGroup::Embeddings => "embeddings",
            ParameterGroup::Encoder => "encoder",
            ParameterGroup::Decoder => "decoder",
            ParameterGroup::Head => "head",
        }
    }
}

impl fmt::Display for ParameterGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParameterGroup {
    type Err = QuistError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| QuistError::Argument(format!("unknown parameter group {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupState {
    pub name: ParameterGroup,
    pub trainable: bool,
    pub parameters: usize,
}

/// One source/target pair. The target already ends with end-of-sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqPair {
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

pub trait Trainable {
    type Snapshot: Clone;

    /// Groups this model owns, in canonical order.
    fn groups(&self) -> &[ParameterGroup];

    fn group_states(&self) -> Vec<GroupState>;

    /// Makes exactly `groups` trainable. Later optimizer steps leave every
    /// other group bitwise unchanged. Resets optimizer state.
    fn set_trainable(&mut self, groups: &BTreeSet<ParameterGroup>) -> Result<()>;

    fn snapshot(&self) -> Result<Self::Snapshot>;

    fn restore(&mut self, snapshot: &Self::Snapshot) -> Result<()>;

    /// Flattened parameter values of one group, for equality checks.
    fn group_values(&self, group: ParameterGroup) -> Result<Vec<f32>>;

    fn steps_taken(&self) -> u64;
}

pub trait Seq2SeqModel: Trainable {
    type Encoded;

    fn tokenizer(&self) -> &Tokenizer;

    fn max_source_len(&self) -> usize;

    fn max_target_len(&self) -> usize;

    /// Cross-entropy at every target position given the gold prefix.
    fn token_losses(&self, source: &[TokenId], target: &[TokenId]) -> Result<Vec<f32>>;

    /// Mean token loss over a batch, without updating parameters.
    fn batch_loss(&self, batch: &[SeqPair]) -> Result<f32>;

    /// One optimizer step on the mean token loss. Returns the pre-step loss.
    fn train_step(&mut self, batch: &[SeqPair], learning_rate: f64) -> Result<f32>;

    fn encode_source(&self, source: &[TokenId]) -> Result<Self::Encoded>;

    /// Next-token log-probabilities after each generated prefix (which does
    /// not include the decoder start token).
    fn next_log_probs(&self, encoded: &Self::Encoded, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f32>>>;
}

pub trait ClassifierModel: Trainable {
    fn tokenizer(&self) -> &Tokenizer;

    fn max_len(&self) -> usize;

    fn logits(&self, batch: &[Vec<TokenId>]) -> Result<Vec<Vec<f32>>>;

    fn batch_loss(&self, batch: &[(Vec<TokenId>, usize)]) -> Result<f32>;

    fn train_step(&mut self, batch: &[(Vec<TokenId>, usize)], learning_rate: f64) -> Result<f32>;
}

/// Parses group names and applies them. Unknown names and groups the model
/// does not own are argument errors.
pub fn freeze_groups<M: Trainable>(model: &mut M, trainable_names: &[&str]) -> Result<()> {
    let mut set = BTreeSet::new();
    for name in trainable_names {
        let g: ParameterGroup = name.parse()?;
        if !model.groups().contains(&g) {
            return Err(QuistError::Argument(format!("model has no {g} group")));
        }
        set.insert(g);
    }
    model.set_trainable(&set)
}

/// Truncates to the model maxima instead of failing.
fn clip(ids: &[TokenId], max: usize) -> &[TokenId] {
    &ids[..ids.len().min(max)]
}

/// Mean cross-entropy of `target` given gold prefixes.
pub fn teacher_forced_loss<M: Seq2SeqModel>(model: &M, source: &[TokenId], target: &[TokenId]) -> Result<f32> {
    if target.is_empty() {
        return Err(QuistError::Argument("target must contain at least one token".into()));
    }
    let losses = model.token_losses(
        clip(source, model.max_source_len()),
        clip(target, model.max_target_len()),
    )?;
    Ok(losses.iter().sum::<f32>() / losses.len() as f32)
}

/// Sum of log-probabilities the model assigns to `target` (end-of-sequence
/// included if present).
pub fn sequence_log_prob<M: Seq2SeqModel>(model: &M, source: &[TokenId], target: &[TokenId]) -> Result<f64> {
    if target.is_empty() {
        return Ok(0.0);
    }
    let losses = model.token_losses(
        clip(source, model.max_source_len()),
        clip(target, model.max_target_len()),
    )?;
    Ok(-losses.iter().map(|&l| l as f64).sum::<f64>())
}

/// Beam search over the model. Output excludes end-of-sequence.
pub fn beam_decode<M: Seq2SeqModel>(
    model: &M,
    source: &[TokenId],
    beam_size: usize,
    max_length: usize,
) -> Result<Vec<TokenId>> {
    Ok(beam_decode_scored(model, source, beam_size, max_length)?.content().to_vec())
}

pub fn beam_decode_scored<M: Seq2SeqModel>(
    model: &M,
    source: &[TokenId],
    beam_size: usize,
    max_length: usize,
) -> Result<Hypothesis> {
    if beam_size < 1 {
        return Err(QuistError::Argument("beam size must be at least 1".into()));
    }
    let encoded = model.encode_source(clip(source, model.max_source_len()))?;
    let eos = model.tokenizer().special().end_of_sequence;
    let max_length = max_length.min(model.max_target_len());
    beam_search(
        |prefixes: &[Vec<TokenId>]| model.next_log_probs(&encoded, prefixes),
        eos,
        beam_size,
        max_length,
    )
}

/// Softmax over classifier logits for a single `[classifier_start] ...` input.
pub fn encode_for_classification<M: ClassifierModel>(model: &M, ids: &[TokenId]) -> Result<[f64; QuestionType::COUNT]> {
    let cls = model.tokenizer().special().classifier_start;
    if ids.first() != Some(&cls) {
        return Err(QuistError::Input("classifier input must begin with the classifier_start token".into()));
    }
    let logits = model.logits(&[clip(ids, model.max_len()).to_vec()])?;
    let row = &logits[0];
    if row.len() != QuestionType::COUNT {
        return Err(QuistError::Input(format!("classifier produced {} logits", row.len())));
    }
    Ok(softmax8(row))
}

pub fn softmax8(logits: &[f32]) -> [f64; QuestionType::COUNT] {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut out = [0.0; QuestionType::COUNT];
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l as f64 - max).exp();
        total += *o;
    }
    for o in &mut out {
        *o /= total;
    }
    out
}
