//! The declarative run configuration read by the command-line tool.
//!
//! One TOML file describes inputs, model sizes and optimization settings.
//! Every random choice in a run draws from a child seed derived from the
//! single global `seed` and a component label.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{OptimConfig, TransformerConfig};
use crate::error::{QuistError, Result};
use crate::evaluation::MetricName;
use crate::exemplar::{ExemplarPolicy, STANDARD_SIZES};
use crate::qg::{PretrainConfig, QGTrainingMode, DEFAULT_BEAM_SIZE, DEFAULT_MASK_RATIO};
use crate::qtc::QTCTrainConfig;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Reference,
    External,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Reference => "reference",
            BackendKind::External => "external",
        })
    }
}

impl FromStr for BackendKind {
    type Err = QuistError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Self::Reference),
            "external" => Ok(Self::External),
            other => Err(QuistError::Argument(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledInput {
    pub model: String,
    pub path: PathBuf,
}

/// Input files. Relative paths are taken relative to the config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// English training data (triplet-jsonl or SQuAD, see `train_format`).
    pub train_corpus: Option<PathBuf>,
    pub train_format: Option<String>,
    pub validation_corpus: Option<PathBuf>,
    /// Target-language test set.
    pub test_corpus: Option<PathBuf>,
    /// Target-language questions (triplet-jsonl) for the exemplar bank.
    pub target_questions: Option<PathBuf>,
    /// JSON object mapping target questions to English.
    pub translations: Option<PathBuf>,
    /// Plain text, one passage per line, for backbone pretraining.
    pub pretraining_texts: Option<PathBuf>,
    /// Use this bank instead of the one `build-bank` writes.
    pub bank: Option<PathBuf>,
    /// Use these generations instead of the ones `generate` writes.
    pub generations: Option<PathBuf>,
    /// Context–answer pairs (triplet-jsonl) for `augment`.
    pub augment_pairs: Option<PathBuf>,
    pub auxiliaries: Option<PathBuf>,
    pub adjective_hints: Option<PathBuf>,
    /// Generation files compared by `codeswitch-report`.
    pub codeswitch_inputs: Vec<LabeledInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExemplarConfig {
    /// Sizes and seeds stored in the bank.
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Size and seed used for training and generation.
    pub size: usize,
    pub seed: u64,
    pub policy: ExemplarPolicy,
    /// Generate with one mixed set instead of classifier-selected ones.
    pub typeless: bool,
    pub typeless_per_type: usize,
}

impl Default for ExemplarConfig {
    fn default() -> Self {
        Self {
            sizes: STANDARD_SIZES.to_vec(),
            seeds: (0..5).collect(),
            size: 15,
            seed: 0,
            policy: ExemplarPolicy::Static,
            typeless: false,
            typeless_per_type: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub model_seeds: Vec<u64>,
    pub exemplar_seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            model_seeds: (0..5).collect(),
            exemplar_seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub min_count: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { min_count: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QGSection {
    #[serde(flatten)]
    pub optim: OptimConfig,
    pub mask_ratio: f64,
}

impl Default for QGSection {
    fn default() -> Self {
        Self {
            optim: OptimConfig::qg_default(),
            mask_ratio: DEFAULT_MASK_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub beam_size: usize,
    /// Generate for only the first `limit` test examples.
    pub limit: Option<usize>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            beam_size: DEFAULT_BEAM_SIZE,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub metrics: Vec<MetricName>,
    /// Vocabulary size of the subword model trained for SP-ROUGE.
    pub subword_vocab_size: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            metrics: vec![MetricName::Bleu4, MetricName::Meteor, MetricName::RougeL],
            subword_vocab_size: 500,
        }
    }
}

/// Section `seed` fields are ignored at run time: component seeds are
/// derived from the global `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: QGTrainingMode,
    pub backend: BackendKind,
    pub target_language: String,
    pub paths: Paths,
    pub exemplars: ExemplarConfig,
    pub sweep: SweepConfig,
    pub model: TransformerConfig,
    pub tokenizer: TokenizerConfig,
    pub pretrain: PretrainConfig,
    pub qtc: QTCTrainConfig,
    pub qg: QGSection,
    pub generation: GenerationConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: QGTrainingMode::Quist,
            backend: BackendKind::Reference,
            target_language: "en".into(),
            paths: Paths::default(),
            exemplars: ExemplarConfig::default(),
            sweep: SweepConfig::default(),
            model: TransformerConfig::default(),
            tokenizer: TokenizerConfig::default(),
            pretrain: PretrainConfig {
                steps: 0,
                ..PretrainConfig::default()
            },
            qtc: QTCTrainConfig::default(),
            qg: QGSection::default(),
            generation: GenerationConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| QuistError::Config(e.to_string()))
    }

    /// Reads a config file and makes its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QuistError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.train_corpus,
            &mut p.validation_corpus,
            &mut p.test_corpus,
            &mut p.target_questions,
            &mut p.translations,
            &mut p.pretraining_texts,
            &mut p.bank,
            &mut p.generations,
            &mut p.augment_pairs,
            &mut p.auxiliaries,
            &mut p.adjective_hints,
        ] {
            resolve(base, slot);
        }
        for input in &mut p.codeswitch_inputs {
            if input.path.is_relative() {
                input.path = base.join(&input.path);
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| QuistError::Config(e.to_string()))
    }

    /// SHA-256 of the effective configuration.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Child seed for a named component.
    pub fn component_seed(&self, label: &str) -> u64 {
        seed::derive_seed(self.seed, label)
    }

    /// Checks the parts of the config that do not depend on the command.
    pub fn validate(&self) -> Result<()> {
        if self.backend == BackendKind::External {
            return Err(QuistError::Config(
                "no external backend adapter is registered in this build; use backend = \"reference\"".into(),
            ));
        }
        if self.exemplars.sizes.is_empty() || self.exemplars.seeds.is_empty() {
            return Err(QuistError::Config("exemplar sizes and seeds must be non-empty".into()));
        }
        if self.sweep.model_seeds.is_empty() || self.sweep.exemplar_seeds.is_empty() {
            return Err(QuistError::Config("sweep seeds must be non-empty".into()));
        }
        if self.exemplars.size == 0 {
            return Err(QuistError::Config("exemplar size must be positive".into()));
        }
        if self.generation.beam_size == 0 {
            return Err(QuistError::Config("beam size must be at least 1".into()));
        }
        if self.evaluation.metrics.is_empty() {
            return Err(QuistError::Config("metric list must be non-empty".into()));
        }
        Ok(())
    }

    /// Seeds recorded in run manifests.
    pub fn seed_table(&self, labels: &[&str]) -> BTreeMap<String, u64> {
        labels.iter().map(|l| (l.to_string(), self.component_seed(l))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        let c = RunConfig::from_toml("seed = 3\nmode = \"baseline_enc\"\n[qg]\nbatch_size = 4").unwrap();
        assert_eq!(c.qg.optim.batch_size, 4);
        assert_eq!(c.mode, QGTrainingMode::BaselineEnc);
    }

    #[test]
    fn seeds_fan_out() {
        let c = RunConfig::default();
        assert_ne!(c.component_seed("qtc"), c.component_seed("qg"));
        assert!(RunConfig {
            backend: BackendKind::External,
            ..RunConfig::default()
        }
        .validate()
        .is_err());
    }
}
