//! Per-type question exemplar sets and the banks that hold them.
//!
//! A set is drawn once, in a seeded order, and then never resampled: every
//! retrieval of the same key yields the same ordered list.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{QuistError, Result};
use crate::question_typing::{classify_rule, AuxiliaryLexicon, QuestionType, TypedQuestion};
use crate::seed;

pub const STANDARD_SIZES: [usize; 4] = [1, 5, 10, 15];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    HumanWritten,
    MachineTranslated,
    Typeless,
}

/// `qtype` is `None` for a typeless set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExemplarKey {
    pub language: String,
    pub qtype: Option<QuestionType>,
    pub size: usize,
    pub seed: u64,
}

impl ExemplarKey {
    pub fn new(language: &str, qtype: Option<QuestionType>, size: usize, seed: u64) -> Self {
        Self {
            language: language.to_string(),
            qtype,
            size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub language: String,
    pub qtype: Option<QuestionType>,
    pub size: usize,
    pub seed: u64,
    pub questions: Vec<String>,
}

impl ExemplarSet {
    pub fn key(&self) -> ExemplarKey {
        ExemplarKey::new(&self.language, self.qtype, self.size, self.seed)
    }

    pub fn is_standard_size(&self) -> bool {
        STANDARD_SIZES.contains(&self.size)
    }
}

/// One line of the bank file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct BankEntry {
    language: String,
    qtype: Option<QuestionType>,
    size: usize,
    seed: u64,
    provenance: Provenance,
    questions: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExemplarBank {
    sets: BTreeMap<ExemplarKey, (ExemplarSet, Provenance)>,
}

impl ExemplarBank {
    pub fn insert(&mut self, set: ExemplarSet, provenance: Provenance) -> Result<()> {
        let key = set.key();
        if self.sets.contains_key(&key) {
            return Err(QuistError::Argument(format!("duplicate exemplar key {key:?}")));
        }
        self.sets.insert(key, (set, provenance));
        Ok(())
    }

    /// Folds `other` into this bank; keys must not collide.
    pub fn merge(&mut self, other: ExemplarBank) -> Result<()> {
        for (_, (set, p)) in other.sets {
            self.insert(set, p)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn get(&self, key: &ExemplarKey) -> Option<&ExemplarSet> {
        self.sets.get(key).map(|(s, _)| s)
    }

    pub fn provenance(&self, key: &ExemplarKey) -> Option<Provenance> {
        self.sets.get(key).map(|(_, p)| *p)
    }

    pub fn keys(&self) -> impl Iterator<Item = &ExemplarKey> {
        self.sets.keys()
    }

    pub fn languages(&self) -> BTreeSet<&str> {
        self.sets.keys().map(|k| k.language.as_str()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let entries: Vec<BankEntry> = self
            .sets
            .values()
            .map(|(s, p)| BankEntry {
                language: s.language.clone(),
                qtype: s.qtype,
                size: s.size,
                seed: s.seed,
                provenance: *p,
                questions: s.questions.clone(),
            })
            .collect();
        Ok(serde_json::to_string_pretty(&entries)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let entries: Vec<BankEntry> = serde_json::from_str(text)?;
        let mut bank = Self::default();
        for e in entries {
            if e.questions.len() != e.size {
                return Err(QuistError::Input(format!(
                    "exemplar set ({}, {:?}, {}, {}) holds {} questions",
                    e.language,
                    e.qtype,
                    e.size,
                    e.seed,
                    e.questions.len()
                )));
            }
            bank.insert(
                ExemplarSet {
                    language: e.language,
                    qtype: e.qtype,
                    size: e.size,
                    seed: e.seed,
                    questions: e.questions,
                },
                e.provenance,
            )?;
        }
        Ok(bank)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| QuistError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| QuistError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Returns the stored set for a key, unmodified.
pub fn select_exemplars<'a>(
    bank: &'a ExemplarBank,
    language: &str,
    qtype: Option<QuestionType>,
    size: usize,
    seed: u64,
) -> Result<&'a ExemplarSet> {
    let key = ExemplarKey::new(language, qtype, size, seed);
    bank.get(&key).ok_or_else(|| {
        let sizes: BTreeSet<usize> = bank
            .keys()
            .filter(|k| k.language == language && k.qtype == qtype)
            .map(|k| k.size)
            .collect();
        let seeds: BTreeSet<u64> = bank
            .keys()
            .filter(|k| k.language == language && k.qtype == qtype)
            .map(|k| k.seed)
            .collect();
        let t = qtype.map_or("typeless".to_string(), |t| t.to_string());
        QuistError::Lookup(format!(
            "no exemplar set for ({language}, {t}, {size}, {seed}); available sizes {sizes:?}, seeds {seeds:?}"
        ))
    })
}

/// Questions grouped by type, deduplicated, first occurrence order.
pub fn pools(typed: &[TypedQuestion]) -> BTreeMap<QuestionType, Vec<String>> {
    let mut pools: BTreeMap<QuestionType, Vec<String>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for t in typed {
        if seen.insert((t.qtype, t.question.clone())) {
            pools.entry(t.qtype).or_default().push(t.question.clone());
        }
    }
    pools
}

fn draw(pool: &[String], size: usize, label: &str, seed_value: u64) -> Vec<String> {
    pool.choose_multiple(&mut seed::labeled_rng(seed_value, label), size)
        .cloned()
        .collect()
}

fn build_from_pools(
    pools: &BTreeMap<QuestionType, Vec<String>>,
    language: &str,
    sizes: &BTreeSet<usize>,
    seeds: &BTreeSet<u64>,
    provenance: Provenance,
) -> Result<ExemplarBank> {
    let needed = sizes.iter().copied().max().unwrap_or(0);
    let mut bank = ExemplarBank::default();
    for t in QuestionType::ALL {
        let pool = pools.get(&t).map(Vec::as_slice).unwrap_or(&[]);
        if pool.len() < needed || pool.is_empty() {
            return Err(QuistError::InsufficientPool {
                qtype: t.to_string(),
                needed: needed.max(1),
                available: pool.len(),
            });
        }
        for &size in sizes {
            for &s in seeds {
                let label = format!("exemplar/{language}/{t}/{size}");
                bank.insert(
                    ExemplarSet {
                        language: language.to_string(),
                        qtype: Some(t),
                        size,
                        seed: s,
                        questions: draw(pool, size, &label, s),
                    },
                    provenance,
                )?;
            }
        }
    }
    Ok(bank)
}

/// Seeded without-replacement samples of English questions for every
/// (type, size, seed).
pub fn build_english_bank(
    typed: &[TypedQuestion],
    sizes: &BTreeSet<usize>,
    seeds: &BTreeSet<u64>,
) -> Result<ExemplarBank> {
    build_from_pools(&pools(typed), "en", sizes, seeds, Provenance::HumanWritten)
}

/// Text translation, abstracted so tests run offline.
pub trait Translator {
    fn translate(&self, text: &str, source_language: &str, target_language: &str) -> Result<String>;
}

/// Exact-string lookup table; unknown text passes through unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryTranslator {
    pub table: HashMap<String, String>,
}

impl DictionaryTranslator {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            table: pairs.into_iter().collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| QuistError::io(path, e))?;
        Ok(Self {
            table: serde_json::from_str(&text)?,
        })
    }
}

impl Translator for DictionaryTranslator {
    fn translate(&self, text: &str, _source: &str, _target: &str) -> Result<String> {
        Ok(self.table.get(text).cloned().unwrap_or_else(|| text.to_string()))
    }
}

/// Types target-language questions through their English translation.
/// Untypeable questions are dropped; the originals are kept.
pub fn type_target_questions(
    questions: &[String],
    language: &str,
    translator: &dyn Translator,
    lexicon: &AuxiliaryLexicon,
) -> Result<Vec<TypedQuestion>> {
    let mut out = Vec::new();
    for q in questions {
        let english = translator.translate(q, language, "en")?;
        if let Some(qtype) = classify_rule(&english, lexicon) {
            out.push(TypedQuestion {
                question: q.clone(),
                qtype,
            });
        }
    }
    Ok(out)
}

/// Bank of original target-language questions, typed via translation.
pub fn build_target_bank(
    questions: &[String],
    language: &str,
    translator: &dyn Translator,
    lexicon: &AuxiliaryLexicon,
    sizes: &BTreeSet<usize>,
    seeds: &BTreeSet<u64>,
) -> Result<ExemplarBank> {
    let typed = type_target_questions(questions, language, translator, lexicon)?;
    build_from_pools(&pools(&typed), language, sizes, seeds, Provenance::HumanWritten)
}

/// English exemplars machine-translated into `language`, for the translated
/// exemplar ablation.
pub fn build_translated_bank(
    english: &ExemplarBank,
    language: &str,
    translator: &dyn Translator,
) -> Result<ExemplarBank> {
    let mut bank = ExemplarBank::default();
    for key in english.keys().filter(|k| k.language == "en") {
        let set = english.get(key).expect("key from the same bank");
        let questions = set
            .questions
            .iter()
            .map(|q| translator.translate(q, "en", language))
            .collect::<Result<Vec<_>>>()?;
        bank.insert(
            ExemplarSet {
                language: language.to_string(),
                questions,
                ..set.clone()
            },
            Provenance::MachineTranslated,
        )?;
    }
    Ok(bank)
}

/// One set mixing `per_type` questions of every type, ordered by type then
/// draw order.
pub fn build_typeless_bank(
    typed: &[TypedQuestion],
    language: &str,
    per_type: usize,
    seed_value: u64,
) -> Result<ExemplarSet> {
    let pools = pools(typed);
    let mut questions = Vec::with_capacity(per_type * QuestionType::COUNT);
    for t in QuestionType::ALL {
        let pool = pools.get(&t).map(Vec::as_slice).unwrap_or(&[]);
        if pool.len() < per_type {
            return Err(QuistError::InsufficientPool {
                qtype: t.to_string(),
                needed: per_type,
                available: pool.len(),
            });
        }
        questions.extend(draw(pool, per_type, &format!("typeless/{language}/{t}"), seed_value));
    }
    Ok(ExemplarSet {
        language: language.to_string(),
        qtype: None,
        size: questions.len(),
        seed: seed_value,
        questions,
    })
}

/// Whether exemplars are fixed per key or redrawn for every example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExemplarPolicy {
    #[default]
    Static,
    Dynamic,
}

/// Per-example exemplar draws for the dynamic policy. Deterministic in
/// (seed, example id).
#[derive(Debug, Clone)]
pub struct DynamicSampler {
    language: String,
    pools: BTreeMap<QuestionType, Vec<String>>,
}

impl DynamicSampler {
    pub fn new(language: &str, typed: &[TypedQuestion]) -> Self {
        Self {
            language: language.to_string(),
            pools: pools(typed),
        }
    }

    pub fn sample(&self, qtype: QuestionType, size: usize, seed_value: u64, example_id: &str) -> Result<ExemplarSet> {
        let pool = self.pools.get(&qtype).map(Vec::as_slice).unwrap_or(&[]);
        if pool.len() < size {
            return Err(QuistError::InsufficientPool {
                qtype: qtype.to_string(),
                needed: size,
                available: pool.len(),
            });
        }
        Ok(ExemplarSet {
            language: self.language.clone(),
            qtype: Some(qtype),
            size,
            seed: seed_value,
            questions: draw(pool, size, &format!("dynamic/{example_id}"), seed_value),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn typed_pool(per_type: usize) -> Vec<TypedQuestion> {
        QuestionType::ALL
            .iter()
            .flat_map(|&t| {
                (0..per_type).map(move |i| TypedQuestion {
                    question: format!("{t} question {i}?"),
                    qtype: t,
                })
            })
            .collect()
    }

    #[test]
    fn english_bank_cardinality_and_determinism() {
        let sizes: BTreeSet<usize> = STANDARD_SIZES.into_iter().collect();
        let seeds: BTreeSet<u64> = (0..5).collect();
        let a = build_english_bank(&typed_pool(100), &sizes, &seeds).unwrap();
        let b = build_english_bank(&typed_pool(100), &sizes, &seeds).unwrap();
        assert_eq!(a.len(), 160);
        assert_eq!(a, b);
        for k in a.keys() {
            let set = a.get(k).unwrap();
            let distinct: BTreeSet<_> = set.questions.iter().collect();
            assert_eq!(distinct.len(), set.size);
        }
    }

    #[test]
    fn insufficient_pool_names_type() {
        let mut typed = typed_pool(20);
        typed.retain(|t| t.qtype != QuestionType::Why || t.question.ends_with(" 0?") || t.question.ends_with(" 1?") || t.question.ends_with(" 2?"));
        let err = build_english_bank(&typed, &BTreeSet::from([15]), &BTreeSet::from([0])).unwrap_err();
        assert!(err.to_string().contains("Why"), "{err}");
    }

    #[test]
    fn typeless_set_sizes() {
        assert_eq!(build_typeless_bank(&typed_pool(5), "en", 2, 0).unwrap().questions.len(), 16);
        assert_eq!(build_typeless_bank(&typed_pool(5), "en", 1, 0).unwrap().questions.len(), 8);
    }

    #[test]
    fn missing_key_lists_alternatives() {
        let bank = build_english_bank(&typed_pool(20), &BTreeSet::from([15]), &BTreeSet::from([0])).unwrap();
        let err = select_exemplars(&bank, "en", Some(QuestionType::When), 20, 0).unwrap_err();
        assert!(err.to_string().contains("sizes {15}"), "{err}");
    }
}
