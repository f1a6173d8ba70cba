//! Synthetic QA data from context–answer pairs, and exact-match scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{ClassifierModel, Seq2SeqModel};
use crate::corpus::{write_jsonl, QAExample};
use crate::error::{QuistError, Result};
use crate::exemplar::{ExemplarBank, ExemplarKey};
use crate::qg::{check_bank_coverage, pipeline_generate, ExemplarSource, QGTrainingMode};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextAnswer {
    pub context: String,
    pub answer: String,
    pub language: String,
}

impl From<&QAExample> for ContextAnswer {
    fn from(e: &QAExample) -> Self {
        Self {
            context: e.context.clone(),
            answer: e.answer_text.clone(),
            language: e.language.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticProvenance {
    pub generator_mode: QGTrainingMode,
    pub model_seed: u64,
    pub exemplar_key: Option<ExemplarKey>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticQAExample {
    #[serde(flatten)]
    pub example: QAExample,
    pub provenance: SyntheticProvenance,
}

/// Trained models plus the bank they draw exemplars from.
pub struct GeneratorHandle<'a, C, M> {
    pub classifier: &'a C,
    pub qg_model: &'a M,
    pub bank: &'a ExemplarBank,
    pub mode: QGTrainingMode,
    pub model_seed: u64,
    pub beam_size: usize,
}

/// One synthetic example per pair and exemplar seed. Every pair language is
/// checked against the bank before anything is generated.
pub fn generate_synthetic_qa<C: ClassifierModel, M: Seq2SeqModel>(
    pairs: &[ContextAnswer],
    generator: &GeneratorHandle<'_, C, M>,
    size: usize,
    exemplar_seeds: &[u64],
) -> Result<Vec<SyntheticQAExample>> {
    let uses_exemplars = generator.mode.infers_with_exemplars();
    if uses_exemplars {
        let languages: BTreeSet<&str> = pairs.iter().map(|p| p.language.as_str()).collect();
        for l in languages {
            for &s in exemplar_seeds {
                check_bank_coverage(generator.bank, l, size, s)?;
            }
        }
    }
    let mut out = Vec::with_capacity(pairs.len() * exemplar_seeds.len());
    for &s in exemplar_seeds {
        for (i, pair) in pairs.iter().enumerate() {
            let answer_start = pair
                .context
                .find(&pair.answer)
                .map_or(-1, |b| pair.context[..b].chars().count() as i64);
            let probe = QAExample {
                id: format!("syn-{i:05}-e{s}-m{}", generator.model_seed),
                language: pair.language.clone(),
                context: pair.context.clone(),
                question: String::new(),
                answer_text: pair.answer.clone(),
                answer_start,
            };
            let source = if uses_exemplars {
                ExemplarSource::Typed {
                    classifier: generator.classifier,
                    bank: generator.bank,
                    size,
                    seed: s,
                }
            } else {
                ExemplarSource::None
            };
            let record = pipeline_generate(source, generator.qg_model, &probe, generator.model_seed, generator.beam_size)?;
            out.push(SyntheticQAExample {
                example: QAExample {
                    question: record.generated_question,
                    ..probe
                },
                provenance: SyntheticProvenance {
                    generator_mode: generator.mode,
                    model_seed: generator.model_seed,
                    exemplar_key: record.exemplar_key,
                },
            });
        }
    }
    Ok(out)
}

pub fn provenance_path(data_path: &Path) -> PathBuf {
    let mut name = data_path.file_stem().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    data_path.with_file_name(name)
}

/// Writes the examples as triplet-jsonl and their provenance, keyed by id,
/// to a sidecar next to it.
pub fn write_synthetic(path: &Path, records: &[SyntheticQAExample]) -> Result<PathBuf> {
    let examples: Vec<&QAExample> = records.iter().map(|r| &r.example).collect();
    write_jsonl(path, &examples)?;
    let sidecar = provenance_path(path);
    let map: BTreeMap<&str, &SyntheticProvenance> =
        records.iter().map(|r| (r.example.id.as_str(), &r.provenance)).collect();
    std::fs::write(&sidecar, serde_json::to_string_pretty(&map)?).map_err(|e| QuistError::io(&sidecar, e))?;
    Ok(sidecar)
}

/// Lowercase, punctuation removed, English articles dropped (English only),
/// whitespace collapsed.
pub fn normalize_answer(text: &str, language: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| language != "en" || !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1 if the normalized prediction equals any normalized gold answer.
pub fn exact_match(prediction: &str, gold_answers: &[String], language: &str) -> Result<u8> {
    if gold_answers.is_empty() {
        return Err(QuistError::Argument("exact match needs at least one gold answer".into()));
    }
    let p = normalize_answer(prediction, language);
    Ok(gold_answers.iter().any(|g| normalize_answer(g, language) == p) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn em_cases() {
        assert_eq!(exact_match("The Cat.", &g(&["the cat"]), "en").unwrap(), 1);
        assert_eq!(exact_match("cat", &g(&["dog"]), "en").unwrap(), 0);
        assert_eq!(exact_match("France", &g(&["France", "the France"]), "en").unwrap(), 1);
        assert_eq!(exact_match("the cat", &g(&["cat"]), "sw").unwrap(), 0);
        assert!(exact_match("x", &[], "en").is_err());
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(provenance_path(Path::new("out/syn.jsonl")), PathBuf::from("out/syn.provenance.json"));
    }
}
