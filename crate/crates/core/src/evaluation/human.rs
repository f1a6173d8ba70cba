//! Blind human-evaluation sheets and rating aggregation.
//!
//! Five criteria are rated in order: Interrogative (0-2), Grammatical (0-2),
//! Clarity, Answerability and Answer-Match (yes/no). Once a rater gives the
//! lowest value on one criterion, every later criterion takes its lowest value
//! whatever was written. Three raters are then combined per row by majority.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::QAExample;
use crate::error::{QuistError, Result};
use crate::qg::GenerationRecord;
use crate::seed;

pub const SHEET_HEADER: [&str; 9] = ["blind_id", "question", "context", "answer", "I", "G", "C", "A", "AM"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetRow {
    pub blind_id: String,
    pub question: String,
    pub context: String,
    pub answer: String,
}

/// Maps a blind id back to its source. Kept out of the rater-facing sheet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindKey {
    pub blind_id: String,
    pub model: String,
    pub example_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanEvalSheet {
    pub rows: Vec<SheetRow>,
    pub key: Vec<BlindKey>,
}

/// Samples `n_per_model` records from each model and interleaves them in a
/// seeded random order under blind ids.
pub fn export_human_eval_sheet(
    batches: &[(String, Vec<GenerationRecord>)],
    examples: &HashMap<String, QAExample>,
    n_per_model: usize,
    seed: u64,
) -> Result<HumanEvalSheet> {
    let mut items: Vec<(&str, &GenerationRecord)> = Vec::new();
    for (model, records) in batches {
        if records.len() < n_per_model {
            return Err(QuistError::Argument(format!(
                "model {model} has {} records, {n_per_model} requested",
                records.len()
            )));
        }
        let mut picked: Vec<&GenerationRecord> = records.iter().collect();
        picked.shuffle(&mut seed::labeled_rng(seed, &format!("human_eval/{model}")));
        items.extend(picked.into_iter().take(n_per_model).map(|r| (model.as_str(), r)));
    }
    items.shuffle(&mut seed::labeled_rng(seed, "human_eval/order"));

    let width = items.len().to_string().len().max(4);
    let mut rows = Vec::with_capacity(items.len());
    let mut key = Vec::with_capacity(items.len());
    for (i, (model, record)) in items.into_iter().enumerate() {
        let example = examples.get(&record.example_id).ok_or_else(|| {
            QuistError::Lookup(format!("no source example for record {}", record.example_id))
        })?;
        let blind_id = format!("Q{:0width$}", i + 1);
        rows.push(SheetRow {
            blind_id: blind_id.clone(),
            question: record.generated_question.clone(),
            context: example.context.clone(),
            answer: example.answer_text.clone(),
        });
        key.push(BlindKey {
            blind_id,
            model: model.to_string(),
            example_id: record.example_id.clone(),
        });
    }
    Ok(HumanEvalSheet { rows, key })
}

impl HumanEvalSheet {
    /// Rater-facing CSV with empty rating columns.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(SHEET_HEADER)?;
        for r in &self.rows {
            w.write_record([r.blind_id.as_str(), &r.question, &r.context, &r.answer, "", "", "", "", ""])?;
        }
        w.flush().map_err(|e| QuistError::io(path, e))
    }

    pub fn write_key(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.key)?).map_err(|e| QuistError::io(path, e))
    }
}

/// One rater's answers as written. Blank cells are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawRatings {
    pub interrogative: Option<u8>,
    pub grammatical: Option<u8>,
    pub clarity: Option<bool>,
    pub answerability: Option<bool>,
    pub answer_match: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratings {
    pub interrogative: u8,
    pub grammatical: u8,
    pub clarity: bool,
    pub answerability: bool,
    pub answer_match: bool,
}

impl RawRatings {
    /// Applies the cascade. Cells after the first lowest value are forced to
    /// their lowest; any other blank cell is an error.
    pub fn resolve(&self, blind_id: &str) -> Result<Ratings> {
        let missing = |what: &str| QuistError::Input(format!("{blind_id}: {what} rating is blank"));
        let check_scale = |v: u8, what: &str| {
            if v > 2 {
                Err(QuistError::Input(format!("{blind_id}: {what} rating {v} outside 0-2")))
            } else {
                Ok(v)
            }
        };
        let i = check_scale(self.interrogative.ok_or_else(|| missing("interrogative"))?, "interrogative")?;
        let mut stopped = i == 0;
        let g = if stopped {
            0
        } else {
            check_scale(self.grammatical.ok_or_else(|| missing("grammatical"))?, "grammatical")?
        };
        stopped |= g == 0;
        let mut binary = |value: Option<bool>, what: &str| -> Result<bool> {
            if stopped {
                return Ok(false);
            }
            let v = value.ok_or_else(|| missing(what))?;
            stopped |= !v;
            Ok(v)
        };
        let c = binary(self.clarity, "clarity")?;
        let a = binary(self.answerability, "answerability")?;
        let am = binary(self.answer_match, "answer-match")?;
        Ok(Ratings {
            interrogative: i,
            grammatical: g,
            clarity: c,
            answerability: a,
            answer_match: am,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaterSheet {
    pub rows: Vec<(String, RawRatings)>,
}

fn parse_scale(cell: &str) -> Result<Option<u8>> {
    let c = cell.trim();
    if c.is_empty() {
        return Ok(None);
    }
    c.parse::<u8>()
        .map(Some)
        .map_err(|_| QuistError::Input(format!("expected 0, 1 or 2, got {c:?}")))
}

fn parse_yes_no(cell: &str) -> Result<Option<bool>> {
    match cell.trim().to_lowercase().as_str() {
        "" => Ok(None),
        "yes" | "y" => Ok(Some(true)),
        "no" | "n" => Ok(Some(false)),
        other => Err(QuistError::Input(format!("expected yes or no, got {other:?}"))),
    }
}

impl RaterSheet {
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        if header != SHEET_HEADER {
            return Err(QuistError::Input(format!("{}: unexpected header {header:?}", path.display())));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            rows.push((
                rec[0].to_string(),
                RawRatings {
                    interrogative: parse_scale(&rec[4])?,
                    grammatical: parse_scale(&rec[5])?,
                    clarity: parse_yes_no(&rec[6])?,
                    answerability: parse_yes_no(&rec[7])?,
                    answer_match: parse_yes_no(&rec[8])?,
                },
            ));
        }
        Ok(Self { rows })
    }
}

/// Value given by at least two of three raters; with three distinct values
/// the median. Both are the middle of the sorted votes.
fn majority_scale(votes: [u8; 3]) -> u8 {
    let mut v = votes;
    v.sort_unstable();
    v[1]
}

fn majority_binary(votes: [bool; 3]) -> bool {
    votes.iter().filter(|&&v| v).count() >= 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRatings {
    pub model: String,
    pub n: usize,
    /// Mean of per-question majority scores.
    pub interrogative: f64,
    pub grammatical: f64,
    /// Percentages of majority "yes".
    pub clarity_pct: f64,
    pub answerability_pct: f64,
    pub answer_match_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEvalTable {
    pub models: Vec<ModelRatings>,
    /// Per-question majority after the cascade.
    pub rows: BTreeMap<String, Ratings>,
}

pub fn aggregate_human_ratings(sheets: &[RaterSheet], key: &[BlindKey]) -> Result<HumanEvalTable> {
    if sheets.len() != 3 {
        return Err(QuistError::Argument(format!("expected 3 rater sheets, got {}", sheets.len())));
    }
    let ids: Vec<&str> = sheets[0].rows.iter().map(|(id, _)| id.as_str()).collect();
    for (n, s) in sheets.iter().enumerate().skip(1) {
        let other: Vec<&str> = s.rows.iter().map(|(id, _)| id.as_str()).collect();
        if other != ids {
            return Err(QuistError::Input(format!("rater sheet {} rows differ from sheet 1", n + 1)));
        }
    }
    let models: HashMap<&str, &str> = key.iter().map(|k| (k.blind_id.as_str(), k.model.as_str())).collect();

    let mut rows = BTreeMap::new();
    let mut by_model: BTreeMap<&str, Vec<Ratings>> = BTreeMap::new();
    for (idx, id) in ids.iter().enumerate() {
        let resolved = sheets
            .iter()
            .map(|s| s.rows[idx].1.resolve(id))
            .collect::<Result<Vec<_>>>()?;
        let r = [resolved[0], resolved[1], resolved[2]];
        let majority = Ratings {
            interrogative: majority_scale(r.map(|x| x.interrogative)),
            grammatical: majority_scale(r.map(|x| x.grammatical)),
            clarity: majority_binary(r.map(|x| x.clarity)),
            answerability: majority_binary(r.map(|x| x.answerability)),
            answer_match: majority_binary(r.map(|x| x.answer_match)),
        };
        let model = models
            .get(id)
            .ok_or_else(|| QuistError::Lookup(format!("blind id {id} missing from key")))?;
        by_model.entry(model).or_default().push(majority);
        rows.insert(id.to_string(), majority);
    }

    let models = by_model
        .into_iter()
        .map(|(model, rs)| {
            let n = rs.len() as f64;
            let mean = |f: fn(&Ratings) -> f64| rs.iter().map(f).sum::<f64>() / n;
            ModelRatings {
                model: model.to_string(),
                n: rs.len(),
                interrogative: mean(|r| r.interrogative as f64),
                grammatical: mean(|r| r.grammatical as f64),
                clarity_pct: 100.0 * mean(|r| r.clarity as u8 as f64),
                answerability_pct: 100.0 * mean(|r| r.answerability as u8 as f64),
                answer_match_pct: 100.0 * mean(|r| r.answer_match as u8 as f64),
            }
        })
        .collect();
    Ok(HumanEvalTable { models, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interrogative_zero_forces_everything_lowest() {
        let raw = RawRatings {
            interrogative: Some(0),
            ..Default::default()
        };
        let r = raw.resolve("Q1").unwrap();
        assert_eq!((r.interrogative, r.grammatical, r.clarity, r.answerability, r.answer_match), (0, 0, false, false, false));
    }

    #[test]
    fn blank_without_cascade_is_an_error() {
        let raw = RawRatings {
            interrogative: Some(2),
            grammatical: Some(1),
            ..Default::default()
        };
        assert!(raw.resolve("Q1").is_err());
    }

    #[test]
    fn majorities() {
        assert_eq!(majority_scale([2, 1, 1]), 1);
        assert_eq!(majority_scale([0, 2, 1]), 1);
        assert!(majority_binary([true, true, false]));
        assert!(!majority_binary([true, false, false]));
    }
}
