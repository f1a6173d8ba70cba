//! Code-switching labels for generated questions.
//!
//! A question whose target-language share falls below the threshold is fully
//! code-switched. Above the threshold, a question that still contains an
//! English interrogative expression is labeled interrogative code-switching.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{QuistError, Result};
use crate::language::is_unsegmented;
use crate::qg::GenerationRecord;
use crate::tokenizer::word_tokens;

pub const TARGET_SHARE_THRESHOLD: f64 = 0.70;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeSwitchLabel {
    None,
    Interrogative,
    Full,
}

impl CodeSwitchLabel {
    pub const ALL: [CodeSwitchLabel; 3] = [CodeSwitchLabel::None, CodeSwitchLabel::Interrogative, CodeSwitchLabel::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            CodeSwitchLabel::None => "none",
            CodeSwitchLabel::Interrogative => "interrogative",
            CodeSwitchLabel::Full => "full",
        }
    }
}

impl fmt::Display for CodeSwitchLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Share of `text` written in `language`, in [0, 1].
pub trait LanguageIdentifier {
    fn proportion(&self, text: &str, language: &str) -> f64;
}

/// Units the share is measured over: word tokens for segmented scripts,
/// non-space characters for scripts written without spaces. Punctuation is
/// ignored either way.
pub fn language_units(text: &str, language: &str) -> Vec<String> {
    if is_unsegmented(language) {
        text.chars()
            .filter(|c| c.is_alphanumeric())
            .map(|c| c.to_string())
            .collect()
    } else {
        word_tokens(text)
            .into_iter()
            .filter(|t| t.chars().any(char::is_alphanumeric))
            .collect()
    }
}

/// Always reports the same share. Useful for threshold tests.
#[derive(Debug, Clone, Copy)]
pub struct ConstantIdentifier(pub f64);

impl LanguageIdentifier for ConstantIdentifier {
    fn proportion(&self, _text: &str, _language: &str) -> f64 {
        self.0.clamp(0.0, 1.0)
    }
}

/// Looks each unit up in a word-to-language table; unknown units count
/// against the target.
#[derive(Debug, Clone, Default)]
pub struct WordTableIdentifier {
    table: HashMap<String, String>,
}

impl WordTableIdentifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_words<'a>(mut self, language: &str, words: impl IntoIterator<Item = &'a str>) -> Self {
        for w in words {
            self.table.insert(w.to_lowercase(), language.to_string());
        }
        self
    }
}

impl LanguageIdentifier for WordTableIdentifier {
    fn proportion(&self, text: &str, language: &str) -> f64 {
        let units = language_units(text, language);
        if units.is_empty() {
            return 0.0;
        }
        let hits = units
            .iter()
            .filter(|u| self.table.get(u.as_str()).is_some_and(|l| l == language))
            .count();
        hits as f64 / units.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Script {
    Latin,
    Cyrillic,
    Greek,
    Arabic,
    Devanagari,
    Bengali,
    Telugu,
    Thai,
    Hangul,
    Han,
    Kana,
    Other,
}

fn script_of(c: char) -> Script {
    match c as u32 {
        0x0041..=0x024F => Script::Latin,
        0x0370..=0x03FF => Script::Greek,
        0x0400..=0x04FF => Script::Cyrillic,
        0x0600..=0x06FF => Script::Arabic,
        0x0900..=0x097F => Script::Devanagari,
        0x0980..=0x09FF => Script::Bengali,
        0x0C00..=0x0C7F => Script::Telugu,
        0x0E00..=0x0E7F => Script::Thai,
        0xAC00..=0xD7AF | 0x1100..=0x11FF => Script::Hangul,
        0x3040..=0x30FF => Script::Kana,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF => Script::Han,
        _ => Script::Other,
    }
}

fn language_script(language: &str) -> Option<Script> {
    Some(match language {
        "ru" => Script::Cyrillic,
        "el" => Script::Greek,
        "ar" => Script::Arabic,
        "hi" => Script::Devanagari,
        "bn" => Script::Bengali,
        "te" => Script::Telugu,
        "th" => Script::Thai,
        "ko" => Script::Hangul,
        "zh" => Script::Han,
        "ja" => Script::Kana,
        _ => return None,
    })
}

/// Common English function words and interrogatives, used to separate
/// English from other Latin-script languages.
const ENGLISH_WORDS: &[&str] = &[
    "a", "about", "after", "all", "an", "and", "are", "as", "at", "be", "been", "before", "by",
    "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her", "his",
    "how", "in", "is", "it", "its", "long", "many", "much", "of", "old", "on", "or", "she",
    "should", "that", "the", "their", "them", "they", "this", "to", "was", "were", "what",
    "when", "where", "which", "who", "whom", "whose", "why", "will", "with", "would", "you",
];

/// Bundled heuristic: script membership for languages with a distinctive
/// script; for Latin-script languages, every Latin word that is not a common
/// English word counts toward the target.
#[derive(Debug, Clone)]
pub struct ScriptHeuristicIdentifier {
    english: std::collections::HashSet<&'static str>,
}

impl Default for ScriptHeuristicIdentifier {
    fn default() -> Self {
        Self {
            english: ENGLISH_WORDS.iter().copied().collect(),
        }
    }
}

impl LanguageIdentifier for ScriptHeuristicIdentifier {
    fn proportion(&self, text: &str, language: &str) -> f64 {
        let units = language_units(text, language);
        if units.is_empty() {
            return 0.0;
        }
        let belongs = |u: &String| -> bool {
            let script = u.chars().next().map(script_of).unwrap_or(Script::Other);
            match language_script(language) {
                Some(Script::Han) => matches!(script, Script::Han),
                Some(Script::Kana) => matches!(script, Script::Kana | Script::Han),
                Some(s) => script == s,
                None if language == "en" => script == Script::Latin,
                None => script == Script::Latin && !self.english.contains(u.as_str()),
            }
        };
        units.iter().filter(|u| belongs(u)).count() as f64 / units.len() as f64
    }
}

/// English interrogative expressions, matched as whole-word token sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterrogativeLexicon {
    phrases: Vec<Vec<String>>,
}

impl Default for InterrogativeLexicon {
    fn default() -> Self {
        let mut phrases: Vec<String> = ["when", "where", "what", "which", "who", "why", "how"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for w in ["long", "many", "much", "old", "far", "did", "do", "does", "is", "are", "was", "were"] {
            phrases.push(format!("how {w}"));
        }
        for w in ["did", "was", "is"] {
            phrases.push(format!("when {w}"));
        }
        for w in ["is", "was"] {
            phrases.push(format!("what {w}"));
        }
        Self::new(phrases)
    }
}

impl InterrogativeLexicon {
    pub fn new<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            phrases: phrases
                .into_iter()
                .map(|p| word_tokens(p.as_ref()))
                .filter(|p| !p.is_empty())
                .collect(),
        }
    }

    pub fn contains_in(&self, text: &str) -> bool {
        let tokens = word_tokens(text);
        self.phrases
            .iter()
            .any(|p| tokens.windows(p.len()).any(|w| w == p.as_slice()))
    }
}

pub fn detect_code_switching(
    question: &str,
    target_language: &str,
    identifier: &dyn LanguageIdentifier,
    lexicon: &InterrogativeLexicon,
) -> CodeSwitchLabel {
    let share = identifier.proportion(question, target_language);
    if share < TARGET_SHARE_THRESHOLD {
        CodeSwitchLabel::Full
    } else if lexicon.contains_in(question) {
        CodeSwitchLabel::Interrogative
    } else {
        CodeSwitchLabel::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSwitchRow {
    pub model: String,
    pub language: String,
    pub counts: BTreeMap<CodeSwitchLabel, usize>,
    pub total: usize,
    /// Percentage of questions with interrogative code-switching only.
    pub interrogative_pct: f64,
    /// Percentage with any code-switching.
    pub total_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSwitchReport {
    pub rows: Vec<CodeSwitchRow>,
}

/// Labels every record and tallies per (model, language).
pub fn code_switch_report(
    batches: &[(String, Vec<GenerationRecord>)],
    identifier: &dyn LanguageIdentifier,
    lexicon: &InterrogativeLexicon,
) -> Result<CodeSwitchReport> {
    if batches.iter().all(|(_, r)| r.is_empty()) {
        return Err(QuistError::Argument("no generation records to label".into()));
    }
    let mut tallies: BTreeMap<(String, String), BTreeMap<CodeSwitchLabel, usize>> = BTreeMap::new();
    for (model, records) in batches {
        for r in records {
            let label = detect_code_switching(&r.generated_question, &r.language, identifier, lexicon);
            let counts = tallies
                .entry((model.clone(), r.language.clone()))
                .or_insert_with(|| CodeSwitchLabel::ALL.iter().map(|&l| (l, 0)).collect());
            *counts.get_mut(&label).expect("all labels present") += 1;
        }
    }
    let rows = tallies
        .into_iter()
        .map(|((model, language), counts)| row_from_counts(model, language, counts))
        .collect();
    Ok(CodeSwitchReport { rows })
}

pub fn row_from_counts(model: String, language: String, counts: BTreeMap<CodeSwitchLabel, usize>) -> CodeSwitchRow {
    let total: usize = counts.values().sum();
    let get = |l| counts.get(&l).copied().unwrap_or(0) as f64;
    let pct = |x: f64| if total == 0 { 0.0 } else { 100.0 * x / total as f64 };
    CodeSwitchRow {
        interrogative_pct: pct(get(CodeSwitchLabel::Interrogative)),
        total_pct: pct(get(CodeSwitchLabel::Interrogative) + get(CodeSwitchLabel::Full)),
        model,
        language,
        counts,
        total,
    }
}

impl CodeSwitchReport {
    /// One `model,language,label,count` line per cell, for plotting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["model", "language", "label", "count"])?;
        for row in &self.rows {
            for (label, count) in &row.counts {
                w.write_record([row.model.as_str(), row.language.as_str(), label.as_str(), &count.to_string()])?;
            }
        }
        w.flush().map_err(|e| QuistError::io(path, e))
    }

    /// Re-derives percentages from a data file written by [`Self::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut tallies: BTreeMap<(String, String), BTreeMap<CodeSwitchLabel, usize>> = BTreeMap::new();
        for rec in r.records() {
            let rec = rec?;
            let label: CodeSwitchLabel = serde_json::from_value(serde_json::Value::String(rec[2].to_string()))?;
            let count: usize = rec[3]
                .parse()
                .map_err(|_| QuistError::Input(format!("bad count {:?}", &rec[3])))?;
            tallies
                .entry((rec[0].to_string(), rec[1].to_string()))
                .or_default()
                .insert(label, count);
        }
        Ok(Self {
            rows: tallies
                .into_iter()
                .map(|((m, l), c)| row_from_counts(m, l, c))
                .collect(),
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| QuistError::io(path, e))?;
        f.write_all(serde_json::to_string_pretty(self)?.as_bytes())
            .map_err(|e| QuistError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds() {
        let lex = InterrogativeLexicon::default();
        assert_eq!(
            detect_code_switching("When did it rain?", "sw", &ConstantIdentifier(0.0), &lex),
            CodeSwitchLabel::Full
        );
        assert_eq!(
            detect_code_switching("When did it rain?", "sw", &ConstantIdentifier(0.7), &lex),
            CodeSwitchLabel::Interrogative
        );
        assert_eq!(
            detect_code_switching("Mvua ilinyesha lini?", "sw", &ConstantIdentifier(1.0), &lex),
            CodeSwitchLabel::None
        );
    }

    #[test]
    fn lexicon_matches_whole_words_only() {
        let lex = InterrogativeLexicon::default();
        assert!(lex.contains_in("How long ni safari?"));
        assert!(!lex.contains_in("Somewhere whoever"));
    }

    #[test]
    fn heuristic_identifier_by_script_and_english_words() {
        let id = ScriptHeuristicIdentifier::default();
        assert_eq!(id.proportion("कब हुआ", "hi"), 1.0);
        assert_eq!(id.proportion("When was it?", "sw"), 0.0);
        let share = id.proportion("How long ni safari ya basi?", "sw");
        assert!((share - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(id.proportion("北京在哪里", "zh"), 1.0);
    }

    #[test]
    fn report_percentages() {
        let counts: BTreeMap<_, _> = [
            (CodeSwitchLabel::Interrogative, 2),
            (CodeSwitchLabel::Full, 1),
            (CodeSwitchLabel::None, 1),
        ]
        .into_iter()
        .collect();
        let row = row_from_counts("m".into(), "sw".into(), counts);
        assert_eq!((row.interrogative_pct, row.total_pct), (50.0, 75.0));
    }
}
