//! The eight-way wh-question taxonomy and the lexical rules that assign it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QAExample};
use crate::error::{QuistError, Result};

/// Declaration order is the tie-breaking order used by the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuestionType {
    When,
    Where,
    What,
    Which,
    Who,
    Why,
    #[serde(rename = "How_way")]
    HowWay,
    #[serde(rename = "How_number")]
    HowNumber,
}

impl QuestionType {
    pub const ALL: [QuestionType; 8] = [
        QuestionType::When,
        QuestionType::Where,
        QuestionType::What,
        QuestionType::Which,
        QuestionType::Who,
        QuestionType::Why,
        QuestionType::HowWay,
        QuestionType::HowNumber,
    ];

    pub const COUNT: usize = 8;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::When => "When",
            QuestionType::Where => "Where",
            QuestionType::What => "What",
            QuestionType::Which => "Which",
            QuestionType::Who => "Who",
            QuestionType::Why => "Why",
            QuestionType::HowWay => "How_way",
            QuestionType::HowNumber => "How_number",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuestionType {
    type Err = QuistError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| QuistError::Argument(format!("unknown question type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypedQuestion {
    pub question: String,
    pub qtype: QuestionType,
}

const AUXILIARIES: &[&str] = &[
    "do", "does", "did", "is", "are", "was", "were", "can", "could", "will", "would", "shall",
    "should", "may", "might", "must", "has", "have", "had",
];

const ADJECTIVE_ADVERB_HINTS: &[&str] = &[
    "many", "much", "long", "old", "far", "big", "large", "small", "tall", "high", "low", "deep",
    "wide", "heavy", "often", "few", "fast", "early", "late", "soon", "hot", "cold", "close",
    "young", "great", "little", "short", "expensive", "important", "popular",
];

/// Word lists driving the "how" disambiguation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxiliaryLexicon {
    auxiliaries: BTreeSet<String>,
    adjective_adverb_hint: BTreeSet<String>,
}

impl Default for AuxiliaryLexicon {
    fn default() -> Self {
        Self::new(
            AUXILIARIES.iter().map(|s| s.to_string()),
            ADJECTIVE_ADVERB_HINTS.iter().map(|s| s.to_string()),
        )
        .expect("built-in lexicon is valid")
    }
}

impl AuxiliaryLexicon {
    pub fn new(
        auxiliaries: impl IntoIterator<Item = String>,
        hints: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let auxiliaries: BTreeSet<String> = auxiliaries.into_iter().map(|w| w.to_lowercase()).collect();
        let adjective_adverb_hint: BTreeSet<String> = hints.into_iter().map(|w| w.to_lowercase()).collect();
        if auxiliaries.is_empty() || adjective_adverb_hint.is_empty() {
            return Err(QuistError::Argument("lexicon word lists must be non-empty".into()));
        }
        if let Some(w) = auxiliaries.intersection(&adjective_adverb_hint).next() {
            return Err(QuistError::Argument(format!(
                "{w:?} appears in both auxiliary and adjective/adverb lists"
            )));
        }
        Ok(Self {
            auxiliaries,
            adjective_adverb_hint,
        })
    }

    /// Loads two word-per-line files. Blank lines and `#` comments are skipped.
    pub fn from_files(auxiliaries: &Path, hints: &Path) -> Result<Self> {
        let read = |p: &Path| -> Result<Vec<String>> {
            let text = fs::read_to_string(p).map_err(|e| QuistError::io(p, e))?;
            Ok(text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect())
        };
        Self::new(read(auxiliaries)?, read(hints)?)
    }

    pub fn is_auxiliary(&self, word: &str) -> bool {
        self.auxiliaries.contains(word)
    }

    pub fn is_adjective_or_adverb(&self, word: &str) -> bool {
        word.len() > 2 && word.ends_with("ly") || self.adjective_adverb_hint.contains(word)
    }
}

/// Lowercased tokens with punctuation trimmed from both ends. Contractions
/// keep the part before the apostrophe ("who's" -> "who").
fn lead_tokens(question: &str, n: usize) -> Vec<String> {
    question
        .split_whitespace()
        .filter_map(|raw| {
            let t = raw
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            let t = match t.find(['\'', '\u{2019}']) {
                Some(i) => t[..i].to_string(),
                None => t,
            };
            (!t.is_empty()).then_some(t)
        })
        .take(n)
        .collect()
}

/// Types an English question by its leading interrogative word. Returns `None`
/// for questions outside the taxonomy (yes/no questions, imperatives, ...).
pub fn classify_rule(question: &str, lexicon: &AuxiliaryLexicon) -> Option<QuestionType> {
    let tokens = lead_tokens(question, 2);
    let first = tokens.first()?;
    Some(match first.as_str() {
        "when" => QuestionType::When,
        "where" => QuestionType::Where,
        "what" => QuestionType::What,
        "which" => QuestionType::Which,
        "who" | "whom" | "whose" => QuestionType::Who,
        "why" => QuestionType::Why,
        "how" => match tokens.get(1) {
            Some(next) if lexicon.is_auxiliary(next) => QuestionType::HowWay,
            Some(next) if lexicon.is_adjective_or_adverb(next) => QuestionType::HowNumber,
            _ => QuestionType::HowWay,
        },
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Hard,
    Relaxed,
}

impl FromStr for MatchMode {
    type Err = QuistError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(MatchMode::Hard),
            "relaxed" => Ok(MatchMode::Relaxed),
            other => Err(QuistError::Argument(format!("unknown match mode {other:?}"))),
        }
    }
}

/// Relaxed matching also accepts What and Which predictions for any gold
/// label, since most questions can be rephrased into those forms.
pub fn match_labels(predicted: QuestionType, gold: QuestionType, mode: MatchMode) -> bool {
    predicted == gold
        || (mode == MatchMode::Relaxed
            && matches!(predicted, QuestionType::What | QuestionType::Which))
}

pub type TypeHistogram = BTreeMap<QuestionType, usize>;

pub fn empty_histogram() -> TypeHistogram {
    QuestionType::ALL.into_iter().map(|t| (t, 0)).collect()
}

#[derive(Debug, Clone)]
pub struct Annotation {
    pub typed: Vec<(QAExample, QuestionType)>,
    pub histogram: TypeHistogram,
    pub dropped: usize,
}

pub fn annotate_corpus(corpus: &Corpus, lexicon: &AuxiliaryLexicon) -> Result<Annotation> {
    if corpus.language != "en" {
        return Err(QuistError::Usage(format!(
            "rule annotation applies to English corpora only, got {:?}; \
             type target-language questions through translation instead",
            corpus.language
        )));
    }
    let mut histogram = empty_histogram();
    let mut typed = Vec::with_capacity(corpus.len());
    for ex in corpus.examples() {
        if let Some(t) = classify_rule(&ex.question, lexicon) {
            *histogram.entry(t).or_default() += 1;
            typed.push((ex.clone(), t));
        }
    }
    let dropped = corpus.len() - typed.len();
    Ok(Annotation {
        typed,
        histogram,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rule(q: &str) -> Option<QuestionType> {
        classify_rule(q, &AuxiliaryLexicon::default())
    }

    #[test]
    fn how_disambiguation() {
        assert_eq!(rule("How did she escape?"), Some(QuestionType::HowWay));
        assert_eq!(rule("How many states are there?"), Some(QuestionType::HowNumber));
        assert_eq!(rule("How quickly did it spread?"), Some(QuestionType::HowNumber));
        assert_eq!(rule("How people lived then"), Some(QuestionType::HowWay));
        assert_eq!(rule("How?"), Some(QuestionType::HowWay));
    }

    #[test]
    fn leading_word_match() {
        assert_eq!(rule("Who wrote Hamlet?"), Some(QuestionType::Who));
        assert_eq!(rule("\"Whom did they elect?\""), Some(QuestionType::Who));
        assert_eq!(rule("Whose book is it?"), Some(QuestionType::Who));
        assert_eq!(rule("who's there"), Some(QuestionType::Who));
        assert_eq!(rule("¿When was it built?"), Some(QuestionType::When));
        assert_eq!(rule("Name the capital of France."), None);
        assert_eq!(rule("Is Paris in France?"), None);
        assert_eq!(rule("Whatever happened?"), None);
    }

    #[test]
    fn relaxed_labels() {
        use QuestionType::*;
        assert!(match_labels(What, When, MatchMode::Relaxed));
        assert!(!match_labels(Who, When, MatchMode::Relaxed));
        assert!(match_labels(When, When, MatchMode::Hard));
        assert!(!match_labels(What, When, MatchMode::Hard));
    }

    #[test]
    fn lexicon_sets_must_be_disjoint() {
        let err = AuxiliaryLexicon::new(vec!["did".into()], vec!["did".into()]);
        assert!(err.is_err());
        assert!(AuxiliaryLexicon::new(vec![], vec!["many".into()]).is_err());
    }

    #[test]
    fn non_english_corpus_is_refused() {
        use crate::corpus::Split;
        use crate::language::LanguageTable;
        let corpus = Corpus::new("sw", "sw", Split::Train, vec![], &LanguageTable::default()).unwrap();
        assert!(matches!(
            annotate_corpus(&corpus, &AuxiliaryLexicon::default()),
            Err(QuistError::Usage(_))
        ));
    }

    proptest! {
        #[test]
        fn trailing_noise_after_two_tokens_is_ignored(
            lead in prop::sample::select(vec!["When did", "How many", "How did", "Which one", "Name the", "Is it"]),
            tail in "[a-z ,.!?;]{0,20}",
        ) {
            let lex = AuxiliaryLexicon::default();
            prop_assert_eq!(classify_rule(lead, &lex), classify_rule(&format!("{lead} {tail}"), &lex));
        }

        #[test]
        fn hard_implies_relaxed(p in 0usize..8, g in 0usize..8) {
            let p = QuestionType::from_index(p).unwrap();
            let g = QuestionType::from_index(g).unwrap();
            prop_assert!(match_labels(g, g, MatchMode::Hard));
            if match_labels(p, g, MatchMode::Hard) {
                prop_assert!(match_labels(p, g, MatchMode::Relaxed));
            }
        }
    }
}
