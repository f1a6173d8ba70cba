//! QA records, corpora, and their on-disk formats.
//!
//! Two formats are supported. `triplet-jsonl` is the canonical interchange
//! format: one JSON object per line carrying exactly the [`QAExample`] fields.
//! SQuAD v1.1 JSON is import-only; paragraphs are flattened and the first
//! answer of each question is kept.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{QuistError, Result};
use crate::language::LanguageTable;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub language: String,
    pub context: String,
    pub question: String,
    pub answer_text: String,
    /// Character offset of the answer in `context`, or -1 when unknown.
    pub answer_start: i64,
}

impl QAExample {
    /// Returns a description of the first violated invariant, if any.
    pub fn check(&self, languages: &LanguageTable) -> Option<String> {
        if self.question.trim().is_empty() {
            return Some("empty question".into());
        }
        if self.context.trim().is_empty() {
            return Some("empty context".into());
        }
        if !languages.contains(&self.language) {
            return Some(format!("unrecognized language {:?}", self.language));
        }
        if self.answer_start >= 0 {
            let start = self.answer_start as usize;
            let len = self.answer_text.chars().count();
            let span: String = self.context.chars().skip(start).take(len).collect();
            if span.chars().count() != len || span != self.answer_text {
                return Some(format!(
                    "answer span at {} is {:?}, expected {:?}",
                    start, span, self.answer_text
                ));
            }
        } else if self.answer_start != -1 {
            return Some(format!("negative answer_start {}", self.answer_start));
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = QuistError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(QuistError::Argument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Squad,
    TripletJsonl,
}

impl FromStr for CorpusFormat {
    type Err = QuistError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squad" => Ok(CorpusFormat::Squad),
            "triplet-jsonl" | "jsonl" => Ok(CorpusFormat::TripletJsonl),
            other => Err(QuistError::Argument(format!("unknown corpus format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub language: String,
    pub split: Split,
    examples: Vec<QAExample>,
}

impl Corpus {
    /// Builds a corpus after checking every record. Offending ids are reported
    /// together rather than one at a time.
    pub fn new(
        name: impl Into<String>,
        language: impl Into<String>,
        split: Split,
        examples: Vec<QAExample>,
        languages: &LanguageTable,
    ) -> Result<Self> {
        let language = language.into();
        let mut bad = Vec::new();
        let mut messages = Vec::new();
        let mut seen = HashSet::new();
        for ex in &examples {
            let problem = ex.check(languages).or_else(|| {
                (ex.language != language)
                    .then(|| format!("language {:?} differs from corpus {:?}", ex.language, language))
            });
            let problem = problem.or_else(|| {
                (!seen.insert(ex.id.as_str())).then(|| "duplicate id".to_string())
            });
            if let Some(p) = problem {
                messages.push(format!("{}: {}", ex.id, p));
                bad.push(ex.id.clone());
            }
        }
        if !bad.is_empty() {
            return Err(QuistError::Validation {
                ids: bad,
                message: messages.join("; "),
            });
        }
        Ok(Self {
            name: name.into(),
            language,
            split,
            examples,
        })
    }

    pub fn examples(&self) -> &[QAExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn into_examples(self) -> Vec<QAExample> {
        self.examples
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&serde_json::to_string(ex).expect("QAExample serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.examples)
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| QuistError::io(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| QuistError::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r)?;
        writeln!(file, "{line}").map_err(|e| QuistError::io(path, e))?;
    }
    Ok(())
}

/// Options that cannot be read from every format. SQuAD files carry no
/// language tag, so the caller supplies it.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub name: Option<String>,
    pub language: Option<String>,
    pub split: Split,
    pub languages: LanguageTable,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            name: None,
            language: None,
            split: Split::Train,
            languages: LanguageTable::default(),
        }
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat, opts: &LoadOptions) -> Result<Corpus> {
    let examples = match format {
        CorpusFormat::TripletJsonl => read_triplets(path)?,
        CorpusFormat::Squad => read_squad(path, opts.language.as_deref().unwrap_or("en"))?,
    };
    let language = opts
        .language
        .clone()
        .or_else(|| examples.first().map(|e| e.language.clone()))
        .unwrap_or_else(|| "en".to_string());
    let name = opts.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    Corpus::new(name, language, opts.split, examples, &opts.languages)
}

fn format_error(path: &Path, location: String, message: impl fmt::Display) -> QuistError {
    QuistError::Format {
        path: PathBuf::from(path),
        location,
        message: message.to_string(),
    }
}

fn read_triplets(path: &Path) -> Result<Vec<QAExample>> {
    let file = fs::File::open(path).map_err(|e| QuistError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| QuistError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: QAExample = serde_json::from_str(&line)
            .map_err(|e| format_error(path, format!("line {}", idx + 1), e))?;
        out.push(ex);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    #[serde(default)]
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    answers: Vec<SquadAnswer>,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: i64,
}

fn read_squad(path: &Path, language: &str) -> Result<Vec<QAExample>> {
    let text = fs::read_to_string(path).map_err(|e| QuistError::io(path, e))?;
    let file: SquadFile = serde_json::from_str(&text).map_err(|e| {
        format_error(path, format!("line {} column {}", e.line(), e.column()), e)
    })?;
    let mut out = Vec::new();
    for (a_idx, article) in file.data.into_iter().enumerate() {
        for paragraph in article.paragraphs {
            for qa in paragraph.qas {
                let Some(answer) = qa.answers.into_iter().next() else {
                    return Err(format_error(
                        path,
                        format!("article {a_idx} ({:?}), question {}", article.title, qa.id),
                        "question has no answers",
                    ));
                };
                out.push(QAExample {
                    id: qa.id,
                    language: language.to_string(),
                    context: paragraph.context.clone(),
                    question: qa.question,
                    answer_text: answer.text,
                    answer_start: answer.answer_start,
                });
            }
        }
    }
    Ok(out)
}

/// Seeded example-level shuffle, then a cut. Returns `(train, validation)`.
pub fn split_corpus(corpus: &Corpus, validation_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(QuistError::Argument(format!(
            "validation fraction must lie in (0, 1), got {validation_fraction}"
        )));
    }
    if corpus.len() < 2 {
        return Err(QuistError::Argument(
            "cannot split a corpus with fewer than 2 examples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut seed::labeled_rng(seed, "split_corpus"));
    let n_val = ((corpus.len() as f64) * validation_fraction)
        .round()
        .clamp(1.0, (corpus.len() - 1) as f64) as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let pick = |idx: &[usize]| -> Vec<QAExample> {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| corpus.examples[i].clone()).collect()
    };
    let train = Corpus {
        name: format!("{}-train", corpus.name),
        language: corpus.language.clone(),
        split: Split::Train,
        examples: pick(train_idx),
    };
    let validation = Corpus {
        name: format!("{}-validation", corpus.name),
        language: corpus.language.clone(),
        split: Split::Validation,
        examples: pick(val_idx),
    };
    Ok((train, validation))
}
