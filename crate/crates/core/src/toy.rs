//! A bundled bilingual toy world for end-to-end runs on a CPU.
//!
//! The source language uses English interrogatives and auxiliaries, so the
//! rule annotator types its questions directly. The target language (`qx`) has
//! its own interrogative words, auxiliary and content vocabulary, and puts
//! the interrogative first. Proper nouns, years and numbers are shared.
//!
//! Every question in either language follows a fixed template, so a grammar
//! checker can decide whether a generated question is well formed.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::backend::TransformerConfig;
use crate::corpus::{write_jsonl, QAExample};
use crate::error::{QuistError, Result};
use crate::evaluation::WordTableIdentifier;
use crate::exemplar::{DictionaryTranslator, Translator};
use crate::language::TOY_TARGET;
use crate::question_typing::QuestionType;
use crate::seed;
use crate::tokenizer::Tokenizer;

const NAMES: &[&str] = &[
    "mako", "tiri", "bolu", "sena", "raku", "felo", "dima", "nuka", "lesa", "pombi", "garu", "yeta",
];
const PLACES: &[&str] = &["kisumu", "arusha", "lamu", "moshi", "tanga", "kilwa", "pemba", "mwanza"];
const YEARS: &[&str] = &["1901", "1915", "1932", "1948", "1956", "1967", "1979", "1984", "1993", "2005"];
const COUNTS: &[&str] = &["2", "3", "4", "5", "6", "7", "8", "9", "11", "12"];

/// (source word, target word) pairs.
const VERBS: &[(&str, &str)] = &[
    ("build", "jenga"),
    ("find", "pata"),
    ("sell", "uza"),
    ("paint", "paka"),
    ("visit", "tembelea"),
    ("open", "fungua"),
    ("clean", "safisha"),
    ("carry", "beba"),
];
const OBJECTS: &[(&str, &str)] = &[
    ("bridge", "daraja"),
    ("house", "nyumba"),
    ("boat", "mashua"),
    ("market", "soko"),
    ("school", "shule"),
    ("garden", "bustani"),
    ("tower", "mnara"),
    ("road", "barabara"),
];
const REASONS: &[(&str, &str)] = &[
    ("rain", "mvua"),
    ("war", "vita"),
    ("trade", "biashara"),
    ("hunger", "njaa"),
    ("money", "pesa"),
    ("school", "elimu"),
];
const MANNERS: &[(&str, &str)] = &[
    ("hands", "mikono"),
    ("tools", "zana"),
    ("rope", "kamba"),
    ("fire", "moto"),
    ("water", "maji"),
];
const KINDS: &[(&str, &str)] = &[("tall", "ndefu"), ("old", "zamani"), ("red", "nyekundu"), ("new", "mpya")];

pub const TARGET_AUX: &str = "ali";

/// Interrogative word(s) opening a question of each type.
pub fn source_interrogative(t: QuestionType) -> &'static str {
    match t {
        QuestionType::When => "when",
        QuestionType::Where => "where",
        QuestionType::What => "what",
        QuestionType::Which => "which",
        QuestionType::Who => "who",
        QuestionType::Why => "why",
        QuestionType::HowWay => "how",
        QuestionType::HowNumber => "how many",
    }
}

pub fn target_interrogative(t: QuestionType) -> &'static str {
    match t {
        QuestionType::When => "lini",
        QuestionType::Where => "wapi",
        QuestionType::What => "nini",
        QuestionType::Which => "gani",
        QuestionType::Who => "nani",
        QuestionType::Why => "kwanini",
        QuestionType::HowWay => "vipi",
        QuestionType::HowNumber => "ngapi",
    }
}

pub fn target_interrogatives() -> Vec<&'static str> {
    QuestionType::ALL.iter().map(|&t| target_interrogative(t)).collect()
}

/// One fact of the toy world. Questions and contexts in both languages are
/// rendered from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fact {
    pub name: &'static str,
    pub verb: usize,
    pub object: usize,
    pub kind: usize,
    pub year: &'static str,
    pub place: &'static str,
    pub reason: usize,
    pub manner: usize,
    pub count: &'static str,
}

impl Fact {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            name: NAMES.choose(rng).unwrap(),
            verb: rng.gen_range(0..VERBS.len()),
            object: rng.gen_range(0..OBJECTS.len()),
            kind: rng.gen_range(0..KINDS.len()),
            year: YEARS.choose(rng).unwrap(),
            place: PLACES.choose(rng).unwrap(),
            reason: rng.gen_range(0..REASONS.len()),
            manner: rng.gen_range(0..MANNERS.len()),
            count: COUNTS.choose(rng).unwrap(),
        }
    }

    pub fn context(&self, target: bool) -> String {
        let pick = |pairs: &[(&'static str, &'static str)], i: usize| if target { pairs[i].1 } else { pairs[i].0 };
        let (verb, object, kind) = (pick(VERBS, self.verb), pick(OBJECTS, self.object), pick(KINDS, self.kind));
        let (reason, manner) = (pick(REASONS, self.reason), pick(MANNERS, self.manner));
        if target {
            format!(
                "{} ali {verb} {object} {kind} mwaka {} huko {} kwa sababu ya {reason} kwa {manner} na marafiki {} .",
                self.name, self.year, self.place, self.count
            )
        } else {
            format!(
                "{} did {verb} the {kind} {object} in {} at {} because of {reason} with {manner} and {} friends .",
                self.name, self.year, self.place, self.count
            )
        }
    }

    pub fn answer(&self, t: QuestionType, target: bool) -> String {
        let pick = |pairs: &[(&'static str, &'static str)], i: usize| if target { pairs[i].1 } else { pairs[i].0 };
        match t {
            QuestionType::When => self.year.to_string(),
            QuestionType::Where => self.place.to_string(),
            QuestionType::What => pick(OBJECTS, self.object).to_string(),
            QuestionType::Which => pick(KINDS, self.kind).to_string(),
            QuestionType::Who => self.name.to_string(),
            QuestionType::Why => pick(REASONS, self.reason).to_string(),
            QuestionType::HowWay => pick(MANNERS, self.manner).to_string(),
            QuestionType::HowNumber => self.count.to_string(),
        }
    }

    pub fn question(&self, t: QuestionType, target: bool) -> String {
        if target {
            let verb = VERBS[self.verb].1;
            let object = OBJECTS[self.object].1;
            let wh = target_interrogative(t);
            match t {
                QuestionType::Who => format!("{wh} ali {verb} {object} ?"),
                QuestionType::What => format!("{wh} {} ali {verb} ?", self.name),
                QuestionType::Which => format!("{wh} {object} {} ali {verb} ?", self.name),
                _ => format!("{wh} {} ali {verb} {object} ?", self.name),
            }
        } else {
            let verb = VERBS[self.verb].0;
            let object = OBJECTS[self.object].0;
            let wh = source_interrogative(t);
            match t {
                QuestionType::Who => format!("{wh} did {verb} the {object} ?"),
                QuestionType::What => format!("{wh} did {} {verb} ?", self.name),
                QuestionType::Which => format!("{wh} {object} did {} {verb} ?", self.name),
                QuestionType::HowNumber => format!("{wh} friends did {} {verb} the {object} with ?", self.name),
                _ => format!("{wh} did {} {verb} the {object} ?", self.name),
            }
        }
    }

    pub fn example(&self, id: String, t: QuestionType, target: bool) -> QAExample {
        let context = self.context(target);
        let answer = self.answer(t, target);
        let start = find_token(&context, &answer).expect("answer is rendered into the context");
        QAExample {
            id,
            language: if target { TOY_TARGET } else { "en" }.to_string(),
            context,
            question: self.question(t, target),
            answer_text: answer,
            answer_start: start as i64,
        }
    }
}

/// Character offset of `token` as a whole word in `text`.
fn find_token(text: &str, token: &str) -> Option<usize> {
    let mut offset = 0;
    for word in text.split(' ') {
        if word == token {
            return Some(text[..offset].chars().count());
        }
        offset += word.len() + 1;
    }
    None
}

/// A generated toy dataset: QA examples in both languages.
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub source: Vec<QAExample>,
    pub target: Vec<QAExample>,
}

/// `n_source` English-side and `n_target` target-side examples with types
/// drawn uniformly.
pub fn generate(n_source: usize, n_target: usize, seed_value: u64) -> ToyCorpus {
    let mut rng = seed::labeled_rng(seed_value, "toy_corpus");
    let make = |n: usize, target: bool, prefix: &str, rng: &mut ChaCha8Rng| -> Vec<QAExample> {
        (0..n)
            .map(|i| {
                let fact = Fact::random(rng);
                let t = QuestionType::ALL[rng.gen_range(0..QuestionType::COUNT)];
                fact.example(format!("{prefix}-{i:05}"), t, target)
            })
            .collect()
    };
    let source = make(n_source, false, "toy-en", &mut rng);
    let target = make(n_target, true, "toy-qx", &mut rng);
    ToyCorpus { source, target }
}

/// Like [`generate`] but with exactly `per_type` examples of every type per
/// language.
pub fn generate_balanced(per_type: usize, target: bool, seed_value: u64) -> Vec<QAExample> {
    let mut rng = seed::labeled_rng(seed_value, if target { "toy_balanced_qx" } else { "toy_balanced_en" });
    let prefix = if target { "toy-qx-b" } else { "toy-en-b" };
    let mut out = Vec::with_capacity(per_type * QuestionType::COUNT);
    for t in QuestionType::ALL {
        for i in 0..per_type {
            let fact = Fact::random(&mut rng);
            out.push(fact.example(format!("{prefix}-{}-{i:04}", t.as_str()), t, target));
        }
    }
    out
}

/// Word-by-word dictionary from the target toy language to English.
#[derive(Debug, Clone)]
pub struct ToyTranslator {
    table: HashMap<&'static str, &'static str>,
}

impl Default for ToyTranslator {
    fn default() -> Self {
        let mut table: HashMap<&'static str, &'static str> = HashMap::new();
        for t in QuestionType::ALL {
            table.insert(target_interrogative(t), source_interrogative(t));
        }
        table.insert(TARGET_AUX, "did");
        for pairs in [VERBS, OBJECTS, REASONS, MANNERS, KINDS] {
            for (en, tg) in pairs {
                table.insert(tg, en);
            }
        }
        Self { table }
    }
}

impl Translator for ToyTranslator {
    fn translate(&self, text: &str, source_language: &str, target_language: &str) -> Result<String> {
        if source_language == target_language {
            return Ok(text.to_string());
        }
        Ok(text
            .split_whitespace()
            .map(|w| self.table.get(w).copied().unwrap_or(w))
            .collect::<Vec<_>>()
            .join(" "))
    }
}

/// Whether `question` is a well-formed toy question in `language`, and if so
/// its type.
pub fn parse_question(question: &str, language: &str) -> Option<QuestionType> {
    let target = language == TOY_TARGET;
    let tokens: Vec<&str> = question.split_whitespace().collect();
    let is_name = |w: &str| NAMES.contains(&w);
    let is_verb = |w: &str| VERBS.iter().any(|p| (if target { p.1 } else { p.0 }) == w);
    let is_object = |w: &str| OBJECTS.iter().any(|p| (if target { p.1 } else { p.0 }) == w);
    if target {
        let t = QuestionType::ALL
            .into_iter()
            .find(|&t| tokens.first() == Some(&target_interrogative(t)))?;
        let ok = match (t, tokens.as_slice()) {
            (QuestionType::Who, [_, aux, v, o, "?"]) => *aux == TARGET_AUX && is_verb(v) && is_object(o),
            (QuestionType::What, [_, n, aux, v, "?"]) => is_name(n) && *aux == TARGET_AUX && is_verb(v),
            (QuestionType::Which, [_, o, n, aux, v, "?"]) => {
                is_object(o) && is_name(n) && *aux == TARGET_AUX && is_verb(v)
            }
            (QuestionType::Who | QuestionType::What | QuestionType::Which, _) => false,
            (_, [_, n, aux, v, o, "?"]) => is_name(n) && *aux == TARGET_AUX && is_verb(v) && is_object(o),
            _ => false,
        };
        ok.then_some(t)
    } else {
        let (t, rest) = if tokens.len() >= 2 && tokens[0] == "how" && tokens[1] == "many" {
            (QuestionType::HowNumber, &tokens[2..])
        } else {
            let t = QuestionType::ALL
                .into_iter()
                .filter(|&t| t != QuestionType::HowNumber)
                .find(|&t| tokens.first() == Some(&source_interrogative(t)))?;
            (t, &tokens[1..])
        };
        let ok = match (t, rest) {
            (QuestionType::Who, ["did", v, "the", o, "?"]) => is_verb(v) && is_object(o),
            (QuestionType::What, ["did", n, v, "?"]) => is_name(n) && is_verb(v),
            (QuestionType::Which, [o, "did", n, v, "?"]) => is_object(o) && is_name(n) && is_verb(v),
            (QuestionType::HowNumber, ["friends", "did", n, v, "the", o, "with", "?"]) => {
                is_name(n) && is_verb(v) && is_object(o)
            }
            (QuestionType::Who | QuestionType::What | QuestionType::Which | QuestionType::HowNumber, _) => false,
            (_, ["did", n, v, "the", o, "?"]) => is_name(n) && is_verb(v) && is_object(o),
            _ => false,
        };
        ok.then_some(t)
    }
}

/// Monolingual text in both languages, standing in for the multilingual
/// pretraining data of a real backbone.
pub fn pretraining_texts(n_facts: usize, seed_value: u64) -> Vec<String> {
    let mut rng = seed::labeled_rng(seed_value, "toy_pretraining");
    let mut out = Vec::with_capacity(n_facts * 4);
    for _ in 0..n_facts {
        let fact = Fact::random(&mut rng);
        for target in [false, true] {
            out.push(fact.context(target));
            let t = QuestionType::ALL[rng.gen_range(0..QuestionType::COUNT)];
            out.push(fact.question(t, target));
        }
    }
    out
}

/// Word-table identifier for the target toy language. Proper nouns and
/// numbers are shared and count toward the target.
pub fn identifier() -> WordTableIdentifier {
    let mut words: Vec<&str> = target_interrogatives();
    words.push(TARGET_AUX);
    words.extend(["mwaka", "huko", "kwa", "sababu", "ya", "na", "marafiki"]);
    for pairs in [VERBS, OBJECTS, REASONS, MANNERS, KINDS] {
        words.extend(pairs.iter().map(|p| p.1));
    }
    words.extend(NAMES.iter().chain(PLACES).chain(YEARS).chain(COUNTS));
    WordTableIdentifier::new().with_words(TOY_TARGET, words)
}

/// Model size used for toy runs.
pub fn model_config(seed_value: u64) -> TransformerConfig {
    TransformerConfig {
        d_model: 64,
        n_heads: 4,
        n_layers: 2,
        d_ff: 256,
        max_source_len: 160,
        max_target_len: 16,
        seed: seed_value,
        ..TransformerConfig::default()
    }
}

/// Everything a toy run needs, split by role.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub source_train: Vec<QAExample>,
    pub source_validation: Vec<QAExample>,
    /// Target-side examples whose questions feed the exemplar bank.
    pub target_pool: Vec<QAExample>,
    pub target_test: Vec<QAExample>,
    pub pretraining: Vec<String>,
}

impl ToyWorld {
    pub fn new(seed_value: u64) -> Self {
        let corpus = generate(660, 100, seed_value);
        let mut source = corpus.source;
        let source_validation = source.split_off(600);
        Self {
            source_train: source,
            source_validation,
            target_pool: generate_balanced(25, true, seed_value),
            target_test: corpus.target,
            pretraining: pretraining_texts(600, seed::derive_seed(seed_value, "pretraining")),
        }
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.pretraining.iter().map(String::as_str).chain(
            self.source_train
                .iter()
                .chain(&self.source_validation)
                .chain(&self.target_pool)
                .chain(&self.target_test)
                .flat_map(|e| [e.context.as_str(), e.question.as_str()]),
        )
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::whitespace(self.texts(), 1)
    }

    pub fn target_questions(&self) -> Vec<String> {
        self.target_pool.iter().map(|e| e.question.clone()).collect()
    }

    /// Exact-string translations of the pool questions.
    pub fn translation_table(&self) -> DictionaryTranslator {
        let tr = ToyTranslator::default();
        DictionaryTranslator::new(self.target_pool.iter().map(|e| {
            let english = tr.translate(&e.question, TOY_TARGET, "en").expect("dictionary translation is total");
            (e.question.clone(), english)
        }))
    }

    /// Writes the bundled fixture files into `dir`.
    pub fn write_fixtures(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| QuistError::io(dir, e))?;
        write_jsonl(&dir.join("en_train.jsonl"), &self.source_train)?;
        write_jsonl(&dir.join("en_validation.jsonl"), &self.source_validation)?;
        write_jsonl(&dir.join("qx_pool.jsonl"), &self.target_pool)?;
        write_jsonl(&dir.join("qx_test.jsonl"), &self.target_test)?;
        let text = self.pretraining.join("\n") + "\n";
        let p = dir.join("pretrain.txt");
        std::fs::write(&p, text).map_err(|e| QuistError::io(&p, e))?;
        let p = dir.join("qx_translations.json");
        std::fs::write(&p, serde_json::to_string_pretty(&self.translation_table().table)?)
            .map_err(|e| QuistError::io(&p, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exemplar::Translator;
    use crate::language::LanguageTable;
    use crate::question_typing::{classify_rule, AuxiliaryLexicon};

    #[test]
    fn generated_examples_are_valid_and_parse() {
        let corpus = generate(80, 80, 1);
        let table = LanguageTable::default();
        for ex in corpus.source.iter().chain(&corpus.target) {
            assert!(ex.check(&table).is_none(), "{ex:?}");
            assert!(parse_question(&ex.question, &ex.language).is_some(), "{}", ex.question);
        }
    }

    #[test]
    fn source_questions_type_by_rule() {
        let lex = AuxiliaryLexicon::default();
        for ex in generate_balanced(3, false, 0) {
            let t = parse_question(&ex.question, "en").unwrap();
            assert_eq!(classify_rule(&ex.question, &lex), Some(t), "{}", ex.question);
        }
    }

    #[test]
    fn translated_target_questions_type_by_rule() {
        let lex = AuxiliaryLexicon::default();
        let tr = ToyTranslator::default();
        for ex in generate_balanced(3, true, 0) {
            let t = parse_question(&ex.question, TOY_TARGET).unwrap();
            let english = tr.translate(&ex.question, TOY_TARGET, "en").unwrap();
            assert_eq!(classify_rule(&english, &lex), Some(t), "{} -> {english}", ex.question);
        }
    }

    #[test]
    fn grammar_rejects_mixed_language() {
        assert!(parse_question("when did mako build the bridge ?", "en").is_some());
        assert!(parse_question("when mako ali jenga daraja ?", TOY_TARGET).is_none());
        assert!(parse_question("lini mako ali jenga daraja ?", TOY_TARGET).is_some());
        assert!(parse_question("lini mako ali jenga", TOY_TARGET).is_none());
    }
}
