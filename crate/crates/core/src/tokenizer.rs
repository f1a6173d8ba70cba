//! Vocabulary-backed tokenizers.
//!
//! Whitespace mode maps normalized words to ids and is what the reference
//! models consume. Subword mode learns byte-pair merges over characters and is
//! used to score languages written without word boundaries.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{QuistError, Result};

pub type TokenId = u32;

pub const PAD: &str = "<pad>";
pub const CLS: &str = "<cls>";
pub const SEP: &str = "<sep>";
pub const EOS: &str = "</s>";
pub const MASK: &str = "<mask>";
pub const UNK: &str = "<unk>";

/// Literal field tags of the generator input template.
pub const EXEMPLAR_TAG: &str = "exemplar:";
pub const ANSWER_TAG: &str = "answer:";
pub const CONTEXT_TAG: &str = "context:";

const SPECIALS: [&str; 6] = [PAD, CLS, SEP, EOS, MASK, UNK];
const FIELD_TAGS: [&str; 3] = [EXEMPLAR_TAG, ANSWER_TAG, CONTEXT_TAG];

/// Word-boundary marker used by subword pieces.
const WORD_START: char = '\u{2581}';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub pad: TokenId,
    pub classifier_start: TokenId,
    pub separator: TokenId,
    pub end_of_sequence: TokenId,
    pub mask: TokenId,
    pub unknown: TokenId,
}

impl SpecialTokens {
    fn standard() -> Self {
        Self {
            pad: 0,
            classifier_start: 1,
            separator: 2,
            end_of_sequence: 3,
            mask: 4,
            unknown: 5,
        }
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id <= self.unknown
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    Whitespace,
    Subword,
}

fn is_unsegmented_char(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF | 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x0E00..=0x0E7F)
}

/// Normalized word split shared by the tokenizers and the n-gram metrics:
/// lowercase, whitespace split, punctuation marks and ideographs as their own
/// tokens. Field tags stay whole.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let word = raw.to_lowercase();
        if FIELD_TAGS.contains(&word.as_str()) || SPECIALS.contains(&word.as_str()) {
            out.push(word);
            continue;
        }
        let mut current = String::new();
        for c in word.chars() {
            if c.is_alphanumeric() && !is_unsegmented_char(c) || c == '_' {
                current.push(c);
            } else {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(c.to_string());
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    mode: TokenizerMode,
    vocab: Vec<String>,
    #[serde(default)]
    merges: Vec<(String, String)>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
    #[serde(skip)]
    merge_rank: HashMap<(String, String), usize>,
}

impl Tokenizer {
    fn from_parts(mode: TokenizerMode, vocab: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        let merge_rank = merges
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        Self {
            mode,
            vocab,
            merges,
            index,
            merge_rank,
        }
    }

    fn base_vocab() -> Vec<String> {
        SPECIALS.iter().chain(FIELD_TAGS.iter()).map(|s| s.to_string()).collect()
    }

    /// Builds a word vocabulary from `texts`. Words are ordered by descending
    /// frequency, then lexicographically, so the same texts always give the
    /// same ids.
    pub fn whitespace<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for w in word_tokens(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut vocab = Self::base_vocab();
        let mut words: Vec<_> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count.max(1) && !vocab.contains(w))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        vocab.extend(words.into_iter().map(|(w, _)| w));
        Self::from_parts(TokenizerMode::Whitespace, vocab, Vec::new())
    }

    /// Learns byte-pair merges over characters until the vocabulary reaches
    /// `vocab_size` or no pair occurs twice.
    pub fn train_subword<'a>(texts: impl IntoIterator<Item = &'a str>, vocab_size: usize) -> Self {
        let mut word_counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for t in texts {
            for w in word_tokens(t) {
                *word_counts.entry(split_chars(&w)).or_default() += 1;
            }
        }
        let mut vocab = Self::base_vocab();
        let mut alphabet: Vec<String> = word_counts
            .keys()
            .flatten()
            .cloned()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        alphabet.retain(|s| !vocab.contains(s));
        vocab.extend(alphabet);

        let mut words: Vec<(Vec<String>, usize)> = word_counts.into_iter().collect();
        let mut merges = Vec::new();
        while vocab.len() < vocab_size {
            let mut pair_counts: BTreeMap<(String, String), usize> = BTreeMap::new();
            for (syms, count) in &words {
                for pair in syms.windows(2) {
                    *pair_counts.entry((pair[0].clone(), pair[1].clone())).or_default() += count;
                }
            }
            // Highest count wins; BTreeMap order breaks ties lexicographically.
            let Some((best, count)) = pair_counts
                .into_iter()
                .fold(None, |acc: Option<((String, String), usize)>, (p, c)| match acc {
                    Some((_, bc)) if bc >= c => acc,
                    _ => Some((p, c)),
                })
            else {
                break;
            };
            if count < 2 {
                break;
            }
            let merged = format!("{}{}", best.0, best.1);
            for (syms, _) in &mut words {
                *syms = apply_merge(syms, &best, &merged);
            }
            if !vocab.contains(&merged) {
                vocab.push(merged);
            }
            merges.push(best);
        }
        Self::from_parts(TokenizerMode::Subword, vocab, merges)
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn special(&self) -> SpecialTokens {
        SpecialTokens::standard()
    }

    pub fn token_id(&self, piece: &str) -> Option<TokenId> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: TokenId) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    /// String pieces before vocabulary lookup. Out-of-vocabulary words are
    /// kept verbatim, which is what the n-gram metrics need.
    pub fn pieces(&self, text: &str) -> Vec<String> {
        match self.mode {
            TokenizerMode::Whitespace => word_tokens(text),
            TokenizerMode::Subword => word_tokens(text)
                .into_iter()
                .flat_map(|w| {
                    if FIELD_TAGS.contains(&w.as_str()) || SPECIALS.contains(&w.as_str()) {
                        vec![w]
                    } else {
                        self.bpe(&w)
                    }
                })
                .collect(),
        }
    }

    fn bpe(&self, word: &str) -> Vec<String> {
        let mut syms = split_chars(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|p| {
                    self.merge_rank
                        .get(&(p[0].clone(), p[1].clone()))
                        .map(|r| (*r, (p[0].clone(), p[1].clone())))
                })
                .min_by_key(|(r, _)| *r);
            let Some((_, pair)) = best else { break };
            let merged = format!("{}{}", pair.0, pair.1);
            syms = apply_merge(&syms, &pair, &merged);
        }
        syms
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let unk = self.special().unknown;
        self.pieces(text)
            .iter()
            .map(|p| self.token_id(p).unwrap_or(unk))
            .collect()
    }

    /// Renders ids back to text, stopping at end-of-sequence and skipping
    /// padding and separators.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let sp = self.special();
        let pieces = ids
            .iter()
            .take_while(|&&id| id != sp.end_of_sequence)
            .filter(|&&id| id != sp.pad && id != sp.classifier_start && id != sp.separator)
            .filter_map(|&id| self.piece(id));
        match self.mode {
            TokenizerMode::Whitespace => pieces.collect::<Vec<_>>().join(" "),
            TokenizerMode::Subword => {
                let mut out = String::new();
                for p in pieces {
                    if let Some(rest) = p.strip_prefix(WORD_START) {
                        if !out.is_empty() {
                            out.push(' ');
                        }
                        out.push_str(rest);
                    } else {
                        if (SPECIALS.contains(&p) || FIELD_TAGS.contains(&p))
                            && !out.is_empty() {
                                out.push(' ');
                            }
                        out.push_str(p);
                    }
                }
                out
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| QuistError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| QuistError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Tokenizer = serde_json::from_str(text)?;
        Ok(Self::from_parts(raw.mode, raw.vocab, raw.merges))
    }
}

fn split_chars(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| {
            if i == 0 {
                format!("{WORD_START}{c}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn apply_merge(syms: &[String], pair: &(String, String), merged: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == pair.0 && syms[i + 1] == pair.1 {
            out.push(merged.to_string());
            i += 2;
        } else {
            out.push(syms[i].clone());
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn word_split_isolates_punctuation() {
        assert_eq!(word_tokens("Where is Paris?"), vec!["where", "is", "paris", "?"]);
        assert_eq!(word_tokens("answer: The Cat."), vec!["answer:", "the", "cat", "."]);
        assert_eq!(word_tokens("北京大学"), vec!["北", "京", "大", "学"]);
    }

    #[test]
    fn special_ids_are_distinct() {
        let sp = SpecialTokens::standard();
        let ids = [sp.pad, sp.classifier_start, sp.separator, sp.end_of_sequence, sp.mask, sp.unknown];
        let set: std::collections::HashSet<_> = ids.iter().collect();
        assert_eq!(set.len(), ids.len());
        let tok = Tokenizer::whitespace(["a"], 1);
        for (id, name) in ids.iter().zip(SPECIALS) {
            assert_eq!(tok.token_id(name), Some(*id));
        }
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let tok = Tokenizer::whitespace(["paris is in france"], 1);
        let ids = tok.encode("paris is in spain");
        assert_eq!(*ids.last().unwrap(), tok.special().unknown);
    }

    #[test]
    fn subword_round_trip_and_merges() {
        let corpus = ["lower lowest newer newest wider widest"; 4];
        let tok = Tokenizer::train_subword(corpus.iter().copied(), 60);
        let pieces = tok.pieces("lowest");
        assert!(pieces.len() < "lowest".len(), "{pieces:?}");
        let ids = tok.encode("newest lower");
        assert_eq!(tok.decode(&ids), "newest lower");
    }

    #[test]
    fn json_round_trip() {
        let tok = Tokenizer::train_subword(["abab abab cdcd"], 30);
        let back = Tokenizer::from_json(&serde_json::to_string(&tok).unwrap()).unwrap();
        assert_eq!(back, tok);
        assert_eq!(back.pieces("abab"), tok.pieces("abab"));
    }

    proptest! {
        #[test]
        fn whitespace_round_trip_in_vocabulary(words in prop::collection::vec("[a-z]{1,6}", 1..12)) {
            let text = words.join(" ");
            let tok = Tokenizer::whitespace([text.as_str()], 1);
            prop_assert_eq!(tok.decode(&tok.encode(&text)), text);
        }
    }
}
