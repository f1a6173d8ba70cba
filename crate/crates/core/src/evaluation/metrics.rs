//! N-gram overlap metrics: BLEU-4, METEOR, ROUGE-L and subword ROUGE-L.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::error::{QuistError, Result};
use crate::tokenizer::{word_tokens, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Bleu4,
    Meteor,
    RougeL,
    SpRouge,
}

impl MetricName {
    pub const ALL: [MetricName; 4] = [MetricName::Bleu4, MetricName::Meteor, MetricName::RougeL, MetricName::SpRouge];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Bleu4 => "bleu4",
            MetricName::Meteor => "meteor",
            MetricName::RougeL => "rouge_l",
            MetricName::SpRouge => "sp_rouge",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = QuistError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| QuistError::Argument(format!("unknown metric {s:?}")))
    }
}

/// Tokens the word-level metrics compare: normalized words without
/// punctuation-only tokens.
pub fn metric_tokens(text: &str) -> Vec<String> {
    word_tokens(text)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect()
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { above.max(row[j]) };
            diag = above;
        }
    }
    row[b.len()]
}

/// LCS F1 between two token sequences. Two empty sequences count as identical.
pub fn lcs_f1<T: PartialEq>(prediction: &[T], reference: &[T]) -> f64 {
    if prediction.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let lcs = lcs_len(prediction, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / prediction.len() as f64;
    let r = lcs / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn check_lengths(predictions: &[String], references: &[String]) -> Result<()> {
    if predictions.len() != references.len() {
        return Err(QuistError::Argument(format!(
            "{} predictions vs {} references",
            predictions.len(),
            references.len()
        )));
    }
    if predictions.is_empty() {
        return Err(QuistError::Argument("no predictions to score".into()));
    }
    Ok(())
}

/// Mean sentence-level LCS F1.
pub fn rouge_l(predictions: &[String], references: &[String]) -> Result<f64> {
    check_lengths(predictions, references)?;
    let total: f64 = predictions
        .iter()
        .zip(references)
        .map(|(p, r)| lcs_f1(&metric_tokens(p), &metric_tokens(r)))
        .sum();
    Ok(total / predictions.len() as f64)
}

/// ROUGE-L over the pieces of a subword tokenizer.
pub fn sp_rouge(predictions: &[String], references: &[String], subword: &Tokenizer) -> Result<f64> {
    check_lengths(predictions, references)?;
    let pieces = |t: &str| -> Vec<String> {
        subword
            .pieces(t)
            .into_iter()
            .filter(|p| p.chars().any(char::is_alphanumeric))
            .collect()
    };
    let total: f64 = predictions
        .iter()
        .zip(references)
        .map(|(p, r)| lcs_f1(&pieces(p), &pieces(r)))
        .sum();
    Ok(total / predictions.len() as f64)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram matches and totals for n = 1..=4.
fn ngram_stats(pred: &[String], reference: &[String]) -> [(usize, usize); 4] {
    let mut out = [(0, 0); 4];
    for (i, slot) in out.iter_mut().enumerate() {
        let n = i + 1;
        let p = ngram_counts(pred, n);
        let r = ngram_counts(reference, n);
        let matched = p.iter().map(|(g, c)| (*c).min(*r.get(g).unwrap_or(&0))).sum();
        *slot = (matched, pred.len().saturating_sub(n - 1));
    }
    out
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Corpus-level BLEU-4: clipped counts pooled over the corpus, uniform
/// weights, brevity penalty on total lengths. Zero if any order has no match.
pub fn bleu4(predictions: &[String], references: &[String]) -> Result<f64> {
    check_lengths(predictions, references)?;
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (p, r) in predictions.iter().zip(references) {
        let (p, r) = (metric_tokens(p), metric_tokens(r));
        hyp_len += p.len();
        ref_len += r.len();
        for (i, (m, t)) in ngram_stats(&p, &r).into_iter().enumerate() {
            matched[i] += m;
            total[i] += t;
        }
    }
    if matched.contains(&0) {
        return Ok(0.0);
    }
    let log_mean: f64 = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / 4.0;
    Ok(brevity_penalty(hyp_len, ref_len) * log_mean.exp())
}

/// Sentence BLEU-4 with add-one smoothing on orders 2-4.
pub fn sentence_bleu4_smoothed(prediction: &str, reference: &str) -> f64 {
    let (p, r) = (metric_tokens(prediction), metric_tokens(reference));
    if p.is_empty() {
        return 0.0;
    }
    let stats = ngram_stats(&p, &r);
    if stats[0].0 == 0 {
        return 0.0;
    }
    let log_mean: f64 = stats
        .iter()
        .enumerate()
        .map(|(i, &(m, t))| {
            let (m, t) = if i == 0 { (m as f64, t as f64) } else { (m as f64 + 1.0, t as f64 + 1.0) };
            (m / t).ln()
        })
        .sum::<f64>()
        / 4.0;
    brevity_penalty(p.len(), r.len()) * log_mean.exp()
}

/// METEOR parameters and matching stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeteorConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MeteorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 3.0,
            gamma: 0.5,
        }
    }
}

impl MeteorConfig {
    /// Stages actually used for `language`; recorded in reports.
    pub fn describe(&self, language: &str) -> String {
        let stages = if language == "en" { "exact+stem" } else { "exact" };
        format!("meteor(alpha={}, beta={}, gamma={}, stages={stages})", self.alpha, self.beta, self.gamma)
    }
}

/// Unigram alignment in stages (exact, then Porter stem for English). Within
/// a stage each hypothesis word, left to right, takes the leftmost unaligned
/// reference word with the same form.
fn meteor_alignment(hyp: &[String], reference: &[String], language: &str) -> Vec<(usize, usize)> {
    let mut hyp_used = vec![false; hyp.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    let mut stage = |key: &dyn Fn(&str) -> String| {
        let ref_keys: Vec<String> = reference.iter().map(|w| key(w)).collect();
        for (i, w) in hyp.iter().enumerate() {
            if hyp_used[i] {
                continue;
            }
            let k = key(w);
            if let Some(j) = (0..reference.len()).find(|&j| !ref_used[j] && ref_keys[j] == k) {
                hyp_used[i] = true;
                ref_used[j] = true;
                pairs.push((i, j));
            }
        }
    };
    stage(&|w: &str| w.to_string());
    if language == "en" {
        let stemmer = Stemmer::create(Algorithm::English);
        stage(&|w: &str| stemmer.stem(w).into_owned());
    }
    pairs.sort_unstable();
    pairs
}

pub fn meteor_sentence(prediction: &str, reference: &str, language: &str, config: &MeteorConfig) -> f64 {
    let (hyp, reference) = (metric_tokens(prediction), metric_tokens(reference));
    if hyp.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let pairs = meteor_alignment(&hyp, &reference, language);
    let matches = pairs.len() as f64;
    if matches == 0.0 {
        return 0.0;
    }
    let p = matches / hyp.len() as f64;
    let r = matches / reference.len() as f64;
    let fmean = p * r / (config.alpha * p + (1.0 - config.alpha) * r);
    let chunks = 1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    // A perfect match in a single chunk scores exactly 1.
    let penalty = if chunks == 1 && p == 1.0 && r == 1.0 {
        0.0
    } else {
        config.gamma * (chunks as f64 / matches).powf(config.beta)
    };
    fmean * (1.0 - penalty)
}

pub fn meteor(predictions: &[String], references: &[String], language: &str, config: &MeteorConfig) -> Result<f64> {
    check_lengths(predictions, references)?;
    let total: f64 = predictions
        .iter()
        .zip(references)
        .map(|(p, r)| meteor_sentence(p, r, language, config))
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Dispatches on `name`. SP-ROUGE needs a subword tokenizer.
pub fn compute_metric(
    name: MetricName,
    predictions: &[String],
    references: &[String],
    language: &str,
    subword_model: Option<&Tokenizer>,
) -> Result<f64> {
    match name {
        MetricName::Bleu4 => bleu4(predictions, references),
        MetricName::Meteor => meteor(predictions, references, language, &MeteorConfig::default()),
        MetricName::RougeL => rouge_l(predictions, references),
        MetricName::SpRouge => {
            let tok = subword_model
                .ok_or_else(|| QuistError::Argument("sp_rouge requires a subword model".into()))?;
            sp_rouge(predictions, references, tok)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&s(&["a b c"]), &s(&["a b c"])).unwrap(), 1.0);
        let v = rouge_l(&s(&["a b c d"]), &s(&["a c"])).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_l(&s(&["x y"]), &s(&["a b"])).unwrap(), 0.0);
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let c = s(&["the cat sat on the mat", "where is the old bridge ?"]);
        assert!((bleu4(&c, &c).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(bleu4(&s(&["a b c d"]), &s(&["e f g h"])).unwrap(), 0.0);
    }

    #[test]
    fn bleu_brevity_penalty_applies() {
        let hyp = s(&["a b c d e"]);
        let reference = s(&["a b c d e f g h i j"]);
        let v = bleu4(&hyp, &reference).unwrap();
        assert!((v - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn smoothed_sentence_bleu_is_positive_for_partial_overlap() {
        let v = sentence_bleu4_smoothed("a b x y", "a b c d");
        assert!(v > 0.0 && v < 1.0);
        assert!((sentence_bleu4_smoothed("a b c d", "a b c d") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn meteor_identity_partial_and_stems() {
        let cfg = MeteorConfig::default();
        assert!((meteor_sentence("when did it rain", "when did it rain", "en", &cfg) - 1.0).abs() < 1e-12);
        let partial = meteor_sentence("when did it rain", "it rain when did", "en", &cfg);
        assert!(partial > 0.0 && partial < 1.0);
        let stemmed = meteor_sentence("who played games", "who plays games", "en", &cfg);
        let exact_only = meteor_sentence("who played games", "who plays games", "de", &cfg);
        assert!(stemmed > exact_only);
        assert_eq!(meteor_sentence("x", "y", "en", &cfg), 0.0);
    }

    #[test]
    fn sp_rouge_requires_model() {
        assert!(compute_metric(MetricName::SpRouge, &s(&["a"]), &s(&["a"]), "zh", None).is_err());
        assert!(compute_metric(MetricName::RougeL, &s(&["a"]), &s(&["a", "b"]), "en", None).is_err());
    }
}
