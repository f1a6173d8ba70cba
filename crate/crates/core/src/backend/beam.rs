//! Beam search with length-normalized final selection.

use std::cmp::Ordering;

use crate::error::Result;
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, ending with end-of-sequence when `finished`.
    pub tokens: Vec<TokenId>,
    /// Cumulative log-probability.
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Cumulative log-probability divided by hypothesis length.
    pub fn normalized_score(&self) -> f64 {
        if self.tokens.is_empty() {
            self.log_prob
        } else {
            self.log_prob / self.tokens.len() as f64
        }
    }

    /// Tokens without the trailing end-of-sequence.
    pub fn content(&self) -> &[TokenId] {
        if self.finished {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

/// Highest score first; equal scores fall back to token order so results do
/// not depend on sort stability.
fn by_score(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob
        .partial_cmp(&a.log_prob)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// `step` maps each live prefix to next-token log-probabilities. At every
/// step the `beam_size` best expansions survive; expansions ending in `eos`
/// retire. Search ends when no live hypothesis remains, when `beam_size`
/// hypotheses have retired and none of the live ones scores better than the
/// worst of them, or after `max_length` tokens. With a beam of one this is
/// greedy decoding.
pub fn beam_search<F>(mut step: F, eos: TokenId, beam_size: usize, max_length: usize) -> Result<Hypothesis>
where
    F: FnMut(&[Vec<TokenId>]) -> Result<Vec<Vec<f32>>>,
{
    let mut alive = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_length {
        let prefixes: Vec<Vec<TokenId>> = alive.iter().map(|h| h.tokens.clone()).collect();
        let scores = step(&prefixes)?;
        let mut candidates = Vec::with_capacity(alive.len() * beam_size);
        for (hyp, row) in alive.iter().zip(&scores) {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
            for &tok in order.iter().take(beam_size) {
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok as TokenId);
                candidates.push(Hypothesis {
                    tokens,
                    log_prob: hyp.log_prob + row[tok] as f64,
                    finished: tok as TokenId == eos,
                });
            }
        }
        candidates.sort_by(by_score);
        candidates.truncate(beam_size);
        alive.clear();
        for c in candidates {
            if c.finished {
                finished.push(c);
            } else {
                alive.push(c);
            }
        }
        if alive.is_empty() {
            break;
        }
        if finished.len() >= beam_size {
            let mut kept: Vec<f64> = finished.iter().map(Hypothesis::normalized_score).collect();
            kept.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
            let worst_kept = kept[beam_size - 1];
            let best_alive = alive.iter().map(Hypothesis::normalized_score).fold(f64::NEG_INFINITY, f64::max);
            if best_alive <= worst_kept {
                break;
            }
        }
    }
    finished.extend(alive);
    let best = finished
        .into_iter()
        .reduce(|best, h| if h.normalized_score() > best.normalized_score() { h } else { best })
        .expect("search keeps at least one hypothesis");
    Ok(best)
}

/// Argmax decoding, lowest token id on ties.
pub fn greedy_search<F>(mut step: F, eos: TokenId, max_length: usize) -> Result<Hypothesis>
where
    F: FnMut(&[Vec<TokenId>]) -> Result<Vec<Vec<f32>>>,
{
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    for _ in 0..max_length {
        let row = step(std::slice::from_ref(&hyp.tokens))?.remove(0);
        let (tok, lp) = row
            .iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        hyp.tokens.push(tok as TokenId);
        hyp.log_prob += lp as f64;
        if tok as TokenId == eos {
            hyp.finished = true;
            break;
        }
    }
    Ok(hyp)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed next-token table keyed by prefix length: a toy model where
    /// the greedy first choice leads into a poor continuation.
    fn trap(prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f32>>> {
        Ok(prefixes
            .iter()
            .map(|p| {
                let probs: Vec<f32> = match p.as_slice() {
                    [] => vec![0.0, 0.55, 0.45],
                    [1] => vec![0.34, 0.33, 0.33],
                    [2] => vec![0.95, 0.03, 0.02],
                    _ => vec![1.0, 0.0, 0.0],
                };
                probs.into_iter().map(|x| x.max(1e-9).ln()).collect()
            })
            .collect())
    }

    #[test]
    fn beam_one_is_greedy() {
        let b = beam_search(trap, 0, 1, 5).unwrap();
        let g = greedy_search(trap, 0, 5).unwrap();
        assert_eq!(b.tokens, g.tokens);
        assert!((b.log_prob - g.log_prob).abs() < 1e-12);
    }

    #[test]
    fn wider_beam_escapes_the_trap() {
        let b1 = beam_search(trap, 0, 1, 5).unwrap();
        let b2 = beam_search(trap, 0, 2, 5).unwrap();
        assert_eq!(b1.tokens, vec![1, 0]);
        assert_eq!(b2.tokens, vec![2, 0]);
        assert!(b2.normalized_score() >= b1.normalized_score());
        assert_eq!(b2.content(), &[2]);
    }

    #[test]
    fn stops_at_max_length() {
        let never_eos = |p: &[Vec<TokenId>]| Ok(p.iter().map(|_| vec![-10.0, -0.1]).collect());
        let h = beam_search(never_eos, 0, 3, 4).unwrap();
        assert_eq!(h.tokens.len(), 4);
        assert!(!h.finished);
    }
}
