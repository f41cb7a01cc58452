//! Beam search with length normalisation and min/max length, plus greedy
//! decoding, over any [`StepScorer`].

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::{END, PAD, SEP, START};
use crate::error::{Error, Result};
use crate::model::{DecodeSession, DecodeState, Seq2Seq};
use crate::relevance::RelevanceVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len: usize,
    pub min_len: usize,
    pub length_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 4,
            max_len: 32,
            min_len: 12,
            length_penalty: 1.0,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_len == 0 {
            return Err(Error::Config("beam_size and max_len must be positive".into()));
        }
        if self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "min_len {} exceeds max_len {}",
                self.min_len, self.max_len
            )));
        }
        if !self.length_penalty.is_finite() {
            return Err(Error::Config("length_penalty must be finite".into()));
        }
        Ok(())
    }
}

/// A generated sequence (start token excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub logprob: f64,
    /// Ended with the end token rather than hitting `max_len`.
    pub finished: bool,
}

impl Hypothesis {
    /// `logprob / len^lp`, `len` counting the end token.
    pub fn score(&self, length_penalty: f64) -> f64 {
        normalized_score(self.logprob, self.tokens.len(), length_penalty)
    }

    /// Tokens without the trailing end token.
    pub fn content(&self) -> &[u32] {
        match self.tokens.last() {
            Some(&END) if self.finished => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

pub fn normalized_score(logprob: f64, len: usize, length_penalty: f64) -> f64 {
    logprob / (len.max(1) as f64).powf(length_penalty)
}

/// Source of next-token log-probabilities for a growing prefix.
pub trait StepScorer {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    fn end_token(&self) -> u32 {
        END
    }

    /// Tokens never generated.
    fn banned(&self) -> &[u32] {
        &[PAD, START, SEP]
    }

    /// State after the start token and the distribution of the first token.
    fn start(&self) -> Result<(Self::State, Vec<f64>)>;

    fn advance(&self, state: &Self::State, token: u32) -> Result<(Self::State, Vec<f64>)>;
}

impl StepScorer for DecodeSession<'_> {
    type State = DecodeState;

    fn vocab_size(&self) -> usize {
        DecodeSession::vocab_size(self)
    }

    fn start(&self) -> Result<(DecodeState, Vec<f64>)> {
        DecodeSession::start(self)
    }

    fn advance(&self, state: &DecodeState, token: u32) -> Result<(DecodeState, Vec<f64>)> {
        DecodeSession::advance(self, state, token)
    }
}

/// Whether `token` may follow a prefix of `generated` tokens.
fn allowed<S: StepScorer>(scorer: &S, token: u32, generated: usize, min_len: usize) -> bool {
    if scorer.banned().contains(&token) {
        return false;
    }
    token != scorer.end_token() || generated >= min_len
}

fn lex_cmp(a: &[u32], b: &[u32]) -> Ordering {
    a.cmp(b)
}

/// Higher score first, then the lexicographically smaller sequence.
fn rank(a: (f64, &[u32]), b: (f64, &[u32])) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| lex_cmp(a.1, b.1))
}

struct Live<S> {
    tokens: Vec<u32>,
    logprob: f64,
    state: S,
    next: Vec<f64>,
}

/// Best score any continuation of a live prefix could still reach, given
/// that log-probabilities only decrease.
fn optimistic_bound(logprob: f64, len: usize, cfg: &BeamConfig) -> f64 {
    let shortest = (len + 1).max(cfg.min_len + 1).min(cfg.max_len);
    let longest = cfg.max_len.max(shortest);
    normalized_score(logprob, shortest, cfg.length_penalty)
        .max(normalized_score(logprob, longest, cfg.length_penalty))
}

/// Beam search. Each step keeps the `beam_size` best one-token extensions
/// of the live beams; those ending in the end token join the finished pool.
/// Hypotheses reaching `max_len` are finished as they are. Search stops once
/// no live beam can beat the best finished score.
pub fn beam_search<S: StepScorer>(scorer: &S, cfg: &BeamConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let end = scorer.end_token();
    let (state, next) = scorer.start()?;
    let mut live = vec![Live {
        tokens: Vec::new(),
        logprob: 0.0,
        state,
        next,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    while !live.is_empty() {
        let mut candidates: Vec<(f64, Vec<u32>, usize)> = Vec::new();
        for (bi, beam) in live.iter().enumerate() {
            let generated = beam.tokens.len();
            for (tok, &lp) in beam.next.iter().enumerate() {
                let tok = tok as u32;
                if lp == f64::NEG_INFINITY || !allowed(scorer, tok, generated, cfg.min_len) {
                    continue;
                }
                let mut tokens = beam.tokens.clone();
                tokens.push(tok);
                candidates.push((beam.logprob + lp, tokens, bi));
            }
        }
        candidates.sort_by(|a, b| rank((a.0, &a.1), (b.0, &b.1)));
        candidates.truncate(cfg.beam_size);

        let mut next_live = Vec::new();
        for (logprob, tokens, bi) in candidates {
            let last = *tokens.last().expect("extended by one token");
            if last == end {
                finished.push(Hypothesis {
                    tokens,
                    logprob,
                    finished: true,
                });
            } else if tokens.len() >= cfg.max_len {
                finished.push(Hypothesis {
                    tokens,
                    logprob,
                    finished: false,
                });
            } else {
                let (state, next) = scorer.advance(&live[bi].state, last)?;
                next_live.push(Live {
                    tokens,
                    logprob,
                    state,
                    next,
                });
            }
        }
        live = next_live;

        if let Some(best) = best_of(&finished, cfg.length_penalty) {
            let target = best.score(cfg.length_penalty);
            if live
                .iter()
                .all(|b| optimistic_bound(b.logprob, b.tokens.len(), cfg) < target)
            {
                break;
            }
        }
    }
    best_of(&finished, cfg.length_penalty)
        .cloned()
        .ok_or_else(|| Error::Config("no token may be generated".into()))
}

fn best_of(pool: &[Hypothesis], lp: f64) -> Option<&Hypothesis> {
    pool.iter()
        .min_by(|a, b| rank((a.score(lp), &a.tokens), (b.score(lp), &b.tokens)))
}

/// Argmax decoding with the same end-token masking; ties go to the lowest
/// token id.
pub fn greedy<S: StepScorer>(scorer: &S, max_len: usize, min_len: usize) -> Result<Hypothesis> {
    if max_len == 0 || min_len > max_len {
        return Err(Error::Config(format!("invalid lengths min {min_len}, max {max_len}")));
    }
    let end = scorer.end_token();
    let (mut state, mut next) = scorer.start()?;
    let mut tokens = Vec::new();
    let mut logprob = 0.0;
    loop {
        let mut best: Option<(u32, f64)> = None;
        for (tok, &lp) in next.iter().enumerate() {
            let tok = tok as u32;
            if lp == f64::NEG_INFINITY || !allowed(scorer, tok, tokens.len(), min_len) {
                continue;
            }
            if best.is_none_or(|(_, b)| lp > b) {
                best = Some((tok, lp));
            }
        }
        let (tok, lp) = best.ok_or_else(|| Error::Config("no token may be generated".into()))?;
        tokens.push(tok);
        logprob += lp;
        if tok == end {
            return Ok(Hypothesis {
                tokens,
                logprob,
                finished: true,
            });
        }
        if tokens.len() >= max_len {
            return Ok(Hypothesis {
                tokens,
                logprob,
                finished: false,
            });
        }
        (state, next) = scorer.advance(&state, tok)?;
    }
}

/// Beam-search a question for `source` under relevance `bias`.
pub fn generate_beam(model: &Seq2Seq, source: &[u32], bias: &RelevanceVector, cfg: &BeamConfig) -> Result<Hypothesis> {
    beam_search(&model.session(source, bias)?, cfg)
}

pub fn generate_greedy(
    model: &Seq2Seq,
    source: &[u32],
    bias: &RelevanceVector,
    max_len: usize,
    min_len: usize,
) -> Result<Hypothesis> {
    greedy(&model.session(source, bias)?, max_len, min_len)
}

/// Scorer over a fixed table: `table(prefix)` gives log-probabilities of
/// the next token. Used for exhaustive-search checks.
pub struct TableScorer<F> {
    pub vocab: usize,
    pub end: u32,
    pub table: F,
}

impl<F: Fn(&[u32]) -> Vec<f64>> StepScorer for TableScorer<F> {
    type State = Vec<u32>;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn end_token(&self) -> u32 {
        self.end
    }

    fn banned(&self) -> &[u32] {
        &[]
    }

    fn start(&self) -> Result<(Vec<u32>, Vec<f64>)> {
        Ok((Vec::new(), (self.table)(&[])))
    }

    fn advance(&self, state: &Vec<u32>, token: u32) -> Result<(Vec<u32>, Vec<f64>)> {
        let mut next = state.clone();
        next.push(token);
        let lp = (self.table)(&next);
        Ok((next, lp))
    }
}

/// Best hypothesis by enumerating every admissible sequence.
pub fn exhaustive_search<S: StepScorer>(scorer: &S, cfg: &BeamConfig) -> Result<Hypothesis> {
    fn walk<S: StepScorer>(
        scorer: &S,
        cfg: &BeamConfig,
        tokens: &mut Vec<u32>,
        logprob: f64,
        state: &S::State,
        next: &[f64],
        best: &mut Option<Hypothesis>,
    ) -> Result<()> {
        for (tok, &lp) in next.iter().enumerate() {
            let tok = tok as u32;
            if lp == f64::NEG_INFINITY || !allowed(scorer, tok, tokens.len(), cfg.min_len) {
                continue;
            }
            tokens.push(tok);
            let total = logprob + lp;
            let done = tok == scorer.end_token();
            if done || tokens.len() >= cfg.max_len {
                let h = Hypothesis {
                    tokens: tokens.clone(),
                    logprob: total,
                    finished: done,
                };
                let better = best.as_ref().is_none_or(|b| {
                    rank(
                        (h.score(cfg.length_penalty), &h.tokens),
                        (b.score(cfg.length_penalty), &b.tokens),
                    ) == Ordering::Less
                });
                if better {
                    *best = Some(h);
                }
            } else {
                let (s, n) = scorer.advance(state, tok)?;
                walk(scorer, cfg, tokens, total, &s, &n, best)?;
            }
            tokens.pop();
        }
        Ok(())
    }
    let (state, next) = scorer.start()?;
    let mut best = None;
    walk(scorer, cfg, &mut Vec::new(), 0.0, &state, &next, &mut best)?;
    best.ok_or_else(|| Error::Config("no admissible sequence".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{log_softmax, Rng};
    use proptest::prelude::*;

    fn random_table(seed: u64, vocab: usize) -> impl Fn(&[u32]) -> Vec<f64> {
        move |prefix: &[u32]| {
            let mut key = seed;
            for &t in prefix {
                key = key.wrapping_mul(31).wrapping_add(t as u64 + 1);
            }
            let mut rng = Rng::new(key);
            let logits: Vec<f64> = (0..vocab).map(|_| rng.normal(0.0, 2.0)).collect();
            log_softmax(&logits)
        }
    }

    #[test]
    fn hand_table_three_tokens() {
        // tokens: 0 = a, 1 = b, 2 = end
        let table = |p: &[u32]| -> Vec<f64> {
            let probs: [f64; 3] = match p {
                [] => [0.5, 0.45, 0.05],
                [0] => [0.2, 0.2, 0.6],
                [1] => [0.025, 0.025, 0.95],
                _ => [0.3, 0.3, 0.4],
            };
            probs.iter().map(|v| v.ln()).collect()
        };
        let s = TableScorer {
            vocab: 3,
            end: 2,
            table,
        };
        let cfg = BeamConfig {
            beam_size: 2,
            max_len: 3,
            min_len: 0,
            length_penalty: 1.0,
        };
        let b = beam_search(&s, &cfg).unwrap();
        let e = exhaustive_search(&s, &cfg).unwrap();
        assert_eq!(b, e);
        // [b, end]: (ln 0.45 + ln 0.95) / 2 beats greedy's [a, end]
        assert_eq!(b.tokens, [1, 2]);
        assert!((b.score(1.0) - (0.45f64.ln() + 0.95f64.ln()) / 2.0).abs() < 1e-12);
        let g = greedy(&s, 3, 0).unwrap();
        assert_eq!(g.tokens, [0, 2]);
    }

    #[test]
    fn min_len_masks_end() {
        let s = TableScorer {
            vocab: 3,
            end: 2,
            table: |_: &[u32]| vec![0.1f64.ln(), 0.1f64.ln(), 0.8f64.ln()],
        };
        let g = greedy(&s, 32, 12).unwrap();
        assert_eq!(g.tokens.len(), 13);
        assert!(g.finished);
        let b = beam_search(&s, &BeamConfig::default()).unwrap();
        assert!(b.tokens.len() > 12);
        assert_eq!(b.tokens.iter().filter(|&&t| t == 2).count(), 1);
    }

    #[test]
    fn force_finish_at_max_len() {
        let s = TableScorer {
            vocab: 3,
            end: 2,
            table: |_: &[u32]| vec![0.45f64.ln(), 0.45f64.ln(), 0.1f64.ln()],
        };
        let h = greedy(&s, 5, 0).unwrap();
        assert_eq!(h.tokens, [0, 0, 0, 0, 0]);
        assert!(!h.finished);
    }

    #[test]
    fn config_validation() {
        let bad = BeamConfig {
            min_len: 40,
            ..BeamConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn beam_one_is_greedy(seed in any::<u64>(), min_len in 0usize..4) {
            let s = TableScorer { vocab: 5, end: 2, table: random_table(seed, 5) };
            let cfg = BeamConfig { beam_size: 1, max_len: 8, min_len, length_penalty: 1.0 };
            prop_assert_eq!(beam_search(&s, &cfg).unwrap(), greedy(&s, 8, min_len).unwrap());
        }

        #[test]
        fn full_width_beam_is_exhaustive(seed in any::<u64>(), lp in 0.0f64..2.0, min_len in 0usize..3) {
            let s = TableScorer { vocab: 3, end: 2, table: random_table(seed, 3) };
            let cfg = BeamConfig { beam_size: 81, max_len: 4, min_len, length_penalty: lp };
            let b = beam_search(&s, &cfg).unwrap();
            let e = exhaustive_search(&s, &cfg).unwrap();
            prop_assert_eq!(b.tokens, e.tokens);
        }

        #[test]
        fn exhaustive_beam_not_worse_than_greedy(seed in any::<u64>()) {
            let s = TableScorer { vocab: 3, end: 2, table: random_table(seed, 3) };
            let cfg = BeamConfig { beam_size: 81, max_len: 4, min_len: 1, length_penalty: 1.0 };
            let b = beam_search(&s, &cfg).unwrap();
            let g = greedy(&s, 4, 1).unwrap();
            prop_assert!(b.score(1.0) >= g.score(1.0) - 1e-12);
        }

        #[test]
        fn end_only_last(seed in any::<u64>(), beam in 1usize..5) {
            let s = TableScorer { vocab: 6, end: 2, table: random_table(seed, 6) };
            let cfg = BeamConfig { beam_size: beam, max_len: 10, min_len: 2, length_penalty: 1.0 };
            let h = beam_search(&s, &cfg).unwrap();
            let n = h.tokens.len();
            prop_assert!(h.tokens[..n - 1].iter().all(|&t| t != 2));
            prop_assert!(h.logprob <= 0.0);
            prop_assert!(!h.finished || h.tokens[n - 1] == 2);
        }

        #[test]
        fn mean_logprob_at_unit_penalty(seed in any::<u64>()) {
            let s = TableScorer { vocab: 4, end: 2, table: random_table(seed, 4) };
            let h = greedy(&s, 6, 0).unwrap();
            let mut sum = 0.0;
            for i in 0..h.tokens.len() {
                sum += random_table(seed, 4)(&h.tokens[..i])[h.tokens[i] as usize];
            }
            prop_assert!((h.score(1.0) - sum / h.tokens.len() as f64).abs() < 1e-12);
        }
    }
}
