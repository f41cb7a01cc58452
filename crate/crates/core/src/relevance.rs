//! Answer-relevance vectors over encoder source positions.
//!
//! * hard: exact answer-span tagging, `p_y` on every matched context token and
//!   `p_n` everywhere else;
//! * soft: `P_start + P_end` from a span predictor, zero outside the context;
//! * mixed: `α · hard + (1 − α) · soft`.

use serde::{Deserialize, Serialize};

use crate::data::SourceEncoding;
use crate::error::{Error, Result};
use crate::qa::SpanDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelevanceConfig {
    pub alpha: f64,
    pub p_y: f64,
    pub p_n: f64,
    /// Divide soft vectors by their maximum before mixing.
    pub normalize_soft: bool,
    /// Give the appended answer segment `p_y` in hard vectors.
    pub tag_answer_segment: bool,
}

impl Default for RelevanceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            p_y: 1.0,
            p_n: 0.0,
            normalize_soft: false,
            tag_answer_segment: false,
        }
    }
}

impl RelevanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::AlphaOutOfRange(self.alpha));
        }
        if !self.p_y.is_finite() || !self.p_n.is_finite() {
            return Err(Error::Config("p_y and p_n must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelevanceKind {
    Hard,
    Soft,
    Mixed,
    /// All-zero bias, i.e. no relevance information at all.
    Zero,
}

impl RelevanceKind {
    fn name(self) -> &'static str {
        match self {
            RelevanceKind::Hard => "hard",
            RelevanceKind::Soft => "soft",
            RelevanceKind::Mixed => "mixed",
            RelevanceKind::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceVector {
    scores: Vec<f64>,
    kind: RelevanceKind,
}

impl RelevanceVector {
    pub fn new(scores: Vec<f64>, kind: RelevanceKind) -> Self {
        Self { scores, kind }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len], RelevanceKind::Zero)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn kind(&self) -> RelevanceKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.scores.iter().sum()
    }

    /// Adds `c` to every entry, keeping the kind.
    pub fn shifted(&self, c: f64) -> Self {
        Self::new(self.scores.iter().map(|v| v + c).collect(), self.kind)
    }

    /// Divides by the maximum entry when it is positive.
    pub fn max_normalized(&self) -> Self {
        let max = self.scores.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return self.clone();
        }
        Self::new(self.scores.iter().map(|v| v / max).collect(), self.kind)
    }

    /// Position of the largest entry (first on ties).
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.scores.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Inclusive token span `[start, end]` within the context segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..=self.end).contains(&i)
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Every exact occurrence of `answer` in `context`, overlapping ones
/// included, in ascending order.
pub fn find_answer_spans<T: PartialEq>(context: &[T], answer: &[T]) -> Result<Vec<Span>> {
    if answer.is_empty() {
        return Err(Error::EmptyAnswer);
    }
    if answer.len() > context.len() {
        return Ok(Vec::new());
    }
    Ok(context
        .windows(answer.len())
        .enumerate()
        .filter(|(_, w)| *w == answer)
        .map(|(i, _)| Span::new(i, i + answer.len() - 1))
        .collect())
}

/// Hard relevance over the full encoder input: `p_y` inside any span of the
/// context segment, `p_n` elsewhere (separator, answer segment and padding
/// included unless `tag_answer_segment` is set).
pub fn build_hard_attention(
    encoding: &SourceEncoding,
    spans: &[Span],
    config: &RelevanceConfig,
) -> Result<RelevanceVector> {
    let ctx = encoding.context.clone();
    let mut scores = vec![config.p_n; encoding.len()];
    for s in spans {
        if s.start > s.end || ctx.start + s.end >= ctx.end {
            return Err(Error::SpanOutOfRange {
                start: s.start,
                end: s.end,
                context_len: ctx.len(),
            });
        }
        for v in &mut scores[ctx.start + s.start..=ctx.start + s.end] {
            *v = config.p_y;
        }
    }
    if config.tag_answer_segment {
        for v in &mut scores[encoding.answer.clone()] {
            *v = config.p_y;
        }
    }
    Ok(RelevanceVector::new(scores, RelevanceKind::Hard))
}

/// Soft relevance `P_start + P_end` on the context segment, 0 elsewhere.
pub fn build_soft_attention(dist: &SpanDistribution, encoding: &SourceEncoding) -> Result<RelevanceVector> {
    let ctx = encoding.context.clone();
    if dist.len() != ctx.len() {
        return Err(Error::Length {
            what: "span distribution vs context segment",
            expected: ctx.len(),
            found: dist.len(),
        });
    }
    let mut scores = vec![0.0; encoding.len()];
    for (i, (s, e)) in dist.p_start.iter().zip(&dist.p_end).enumerate() {
        scores[ctx.start + i] = s + e;
    }
    Ok(RelevanceVector::new(scores, RelevanceKind::Soft))
}

/// `α · hard + (1 − α) · soft`.
pub fn mix_attention(hard: &RelevanceVector, soft: &RelevanceVector, alpha: f64) -> Result<RelevanceVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    for (v, expected) in [(hard, RelevanceKind::Hard), (soft, RelevanceKind::Soft)] {
        if v.kind != expected {
            return Err(Error::RelevanceKind {
                expected: expected.name(),
                found: v.kind.name(),
            });
        }
    }
    if hard.len() != soft.len() {
        return Err(Error::Length {
            what: "soft relevance vs hard relevance",
            expected: hard.len(),
            found: soft.len(),
        });
    }
    let scores = if alpha == 1.0 {
        hard.scores.clone()
    } else if alpha == 0.0 {
        soft.scores.clone()
    } else {
        hard.scores
            .iter()
            .zip(&soft.scores)
            .map(|(h, s)| alpha * h + (1.0 - alpha) * s)
            .collect()
    };
    Ok(RelevanceVector::new(scores, RelevanceKind::Mixed))
}
