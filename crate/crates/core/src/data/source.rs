use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{tokenize, Example, Vocabulary, PAD, SEP};
use crate::error::{Error, Result};

/// Which part of an example forms the encoder's context segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    /// Gold supporting sentences only, in document order, without titles.
    #[default]
    SupportingFacts,
    /// Every document in input order, each prefixed by its title.
    FullDocument,
}

impl ContextMode {
    pub fn default_max_len(self) -> usize {
        match self {
            ContextMode::SupportingFacts => 200,
            ContextMode::FullDocument => 512,
        }
    }
}

impl std::str::FromStr for ContextMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supporting_facts" | "supporting-facts" | "sp" => Ok(ContextMode::SupportingFacts),
            "full_document" | "full-document" | "full" => Ok(ContextMode::FullDocument),
            other => Err(Error::Config(format!("unknown context mode {other:?}"))),
        }
    }
}

/// Where a context token came from: its paragraph, and its sentence (`None`
/// for title tokens).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenOrigin {
    pub paragraph: usize,
    pub sentence: Option<usize>,
}

/// Tokenized encoder input `context ⊕ <sep> ⊕ answer`, optionally followed by
/// padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceEncoding {
    pub ids: Vec<u32>,
    pub context: Range<usize>,
    pub answer: Range<usize>,
    pub truncated: bool,
}

impl SourceEncoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn context_ids(&self) -> &[u32] {
        &self.ids[self.context.clone()]
    }

    pub fn answer_ids(&self) -> &[u32] {
        &self.ids[self.answer.clone()]
    }

    /// `true` at padding positions.
    pub fn pad_mask(&self) -> Vec<bool> {
        (0..self.ids.len()).map(|i| i >= self.answer.end).collect()
    }

    pub fn has_padding(&self) -> bool {
        self.ids.len() > self.answer.end
    }

    /// Right-pads to `len` positions.
    pub fn padded(&self, len: usize) -> SourceEncoding {
        let mut out = self.clone();
        out.ids.resize(len.max(self.ids.len()), PAD);
        out
    }
}

/// Context tokens of an example with their origins.
pub fn context_tokens(example: &Example, mode: ContextMode) -> Result<Vec<(String, TokenOrigin)>> {
    let mut out = Vec::new();
    match mode {
        ContextMode::SupportingFacts => {
            if example.supporting_facts.is_empty() {
                return Err(Error::NoSupportingFacts(example.id.clone()));
            }
            for (pi, p) in example.context.iter().enumerate() {
                for (si, s) in p.sentences.iter().enumerate() {
                    if example.is_supporting(pi, si) {
                        let origin = TokenOrigin {
                            paragraph: pi,
                            sentence: Some(si),
                        };
                        out.extend(tokenize(s).into_iter().map(|t| (t, origin)));
                    }
                }
            }
        }
        ContextMode::FullDocument => {
            for (pi, p) in example.context.iter().enumerate() {
                let title = TokenOrigin {
                    paragraph: pi,
                    sentence: None,
                };
                out.extend(tokenize(&p.title).into_iter().map(|t| (t, title)));
                for (si, s) in p.sentences.iter().enumerate() {
                    let origin = TokenOrigin {
                        paragraph: pi,
                        sentence: Some(si),
                    };
                    out.extend(tokenize(s).into_iter().map(|t| (t, origin)));
                }
            }
        }
    }
    Ok(out)
}

/// Builds `context ⊕ <sep> ⊕ answer`, cutting the context tail when the
/// total would exceed `max_len`. The answer is never cut.
pub fn assemble_source(
    example: &Example,
    mode: ContextMode,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<SourceEncoding> {
    let answer = vocab.encode(&example.answer);
    if answer.len() + 1 > max_len {
        return Err(Error::AnswerTooLong {
            answer_len: answer.len(),
            max_len,
        });
    }
    let context = context_tokens(example, mode)?;
    let budget = max_len - 1 - answer.len();
    let truncated = context.len() > budget;
    let kept = context.len().min(budget);
    let mut ids: Vec<u32> = context[..kept].iter().map(|(t, _)| vocab.id(t)).collect();
    ids.push(SEP);
    let answer_start = ids.len();
    ids.extend(&answer);
    Ok(SourceEncoding {
        context: 0..kept,
        answer: answer_start..ids.len(),
        ids,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, Paragraph, SupportingFact};

    fn fixture() -> Example {
        Example {
            id: "f".into(),
            question: "where is it ?".into(),
            answer: "big town".into(),
            context: vec![
                Paragraph {
                    title: "Alpha".into(),
                    sentences: vec!["one two three four five".into(), "noise here .".into()],
                },
                Paragraph {
                    title: "Beta".into(),
                    sentences: vec!["beta is in big town .".into()],
                },
            ],
            supporting_facts: vec![SupportingFact {
                title: "Alpha".into(),
                sentence: 0,
            }],
        }
    }

    #[test]
    fn supporting_facts_layout() {
        let ex = fixture();
        let vocab = build_vocab(std::slice::from_ref(&ex), 1).unwrap();
        let enc = assemble_source(&ex, ContextMode::SupportingFacts, &vocab, 200).unwrap();
        assert_eq!(enc.len(), 8);
        assert_eq!(enc.context, 0..5);
        assert_eq!(enc.answer, 6..8);
        assert_eq!(enc.ids[5], SEP);
        assert!(!enc.truncated);
        assert_eq!(vocab.decode(enc.answer_ids()), ["big", "town"]);
    }

    #[test]
    fn full_document_prepends_titles_in_order() {
        let ex = fixture();
        let vocab = build_vocab(std::slice::from_ref(&ex), 1).unwrap();
        let enc = assemble_source(&ex, ContextMode::FullDocument, &vocab, 512).unwrap();
        let words = vocab.decode(enc.context_ids());
        assert_eq!(
            words.join(" "),
            "alpha one two three four five noise here . beta beta is in big town ."
        );
    }

    #[test]
    fn truncation_cuts_context_tail() {
        let ex = fixture();
        let vocab = build_vocab(std::slice::from_ref(&ex), 1).unwrap();
        let enc = assemble_source(&ex, ContextMode::FullDocument, &vocab, 6).unwrap();
        assert!(enc.truncated);
        assert_eq!(enc.len(), 6);
        assert_eq!(enc.context, 0..3);
        assert_eq!(vocab.decode(enc.answer_ids()), ["big", "town"]);
        assert!(matches!(
            assemble_source(&ex, ContextMode::FullDocument, &vocab, 2),
            Err(Error::AnswerTooLong { .. })
        ));
    }

    #[test]
    fn supporting_mode_requires_facts() {
        let mut ex = fixture();
        ex.supporting_facts.clear();
        let vocab = build_vocab(std::slice::from_ref(&ex), 1).unwrap();
        assert!(assemble_source(&ex, ContextMode::SupportingFacts, &vocab, 200).is_err());
    }

    #[test]
    fn padding_mask() {
        let ex = fixture();
        let vocab = build_vocab(std::slice::from_ref(&ex), 1).unwrap();
        let enc = assemble_source(&ex, ContextMode::SupportingFacts, &vocab, 200)
            .unwrap()
            .padded(11);
        assert_eq!(enc.len(), 11);
        let mask = enc.pad_mask();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 3);
        assert!(mask[8] && !mask[7]);
    }
}
