//! HotpotQA-format records:
//!
//! ```json
//! [{"_id": "...", "question": "...", "answer": "...",
//!   "context": [["Title", ["sentence 0", "sentence 1"]], ...],
//!   "supporting_facts": [["Title", 0], ...]}]
//! ```
//!
//! Unknown fields (`type`, `level`, ...) are ignored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Paragraph {
    pub title: String,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SupportingFact {
    pub title: String,
    pub sentence: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub context: Vec<Paragraph>,
    pub supporting_facts: Vec<SupportingFact>,
}

impl Example {
    /// Whether `(paragraph, sentence)` is a gold supporting fact.
    pub fn is_supporting(&self, paragraph: usize, sentence: usize) -> bool {
        let title = &self.context[paragraph].title;
        self.supporting_facts
            .iter()
            .any(|f| &f.title == title && f.sentence == sentence)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        if self.answer.trim().is_empty() {
            return Err("empty answer".into());
        }
        for f in &self.supporting_facts {
            match self.context.iter().find(|p| p.title == f.title) {
                None => return Err(format!("supporting fact title {:?} not in context", f.title)),
                Some(p) if f.sentence >= p.sentences.len() => {
                    return Err(format!(
                        "supporting fact ({:?}, {}) points past the {} sentences of that paragraph",
                        f.title,
                        f.sentence,
                        p.sentences.len()
                    ))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RawExample {
    #[serde(rename = "_id")]
    id: String,
    question: String,
    answer: String,
    context: Vec<(String, Vec<String>)>,
    supporting_facts: Vec<(String, usize)>,
}

impl From<RawExample> for Example {
    fn from(raw: RawExample) -> Self {
        Example {
            id: raw.id,
            question: raw.question,
            answer: raw.answer,
            context: raw
                .context
                .into_iter()
                .map(|(title, sentences)| Paragraph { title, sentences })
                .collect(),
            supporting_facts: raw
                .supporting_facts
                .into_iter()
                .map(|(title, sentence)| SupportingFact { title, sentence })
                .collect(),
        }
    }
}

impl From<&Example> for RawExample {
    fn from(ex: &Example) -> Self {
        RawExample {
            id: ex.id.clone(),
            question: ex.question.clone(),
            answer: ex.answer.clone(),
            context: ex
                .context
                .iter()
                .map(|p| (p.title.clone(), p.sentences.clone()))
                .collect(),
            supporting_facts: ex
                .supporting_facts
                .iter()
                .map(|f| (f.title.clone(), f.sentence))
                .collect(),
        }
    }
}

/// A record rejected during loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedRecord {
    pub id: String,
    pub reason: String,
}

pub fn parse_hotpot(text: &str, source: &str) -> Result<(Vec<Example>, Vec<DroppedRecord>)> {
    let raw: Vec<RawExample> = serde_json::from_str(text).map_err(|e| Error::json(source, e))?;
    let mut kept = Vec::with_capacity(raw.len());
    let mut dropped = Vec::new();
    for r in raw {
        let ex = Example::from(r);
        match ex.validate() {
            Ok(()) => kept.push(ex),
            Err(reason) => {
                log::warn!("{source}: dropping record {}: {reason}", ex.id);
                dropped.push(DroppedRecord { id: ex.id, reason });
            }
        }
    }
    Ok((kept, dropped))
}

/// Loads a HotpotQA JSON file, dropping (and logging) invalid records.
pub fn load_hotpot(path: &Path) -> Result<Vec<Example>> {
    load_hotpot_with_report(path).map(|(ex, _)| ex)
}

pub fn load_hotpot_with_report(path: &Path) -> Result<(Vec<Example>, Vec<DroppedRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_hotpot(&text, &path.display().to_string())
}

pub fn to_hotpot_json(examples: &[Example]) -> String {
    let raw: Vec<RawExample> = examples.iter().map(RawExample::from).collect();
    serde_json::to_string_pretty(&raw).expect("plain data serialises")
}

pub fn save_hotpot(path: &Path, examples: &[Example]) -> Result<()> {
    std::fs::write(path, to_hotpot_json(examples)).map_err(|e| Error::io(path, e))
}
