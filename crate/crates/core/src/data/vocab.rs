use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{tokenize, Example};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const START: u32 = 1;
pub const END: u32 = 2;
pub const SEP: u32 = 3;
pub const UNK: u32 = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<s>", "</s>", "<sep>", "<unk>"];

/// Word-level vocabulary. Special ids are fixed: pad 0, start 1, end 2,
/// separator 3, unknown 4. Regular tokens follow in (frequency desc, token
/// asc) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    hash: String,
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens[..SPECIAL_TOKENS.len()]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Format("vocabulary must start with the special tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or("<unk>", String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_tokens(&tokenize(text))
    }

    /// Decodes ids, dropping special tokens.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | START | END | SEP))
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    /// SHA-256 over the id-ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = VocabFile {
            hash: self.hash(),
            tokens: self.tokens.clone(),
        };
        let text = serde_json::to_string_pretty(&file).map_err(|e| Error::json("vocabulary", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: VocabFile =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        let vocab = Self::from_tokens(file.tokens)?;
        if vocab.hash() != file.hash {
            return Err(Error::Format(format!(
                "{}: stored hash does not match contents",
                path.display()
            )));
        }
        Ok(vocab)
    }
}

/// Every token of an example that any model sees: question, answer, titles
/// and sentences.
pub fn example_tokens(example: &Example) -> impl Iterator<Item = String> + '_ {
    let texts = std::iter::once(example.question.as_str())
        .chain(std::iter::once(example.answer.as_str()))
        .chain(example.context.iter().flat_map(|p| {
            std::iter::once(p.title.as_str()).chain(p.sentences.iter().map(String::as_str))
        }));
    texts.flat_map(tokenize)
}

/// Builds a vocabulary from every token with corpus frequency ≥ `min_freq`.
pub fn build_vocab(examples: &[Example], min_freq: usize) -> Result<Vocabulary> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if min_freq == 0 {
        return Err(Error::Config("min_freq must be at least 1".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for ex in examples {
        for t in example_tokens(ex) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !SPECIAL_TOKENS.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = SPECIAL_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t))
        .collect();
    Vocabulary::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Paragraph;

    fn one_sentence(text: &str) -> Example {
        Example {
            id: "x".into(),
            question: text.into(),
            answer: String::new(),
            context: vec![],
            supporting_facts: vec![],
        }
    }

    #[test]
    fn single_sentence_vocab() {
        let v = build_vocab(&[one_sentence("the cat saw the dog")], 1).unwrap();
        assert_eq!(v.len(), 4 + 5);
        assert_eq!(v.token(5), "the");
        assert_eq!(&v.tokens()[6..], ["cat", "dog", "saw"]);
    }

    #[test]
    fn threshold_leaves_only_specials() {
        let v = build_vocab(&[one_sentence("alpha beta gamma")], 2).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.encode("alpha beta"), [UNK, UNK]);
    }

    #[test]
    fn hash_is_stable() {
        let ex = Example {
            id: "a".into(),
            question: "who?".into(),
            answer: "me".into(),
            context: vec![Paragraph {
                title: "T".into(),
                sentences: vec!["me and you .".into()],
            }],
            supporting_facts: vec![],
        };
        let a = build_vocab(std::slice::from_ref(&ex), 1).unwrap();
        let b = build_vocab(&[ex], 1).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a, b);
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(matches!(build_vocab(&[], 1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = build_vocab(&[one_sentence("one two two")], 1).unwrap();
        let p = dir.path().join("vocab.json");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }
}
