//! Corpus BLEU-1..4 and sentence-averaged ROUGE-L.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{parse_hotpot, tokenize};
use crate::error::{Error, Result};

/// Replaces zero match counts in n-gram precisions.
pub const BLEU_EPSILON: f64 = 1e-9;

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(|t| t.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped n-gram precision of each order `1..=max_n`, summed over the
/// corpus, with zero match counts replaced by [`BLEU_EPSILON`].
pub fn modified_precisions<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>], max_n: usize) -> Vec<f64> {
    (1..=max_n)
        .map(|n| {
            let mut matched = 0usize;
            let mut total = 0usize;
            for (c, r) in candidates.iter().zip(references) {
                let cg = ngrams(c, n);
                let rg = ngrams(r, n);
                for (g, count) in &cg {
                    matched += (*count).min(rg.get(g).copied().unwrap_or(0));
                    total += count;
                }
            }
            if matched == 0 || total == 0 {
                BLEU_EPSILON
            } else {
                matched as f64 / total as f64
            }
        })
        .collect()
}

/// `exp(1 − r/c)` when the corpus candidate length `c` is below the
/// reference length `r`, else 1; 0 for an empty candidate corpus.
pub fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    if candidate_len == 0 {
        0.0
    } else if candidate_len >= reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    }
}

/// Corpus BLEU-1 through BLEU-`max_n` against one reference each.
///
/// ```
/// let c = vec![vec!["the", "cat", "sat"]];
/// let r = vec![vec!["the", "cat", "sat", "down"]];
/// let b = mhqg::metrics::bleu(&c, &r, 3).unwrap();
/// assert!((b[2] - (-1.0f64 / 3.0).exp()).abs() < 1e-12);
/// ```
pub fn bleu<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>], max_n: usize) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if candidates.len() != references.len() {
        return Err(Error::Length {
            what: "references vs candidates",
            expected: candidates.len(),
            found: references.len(),
        });
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let bp = brevity_penalty(c, r);
    let p = modified_precisions(candidates, references, max_n);
    let mut log_sum = 0.0;
    Ok(p
        .iter()
        .enumerate()
        .map(|(i, pi)| {
            log_sum += pi.ln();
            bp * (log_sum / (i + 1) as f64).exp()
        })
        .collect())
}

fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure; `beta` weights recall (1 gives plain F1).
pub fn rouge_l_beta<S: AsRef<str>>(candidate: &[S], reference: &[S], beta: f64) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::EmptySequence("rouge_l"));
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = beta * beta;
    Ok((1.0 + b2) * p * r / (r + b2 * p))
}

/// ```
/// let f = mhqg::metrics::rouge_l(&["a", "b", "c", "d"], &["a", "c", "d"]).unwrap();
/// assert!((f - 6.0 / 7.0).abs() < 1e-12);
/// ```
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Result<f64> {
    rouge_l_beta(candidate, reference, 1.0)
}

/// Mean sentence ROUGE-L over aligned pairs.
pub fn corpus_rouge_l<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>], beta: f64) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut sum = 0.0;
    for (c, r) in candidates.iter().zip(references) {
        sum += rouge_l_beta(c, r, beta)?;
    }
    Ok(sum / candidates.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub rouge_beta: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { rouge_beta: 1.0 }
    }
}

/// Scores in `[0, 1]`; multiply by 100 for the usual presentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
    pub count: usize,
    pub smoothing: String,
    pub rouge_beta: f64,
    pub config: serde_json::Value,
    /// Set when any scored output was decoded with gold-question relevance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub watermark: Option<String>,
}

/// Text placed in reports built from diagnostic outputs.
pub const ORACLE_WATERMARK: &str =
    "DIAGNOSTIC: decoded with soft relevance computed from gold questions; not comparable to hard-relevance results";

impl EvalReport {
    pub fn from_tokens(candidates: &[Vec<String>], references: &[Vec<String>], cfg: &MetricsConfig) -> Result<Self> {
        let b = bleu(candidates, references, 4)?;
        Ok(Self {
            bleu_1: b[0],
            bleu_2: b[1],
            bleu_3: b[2],
            bleu_4: b[3],
            rouge_l: corpus_rouge_l(candidates, references, cfg.rouge_beta)?,
            count: candidates.len(),
            smoothing: format!("add-epsilon {BLEU_EPSILON:e} on zero n-gram matches"),
            rouge_beta: cfg.rouge_beta,
            config: serde_json::Value::Null,
            watermark: None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// One line of a generated-output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedLine {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oracle_soft: bool,
}

impl GeneratedLine {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            oracle_soft: false,
        }
    }
}

pub fn parse_jsonl_texts(text: &str, source: &str) -> Result<Vec<GeneratedLine>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{source}:{}", i + 1), e)))
        .collect()
}

/// References from either a HotpotQA-format array (its questions) or an
/// `{id, text}` line file.
pub fn parse_references(text: &str, source: &str) -> Result<Vec<GeneratedLine>> {
    if text.trim_start().starts_with('[') {
        let (examples, _) = parse_hotpot(text, source)?;
        Ok(examples
            .into_iter()
            .map(|e| GeneratedLine::new(e.id, e.question))
            .collect())
    } else {
        parse_jsonl_texts(text, source)
    }
}

fn by_id(lines: Vec<GeneratedLine>, what: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for l in lines {
        if map.insert(l.id.clone(), l.text).is_some() {
            return Err(Error::Format(format!("duplicate id {} in {what}", l.id)));
        }
    }
    Ok(map)
}

/// Pairs candidates and references by id and scores them. Order of either
/// input does not matter.
pub fn evaluate_texts(generated: Vec<GeneratedLine>, references: Vec<GeneratedLine>, cfg: &MetricsConfig) -> Result<EvalReport> {
    let oracle = generated.iter().any(|l| l.oracle_soft);
    let gen = by_id(generated, "generated")?;
    let refs = by_id(references, "reference")?;
    let missing_generated: Vec<String> = refs.keys().filter(|k| !gen.contains_key(*k)).cloned().collect();
    let missing_reference: Vec<String> = gen.keys().filter(|k| !refs.contains_key(*k)).cloned().collect();
    if !missing_generated.is_empty() || !missing_reference.is_empty() {
        return Err(Error::IdMismatch {
            missing_generated,
            missing_reference,
        });
    }
    let (cands, rs): (Vec<Vec<String>>, Vec<Vec<String>>) = refs
        .iter()
        .map(|(id, r)| (tokenize(&gen[id]), tokenize(r)))
        .unzip();
    let mut report = EvalReport::from_tokens(&cands, &rs, cfg)?;
    if oracle {
        report.watermark = Some(ORACLE_WATERMARK.to_string());
    }
    Ok(report)
}

pub fn evaluate_corpus(generated: &Path, reference: &Path, cfg: &MetricsConfig) -> Result<EvalReport> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let gen = parse_jsonl_texts(&read(generated)?, &generated.display().to_string())?;
    let refs = parse_references(&read(reference)?, &reference.display().to_string())?;
    let mut report = evaluate_texts(gen, refs, cfg)?;
    let name = |p: &Path| p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    report.config = serde_json::json!({
        "generated": name(generated),
        "reference": name(reference),
        "rouge_beta": cfg.rouge_beta,
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn bleu3_hand_example() {
        let b = bleu(&[toks("the cat sat")], &[toks("the cat sat down")], 3).unwrap();
        assert!((b[2] - (-1.0f64 / 3.0).exp()).abs() < 1e-9);
        assert!((b[2] - 0.7165).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_disjoint() {
        let c = vec![toks("a b c d e"), toks("f g h i")];
        assert_eq!(bleu(&c, &c, 4).unwrap(), [1.0; 4]);
        let d = bleu(&[toks("x y z")], &[toks("a b c")], 1).unwrap();
        assert!(d[0] < 2e-9);
    }

    #[test]
    fn rouge_hand_example() {
        let f = rouge_l(&toks("a b c d"), &toks("a c d")).unwrap();
        assert!((f - 6.0 / 7.0).abs() < 1e-9);
        assert_eq!(rouge_l(&toks("a b"), &toks("c d")).unwrap(), 0.0);
        assert!(rouge_l(&toks(""), &toks("c d")).is_err());
    }

    #[test]
    fn empty_corpus_rejected() {
        let empty: Vec<Vec<String>> = Vec::new();
        assert!(matches!(bleu(&empty, &empty, 4), Err(Error::EmptyCorpus)));
    }

    fn line(id: &str, text: &str) -> GeneratedLine {
        GeneratedLine::new(id, text)
    }

    #[test]
    fn id_alignment() {
        let refs = vec![line("1", "who is he ?"), line("2", "where is it ?")];
        let gen = vec![line("2", "where is it ?"), line("1", "who is she ?")];
        let a = evaluate_texts(gen.clone(), refs.clone(), &MetricsConfig::default()).unwrap();
        let mut rev = gen.clone();
        rev.reverse();
        let b = evaluate_texts(rev, refs.clone(), &MetricsConfig::default()).unwrap();
        assert_eq!(a, b);
        let err = evaluate_texts(vec![gen[0].clone()], refs, &MetricsConfig::default()).unwrap_err();
        assert!(err.to_string().contains("\"1\""), "{err}");
    }

    #[test]
    fn oracle_outputs_watermark_the_report() {
        let refs = vec![line("a", "who is it ?")];
        let mut gen = refs.clone();
        assert!(evaluate_texts(gen.clone(), refs.clone(), &MetricsConfig::default()).unwrap().watermark.is_none());
        gen[0].oracle_soft = true;
        let r = evaluate_texts(gen, refs, &MetricsConfig::default()).unwrap();
        assert_eq!(r.watermark.as_deref(), Some(ORACLE_WATERMARK));
        assert!(r.to_json().contains("DIAGNOSTIC"));
    }

    #[test]
    fn self_evaluation_is_one() {
        let refs = vec![line("a", "Where is the mayor of Kalo located?"), line("b", "Who wrote it?")];
        let r = evaluate_texts(refs.clone(), refs, &MetricsConfig::default()).unwrap();
        assert_eq!((r.bleu_1, r.bleu_4, r.rouge_l), (1.0, 1.0, 1.0));
    }

    #[test]
    fn clipped_bigrams_can_beat_unigrams() {
        // p1 = 2/3 (one "e" clipped), p2 = 1, so BLEU-2 > BLEU-1.
        let b = bleu(&[toks("e a e")], &[toks("a e a")], 2).unwrap();
        assert!((b[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((b[1] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    fn corpus() -> impl Strategy<Value = Vec<(Vec<String>, Vec<String>)>> {
        let sent = prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..9)
            .prop_map(|v| v.into_iter().map(String::from).collect::<Vec<_>>());
        prop::collection::vec((sent.clone(), sent), 1..6)
    }

    proptest! {
        #[test]
        fn bleu_steps_follow_precisions(c in corpus()) {
            let (cands, refs): (Vec<_>, Vec<_>) = c.into_iter().unzip();
            let b = bleu(&cands, &refs, 4).unwrap();
            let p = modified_precisions(&cands, &refs, 4);
            let c_len: usize = cands.iter().map(Vec::len).sum();
            let r_len: usize = refs.iter().map(Vec::len).sum();
            let bp = brevity_penalty(c_len, r_len);
            for n in 1..4 {
                // BLEU drops at order n+1 exactly when p_{n+1} is below the
                // running geometric mean.
                let mean = b[n - 1] / bp;
                if p[n] <= mean * (1.0 - 1e-12) {
                    prop_assert!(b[n] <= b[n - 1]);
                }
                if p[n] >= mean * (1.0 + 1e-12) {
                    prop_assert!(b[n] >= b[n - 1]);
                }
            }
            prop_assert!(b.iter().all(|&x| (0.0..=1.0).contains(&x)));
            let r = corpus_rouge_l(&cands, &refs, 1.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
        }

        #[test]
        fn rouge_self_is_one(s in prop::collection::vec("[a-e]", 1..12)) {
            prop_assert_eq!(rouge_l(&s, &s).unwrap(), 1.0);
        }
    }
}
