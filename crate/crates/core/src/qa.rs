//! Extractive span predictor producing the start/end distributions behind
//! soft relevance, plus the line-delimited file format for plugging in
//! distributions computed elsewhere.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::attention::AttentionConfig;
use crate::data::{SourceEncoding, SEP};
use crate::error::{Error, Result};
use crate::layers::{normal_matrix, Dropout, Linear, INIT_STD};
use crate::model::{Encoder, EncoderCache};
use crate::numeric::optim::impl_params;
use crate::numeric::{Adam, AdamConfig, Matrix, Parameter, Rng};
use crate::relevance::{find_answer_spans, Span};

const NORM_TOL: f64 = 1e-9;

/// Start and end probabilities over the context segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanDistribution {
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
}

impl SpanDistribution {
    /// Validates equal lengths, non-negative entries and unit mass (±1e-9).
    pub fn new(p_start: Vec<f64>, p_end: Vec<f64>) -> Result<Self> {
        if p_start.len() != p_end.len() {
            return Err(Error::Length {
                what: "p_end vs p_start",
                expected: p_start.len(),
                found: p_end.len(),
            });
        }
        if p_start.is_empty() {
            return Err(Error::EmptySequence("span distribution"));
        }
        for (name, v) in [("p_start", &p_start), ("p_end", &p_end)] {
            if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::Format(format!("{name} has a negative or non-finite entry")));
            }
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > NORM_TOL {
                return Err(Error::Format(format!("{name} sums to {sum}, not 1")));
            }
        }
        Ok(Self { p_start, p_end })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        let v = vec![1.0 / n as f64; n];
        Self::new(v.clone(), v)
    }

    pub fn len(&self) -> usize {
        self.p_start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_start.is_empty()
    }

    pub fn argmax_start(&self) -> usize {
        argmax(&self.p_start)
    }

    pub fn argmax_end(&self) -> usize {
        argmax(&self.p_end)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// First exact occurrence of the answer in the context, if any.
pub fn gold_span(context: &[u32], answer: &[u32]) -> Option<Span> {
    find_answer_spans(context, answer).ok()?.into_iter().next()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for QaModelConfig {
    fn default() -> Self {
        Self::tiny(1000)
    }
}

impl QaModelConfig {
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            heads: 4,
            layers: 2,
            ffn_dim: 256,
            max_positions: 512,
            dropout: 0.1,
            seed: 0,
        }
    }

    pub fn grad_check(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 8,
            heads: 2,
            layers: 1,
            ffn_dim: 16,
            max_positions: 32,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        AttentionConfig {
            d_model: self.d_model,
            heads: self.heads,
        }
        .validate()?;
        if self.vocab_size == 0 || self.ffn_dim == 0 || self.layers == 0 || self.max_positions < 3 {
            return Err(Error::Config(
                "qa vocab_size, ffn_dim and layers must be positive, max_positions at least 3".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("qa dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Transformer encoder over `question ⊕ <sep> ⊕ context` with linear start
/// and end heads.
#[derive(Debug)]
pub struct QaModel {
    pub config: QaModelConfig,
    pub token_embedding: Parameter,
    pub encoder: Encoder,
    pub start_head: Linear,
    pub end_head: Linear,
    invocations: AtomicUsize,
}
impl_params!(QaModel { token_embedding, encoder, start_head, end_head });

impl Clone for QaModel {
    fn clone(&self) -> Self {
        Self {
            config: self.config,
            token_embedding: self.token_embedding.clone(),
            encoder: self.encoder.clone(),
            start_head: self.start_head.clone(),
            end_head: self.end_head.clone(),
            invocations: AtomicUsize::new(self.invocations()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaOutput {
    /// Covers the whole context given; positions cut by truncation get 0.
    pub dist: SpanDistribution,
    pub truncated: bool,
}

pub struct QaCache {
    encoder: EncoderCache,
    h: Matrix,
    offset: usize,
    kept: usize,
    pub output: QaOutput,
}

impl QaModel {
    pub fn init(config: QaModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let attention = AttentionConfig {
            d_model: config.d_model,
            heads: config.heads,
        };
        Ok(Self {
            config,
            token_embedding: Parameter::new(normal_matrix(config.vocab_size, config.d_model, INIT_STD, &mut rng)),
            encoder: Encoder::new(attention, config.layers, config.ffn_dim, config.max_positions, &mut rng)?,
            start_head: Linear::new(config.d_model, 1, &mut rng),
            end_head: Linear::new(config.d_model, 1, &mut rng),
            invocations: AtomicUsize::new(0),
        })
    }

    /// Number of forward passes run so far.
    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::Relaxed)
    }

    pub fn forward(&self, question: &[u32], context: &[u32], dropout: &mut Dropout<'_>) -> Result<QaCache> {
        if context.is_empty() {
            return Err(Error::EmptySequence("qa context"));
        }
        let offset = question.len() + 1;
        if offset >= self.config.max_positions {
            return Err(Error::Overlength {
                len: offset + 1,
                max: self.config.max_positions,
            });
        }
        self.invocations.fetch_add(1, Ordering::Relaxed);
        let kept = context.len().min(self.config.max_positions - offset);
        let mut ids = Vec::with_capacity(offset + kept);
        ids.extend_from_slice(question);
        ids.push(SEP);
        ids.extend_from_slice(&context[..kept]);
        let (h, encoder) = self.encoder.forward(&self.token_embedding.value, &ids, None, dropout)?;
        let ctx = h_rows(&h, offset, kept);
        let p_start = masked_softmax(self.start_head.forward(&ctx)?.data(), context.len());
        let p_end = masked_softmax(self.end_head.forward(&ctx)?.data(), context.len());
        Ok(QaCache {
            encoder,
            h,
            offset,
            kept,
            output: QaOutput {
                dist: SpanDistribution::new(p_start, p_end)?,
                truncated: kept < context.len(),
            },
        })
    }

    pub fn predict(&self, question: &[u32], context: &[u32]) -> Result<QaOutput> {
        Ok(self.forward(question, context, &mut Dropout::off())?.output)
    }

    /// Backpropagates gradients with respect to the start/end logits of the
    /// kept context positions.
    pub fn backward_logits(&mut self, cache: &QaCache, d_start: &[f64], d_end: &[f64]) -> Result<()> {
        let ctx = h_rows(&cache.h, cache.offset, cache.kept);
        let ds = Matrix::new(cache.kept, 1, d_start[..cache.kept].to_vec())?;
        let de = Matrix::new(cache.kept, 1, d_end[..cache.kept].to_vec())?;
        let mut dctx = self.start_head.backward(&ctx, &ds)?;
        dctx.add_assign(&self.end_head.backward(&ctx, &de)?)?;
        let mut dh = Matrix::zeros(cache.h.rows(), cache.h.cols());
        for i in 0..cache.kept {
            dh.row_mut(cache.offset + i).copy_from_slice(dctx.row(i));
        }
        self.encoder.backward(&cache.encoder, dh, &mut self.token_embedding.grad)
    }

    /// Backpropagates gradients with respect to the output probabilities.
    pub fn backward_probs(&mut self, cache: &QaCache, dp_start: &[f64], dp_end: &[f64]) -> Result<()> {
        let d = &cache.output.dist;
        let ds = softmax_vec_backward(&d.p_start[..cache.kept], &dp_start[..cache.kept]);
        let de = softmax_vec_backward(&d.p_end[..cache.kept], &dp_end[..cache.kept]);
        self.backward_logits(cache, &ds, &de)
    }

    /// `½·CE(start) + ½·CE(end)`, accumulating gradients scaled by `weight`.
    pub fn loss_and_backward(
        &mut self,
        question: &[u32],
        context: &[u32],
        gold: Span,
        weight: f64,
        dropout: &mut Dropout<'_>,
    ) -> Result<f64> {
        let cache = self.forward(question, context, dropout)?;
        if gold.start > gold.end || gold.end >= cache.kept {
            return Err(Error::SpanOutOfRange {
                start: gold.start,
                end: gold.end,
                context_len: cache.kept,
            });
        }
        let dist = &cache.output.dist;
        let loss = span_loss(dist, gold);
        let grad = |p: &[f64], target: usize| -> Vec<f64> {
            p[..cache.kept]
                .iter()
                .enumerate()
                .map(|(i, &v)| 0.5 * weight * (v - if i == target { 1.0 } else { 0.0 }))
                .collect()
        };
        let ds = grad(&dist.p_start, gold.start);
        let de = grad(&dist.p_end, gold.end);
        self.backward_logits(&cache, &ds, &de)?;
        Ok(loss)
    }
}

fn h_rows(h: &Matrix, offset: usize, n: usize) -> Matrix {
    let d = h.cols();
    Matrix::new(n, d, h.data()[offset * d..(offset + n) * d].to_vec()).expect("row slice")
}

/// Softmax over `logits`, zero-extended to `total` entries.
fn masked_softmax(logits: &[f64], total: usize) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    let mut out: Vec<f64> = exp.into_iter().map(|e| e / sum).collect();
    out.resize(total, 0.0);
    out
}

fn softmax_vec_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, di)| pi * (di - dot)).collect()
}

/// `½·(−ln p_start[s]) + ½·(−ln p_end[e])`.
pub fn span_loss(dist: &SpanDistribution, gold: Span) -> f64 {
    0.5 * (-dist.p_start[gold.start].ln() - dist.p_end[gold.end].ln())
}

pub fn qa_forward(model: &QaModel, question: &[u32], context: &[u32]) -> Result<SpanDistribution> {
    model.predict(question, context).map(|o| o.dist)
}

/// One QA training example: token ids and the gold span within `context`.
#[derive(Debug, Clone, PartialEq)]
pub struct QaExample {
    pub id: String,
    pub question: Vec<u32>,
    pub context: Vec<u32>,
    pub gold: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub accumulation: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for QaTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 8,
            accumulation: 1,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Mini-batch Adam training of a [`QaModel`].
pub struct QaTrainer {
    pub model: QaModel,
    pub adam: Adam,
    dropout_rng: Rng,
    accumulation: usize,
    pending: usize,
    pub steps: u64,
}

impl QaTrainer {
    pub fn new(model: QaModel, config: &QaTrainConfig) -> Self {
        Self {
            dropout_rng: Rng::new(config.seed).split(11),
            adam: Adam::new(AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            }),
            accumulation: config.accumulation.max(1),
            pending: 0,
            steps: 0,
            model,
        }
    }

    /// Mean loss of `batch`; the optimizer steps every `accumulation`
    /// batches.
    pub fn train_step(&mut self, batch: &[QaExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let weight = 1.0 / (batch.len() * self.accumulation) as f64;
        let rate = self.model.config.dropout;
        let mut total = 0.0;
        for ex in batch {
            let mut dropout = Dropout::new(rate, &mut self.dropout_rng);
            total += self
                .model
                .loss_and_backward(&ex.question, &ex.context, ex.gold, weight, &mut dropout)?;
        }
        self.pending += 1;
        if self.pending == self.accumulation {
            self.adam.step(&mut self.model)?;
            self.pending = 0;
            self.steps += 1;
        }
        Ok(total / batch.len() as f64)
    }

    /// Shuffled epochs over `examples`; returns the mean loss per epoch.
    pub fn fit(&mut self, examples: &[QaExample], config: &QaTrainConfig) -> Result<Vec<f64>> {
        if examples.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut order_rng = Rng::new(config.seed).split(12);
        let mut history = Vec::new();
        for epoch in 0..config.epochs {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            order_rng.shuffle(&mut order);
            let mut sum = 0.0;
            let mut n = 0;
            for chunk in order.chunks(config.batch_size.max(1)) {
                let batch: Vec<QaExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
                sum += self.train_step(&batch)? * batch.len() as f64;
                n += batch.len();
            }
            let mean = sum / n as f64;
            log::info!("qa epoch {} loss {mean:.5}", epoch + 1);
            history.push(mean);
        }
        Ok(history)
    }
}

/// First line of a span file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanFileHeader {
    pub version: u32,
    pub tokenizer_hash: String,
}

pub const SPAN_FILE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct SpanRecord {
    id: String,
    p_start: Vec<f64>,
    p_end: Vec<f64>,
}

/// Writes a header line and one `{id, p_start, p_end}` line per entry.
pub fn save_external_spans(path: &Path, tokenizer_hash: &str, spans: &BTreeMap<String, SpanDistribution>) -> Result<()> {
    let mut out = Vec::new();
    let header = SpanFileHeader {
        version: SPAN_FILE_VERSION,
        tokenizer_hash: tokenizer_hash.to_string(),
    };
    json_line(&mut out, &header)?;
    for (id, d) in spans {
        json_line(
            &mut out,
            &SpanRecord {
                id: id.clone(),
                p_start: d.p_start.clone(),
                p_end: d.p_end.clone(),
            },
        )?;
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

fn json_line<T: Serialize>(out: &mut Vec<u8>, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| Error::json("span file", e))?;
    out.push(b'\n');
    Ok(())
}

fn normalized(id: &str, name: &str, mut v: Vec<f64>) -> Result<Vec<f64>> {
    let reject = |reason: String| Error::SpanRecord {
        id: id.to_string(),
        reason,
    };
    if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(reject(format!("{name} has a negative or non-finite entry")));
    }
    let sum: f64 = v.iter().sum();
    let dev = (sum - 1.0).abs();
    if dev > 1e-3 {
        return Err(reject(format!("{name} mass {sum} deviates from 1 by more than 1e-3")));
    }
    if dev > NORM_TOL {
        if dev > 1e-6 {
            log::warn!("span record {id}: {name} mass {sum}, renormalizing");
        }
        v.iter_mut().for_each(|x| *x /= sum);
    }
    Ok(v)
}

/// Reads a span file, validating every record. Near-normalized vectors
/// are renormalized; anything else is rejected with the record id.
pub fn load_external_spans(path: &Path) -> Result<(SpanFileHeader, BTreeMap<String, SpanDistribution>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty span file", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: SpanFileHeader = serde_json::from_str(&first).map_err(|e| Error::json("span file header", e))?;
    if header.version != SPAN_FILE_VERSION {
        return Err(Error::Format(format!("unsupported span file version {}", header.version)));
    }
    let mut out = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SpanRecord = serde_json::from_str(&line).map_err(|e| Error::SpanRecord {
            id: format!("<line {}>", n + 2),
            reason: e.to_string(),
        })?;
        if rec.p_start.len() != rec.p_end.len() || rec.p_start.is_empty() {
            return Err(Error::SpanRecord {
                id: rec.id,
                reason: format!(
                    "p_start has {} entries, p_end {}",
                    rec.p_start.len(),
                    rec.p_end.len()
                ),
            });
        }
        let p_start = normalized(&rec.id, "p_start", rec.p_start)?;
        let p_end = normalized(&rec.id, "p_end", rec.p_end)?;
        let dist = SpanDistribution::new(p_start, p_end).map_err(|e| Error::SpanRecord {
            id: rec.id.clone(),
            reason: e.to_string(),
        })?;
        if out.insert(rec.id.clone(), dist).is_some() {
            return Err(Error::SpanRecord {
                id: rec.id,
                reason: "duplicate id".into(),
            });
        }
    }
    Ok((header, out))
}

/// Checks that each distribution covers exactly its example's context
/// segment.
pub fn check_span_lengths<'a>(
    spans: &BTreeMap<String, SpanDistribution>,
    encodings: impl IntoIterator<Item = (&'a str, &'a SourceEncoding)>,
) -> Result<()> {
    for (id, enc) in encodings {
        if let Some(d) = spans.get(id) {
            if d.len() != enc.context.len() {
                return Err(Error::SpanRecord {
                    id: id.to_string(),
                    reason: format!(
                        "distribution has {} entries, context segment has {}",
                        d.len(),
                        enc.context.len()
                    ),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::grad_check;
    use crate::relevance::build_soft_attention;
    use std::ops::Range;

    #[test]
    fn single_token_context_is_certain() {
        let m = QaModel::init(QaModelConfig::tiny(40)).unwrap();
        let d = qa_forward(&m, &[5, 6, 7], &[9]).unwrap();
        assert_eq!(d.p_start, [1.0]);
        assert_eq!(d.p_end, [1.0]);
    }

    #[test]
    fn random_model_is_normalized_and_interior() {
        let m = QaModel::init(QaModelConfig::tiny(40)).unwrap();
        let d = qa_forward(&m, &[5, 6], &[9, 10, 11, 12, 13]).unwrap();
        for v in [&d.p_start, &d.p_end] {
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(v.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn soft_attention_from_qa_has_mass_two() {
        let m = QaModel::init(QaModelConfig::tiny(40)).unwrap();
        let enc = SourceEncoding {
            ids: vec![9, 10, 11, 3, 12],
            context: 0..3,
            answer: 4..5,
            truncated: false,
        };
        let d = qa_forward(&m, &[5, 6], enc.context_ids()).unwrap();
        let a = build_soft_attention(&d, &enc).unwrap();
        assert!((a.sum() - 2.0).abs() < 1e-9);
        assert_eq!(a.scores()[3], 0.0);
    }

    #[test]
    fn truncation_cuts_context_tail_only() {
        let cfg = QaModelConfig {
            max_positions: 6,
            ..QaModelConfig::grad_check(30)
        };
        let m = QaModel::init(cfg).unwrap();
        let out = m.predict(&[5, 6], &[7, 8, 9, 10, 11]).unwrap();
        assert!(out.truncated);
        assert_eq!(out.dist.len(), 5);
        assert_eq!(&out.dist.p_start[3..], [0.0, 0.0]);
        assert!((out.dist.p_start.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(m.predict(&[5, 6, 7, 8, 9], &[7]).is_err());
    }

    #[test]
    fn uniform_loss_is_log_n() {
        let d = SpanDistribution::uniform(7).unwrap();
        assert!((span_loss(&d, Span::new(2, 4)) - 7f64.ln()).abs() < 1e-12);
        let perfect = SpanDistribution::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(span_loss(&perfect, Span::new(1, 1)), 0.0);
    }

    #[test]
    fn gold_out_of_range_rejected() {
        let mut m = QaModel::init(QaModelConfig::grad_check(30)).unwrap();
        let err = m
            .loss_and_backward(&[5], &[6, 7], Span::new(1, 2), 1.0, &mut Dropout::off())
            .unwrap_err();
        assert!(matches!(err, Error::SpanOutOfRange { .. }));
    }

    #[test]
    fn gradient_check_span_loss() {
        let mut m = QaModel::init(QaModelConfig::grad_check(30)).unwrap();
        let mut rng = Rng::new(2);
        crate::numeric::jitter_params(&mut m, 0.3, &mut rng);
        let loss = |m: &mut QaModel, grad: bool| -> Result<f64> {
            if grad {
                m.loss_and_backward(&[5, 6], &[7, 8, 9, 10], Span::new(1, 2), 1.0, &mut Dropout::off())
            } else {
                Ok(span_loss(&qa_forward(m, &[5, 6], &[7, 8, 9, 10])?, Span::new(1, 2)))
            }
        };
        let r = grad_check(&mut m, loss, 300, 1e-5, &mut rng).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn gradient_check_through_probabilities() {
        let mut m = QaModel::init(QaModelConfig::grad_check(30)).unwrap();
        let mut rng = Rng::new(5);
        crate::numeric::jitter_params(&mut m, 0.3, &mut rng);
        let w: Vec<f64> = (0..4).map(|_| rng.normal(0.0, 1.0)).collect();
        let objective = |d: &SpanDistribution| -> f64 {
            d.p_start.iter().zip(&d.p_end).zip(&w).map(|((s, e), w)| w * (s + e)).sum()
        };
        let loss = |m: &mut QaModel, grad: bool| -> Result<f64> {
            let cache = m.forward(&[5], &[7, 8, 9, 10], &mut Dropout::off())?;
            let l = objective(&cache.output.dist);
            if grad {
                m.backward_probs(&cache, &w, &w)?;
            }
            Ok(l)
        };
        let r = grad_check(&mut m, loss, 300, 1e-5, &mut rng).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn overfits_one_example() {
        let cfg = QaModelConfig {
            dropout: 0.0,
            ..QaModelConfig::tiny(40)
        };
        let ex = QaExample {
            id: "a".into(),
            question: vec![5, 6, 7],
            context: vec![10, 11, 12, 13, 14, 15, 16],
            gold: Span::new(3, 4),
        };
        let mut t = QaTrainer::new(QaModel::init(cfg).unwrap(), &QaTrainConfig::default());
        for _ in 0..60 {
            t.train_step(std::slice::from_ref(&ex)).unwrap();
        }
        let d = qa_forward(&t.model, &ex.question, &ex.context).unwrap();
        assert_eq!((d.argmax_start(), d.argmax_end()), (3, 4));
    }

    fn tmp_spans(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"version":1,"tokenizer_hash":"h"}}"#).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn span_file_round_trip() {
        let m = QaModel::init(QaModelConfig::tiny(40)).unwrap();
        let mut map = BTreeMap::new();
        map.insert("x".to_string(), qa_forward(&m, &[5], &[9, 10, 11]).unwrap());
        map.insert("y".to_string(), qa_forward(&m, &[6, 7], &[12, 13]).unwrap());
        let f = tempfile::NamedTempFile::new().unwrap();
        save_external_spans(f.path(), "hash", &map).unwrap();
        let (header, back) = load_external_spans(f.path()).unwrap();
        assert_eq!(header.tokenizer_hash, "hash");
        assert_eq!(back, map);
    }

    #[test]
    fn span_file_validation() {
        let f = tmp_spans(&[r#"{"id":"ok","p_start":[0.5,0.5],"p_end":[0.25,0.75]}"#.into()]);
        assert_eq!(load_external_spans(f.path()).unwrap().1.len(), 1);

        let f = tmp_spans(&[r#"{"id":"near","p_start":[0.5,0.5001],"p_end":[0.25,0.75]}"#.into()]);
        let (_, m) = load_external_spans(f.path()).unwrap();
        assert!((m["near"].p_start.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let f = tmp_spans(&[r#"{"id":"bad","p_start":[0.5,0.6],"p_end":[0.25,0.75]}"#.into()]);
        let err = load_external_spans(f.path()).unwrap_err().to_string();
        assert!(err.contains("bad"), "{err}");

        let f = tmp_spans(&[r#"{"id":"neg","p_start":[1.5,-0.5],"p_end":[0.25,0.75]}"#.into()]);
        assert!(load_external_spans(f.path()).unwrap_err().to_string().contains("neg"));

        let f = tmp_spans(&[r#"{"id":"short","p_start":[1.0],"p_end":[0.25,0.75]}"#.into()]);
        assert!(load_external_spans(f.path()).unwrap_err().to_string().contains("short"));
    }

    #[test]
    fn span_length_checked_against_encoding() {
        let mut map = BTreeMap::new();
        map.insert("e1".to_string(), SpanDistribution::uniform(3).unwrap());
        let enc = |context: Range<usize>| SourceEncoding {
            ids: vec![9; 6],
            context,
            answer: 5..6,
            truncated: false,
        };
        let good = enc(0..3);
        assert!(check_span_lengths(&map, [("e1", &good)]).is_ok());
        let bad = enc(0..4);
        let err = check_span_lengths(&map, [("e1", &bad)]).unwrap_err().to_string();
        assert!(err.contains("e1"), "{err}");
    }

    #[test]
    fn counts_invocations() {
        let m = QaModel::init(QaModelConfig::grad_check(30)).unwrap();
        assert_eq!(m.invocations(), 0);
        m.predict(&[5], &[6, 7]).unwrap();
        assert_eq!(m.invocations(), 1);
    }
}
