use serde::{Deserialize, Serialize};

use crate::data::{SourceEncoding, PAD};
use crate::error::{Error, Result};
use crate::layers::Dropout;
use crate::model::Seq2Seq;
use crate::numeric::{cross_entropy_loss, Adam, AdamConfig, Rng};
use crate::qa::QaModel;
use crate::relevance::{build_soft_attention, mix_attention, RelevanceKind, RelevanceVector};

/// One generator training pair. `target` runs from the start token to the
/// end token inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub id: String,
    pub source: SourceEncoding,
    pub target: Vec<u32>,
    pub relevance: RelevanceVector,
    /// Question ids and hard relevance, kept for the joint QA path.
    pub joint: Option<JointInputs>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointInputs {
    pub question: Vec<u32>,
    pub hard: RelevanceVector,
}

pub type Batch = [TrainExample];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub accumulation: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 8,
            accumulation: 4,
            lr: 3e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.accumulation == 0 {
            return Err(Error::Config("batch_size and accumulation must be positive".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// Optional QA model trained together with the generator through the soft
/// side of the relevance mix.
pub struct JointQa {
    pub model: QaModel,
    pub adam: Adam,
    pub alpha: f64,
}

/// Teacher-forced trainer with gradient accumulation.
pub struct Trainer {
    pub model: Seq2Seq,
    pub adam: Adam,
    pub joint: Option<JointQa>,
    dropout_rng: Rng,
    accumulation: usize,
    pending: usize,
    pub steps: u64,
}

impl Trainer {
    pub fn new(model: Seq2Seq, config: &TrainConfig) -> Self {
        Self {
            dropout_rng: Rng::new(config.seed).split(1),
            adam: Adam::new(AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            }),
            joint: None,
            accumulation: config.accumulation.max(1),
            pending: 0,
            steps: 0,
            model,
        }
    }

    pub fn dropout_rng(&self) -> &Rng {
        &self.dropout_rng
    }

    pub fn set_dropout_rng(&mut self, rng: Rng) {
        self.dropout_rng = rng;
    }

    /// Micro-batches seen since the last optimizer update.
    pub fn pending(&self) -> usize {
        self.pending
    }

    /// Token-weighted loss of `batch` without touching gradients.
    pub fn evaluate_loss(&self, batch: &Batch) -> Result<f64> {
        let mut nll = 0.0;
        let mut tokens = 0usize;
        for ex in batch {
            let (input, output) = split_target(&ex.target)?;
            let (logits, _) =
                self.model
                    .forward(&ex.source.ids, None, input, &ex.relevance, &mut Dropout::off())?;
            let (loss, _) = cross_entropy_loss(&logits, output, PAD)?;
            let n = output.iter().filter(|&&t| t != PAD).count();
            nll += loss * n as f64;
            tokens += n;
        }
        Ok(nll / tokens as f64)
    }

    /// Accumulates gradients of the mean token loss over `batch` and steps
    /// the optimizer on accumulation boundaries. Returns the batch loss.
    pub fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let counts = batch
            .iter()
            .map(|ex| split_target(&ex.target).map(|(_, out)| out.iter().filter(|&&t| t != PAD).count()))
            .collect::<Result<Vec<_>>>()?;
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::AllPad);
        }
        let rate = self.model.config.dropout;
        let mut nll = 0.0;
        for (ex, &count) in batch.iter().zip(&counts) {
            let (input, output) = split_target(&ex.target)?;
            let weight = count as f64 / (total * self.accumulation) as f64;

            let qa_cache = match (&self.joint, &ex.joint) {
                (Some(j), Some(inputs)) if j.alpha < 1.0 => {
                    let mut dropout = Dropout::new(j.model.config.dropout, &mut self.dropout_rng);
                    let cache = j
                        .model
                        .forward(&inputs.question, ex.source.context_ids(), &mut dropout)?;
                    let soft = build_soft_attention(&cache.output.dist, &ex.source)?;
                    Some((cache, mix_attention(&inputs.hard, &soft, j.alpha)?))
                }
                _ => None,
            };
            let relevance = qa_cache.as_ref().map_or(&ex.relevance, |(_, a)| a);

            let mut dropout = Dropout::new(rate, &mut self.dropout_rng);
            let (logits, cache) = self
                .model
                .forward(&ex.source.ids, None, input, relevance, &mut dropout)?;
            let (loss, mut dlogits) = cross_entropy_loss(&logits, output, PAD)?;
            nll += loss * count as f64;
            dlogits.scale(weight);
            let back = self.model.backward(&cache, &dlogits)?;

            if let (Some((qa, _)), Some(j)) = (qa_cache, self.joint.as_mut()) {
                let ctx = ex.source.context.clone();
                let dp: Vec<f64> = back.d_bias[ctx].iter().map(|g| g * (1.0 - j.alpha)).collect();
                j.model.backward_probs(&qa, &dp, &dp)?;
            }
        }
        self.pending += 1;
        if self.pending == self.accumulation {
            self.adam.step(&mut self.model)?;
            if let Some(j) = self.joint.as_mut() {
                j.adam.step(&mut j.model)?;
            }
            self.pending = 0;
            self.steps += 1;
        }
        Ok(nll / total as f64)
    }

    /// Applies any partially accumulated gradient.
    pub fn flush(&mut self) -> Result<()> {
        if self.pending > 0 {
            self.adam.step(&mut self.model)?;
            if let Some(j) = self.joint.as_mut() {
                j.adam.step(&mut j.model)?;
            }
            self.pending = 0;
            self.steps += 1;
        }
        Ok(())
    }
}

fn split_target(target: &[u32]) -> Result<(&[u32], &[u32])> {
    if target.len() < 2 {
        return Err(Error::EmptyTarget);
    }
    Ok((&target[..target.len() - 1], &target[1..]))
}

/// Relevance for a training example: `α·hard + (1−α)·soft`, hard only when
/// `α = 1` or no soft side is available.
pub fn training_relevance(
    hard: &RelevanceVector,
    soft: Option<&RelevanceVector>,
    alpha: f64,
) -> Result<RelevanceVector> {
    match soft {
        Some(s) if alpha < 1.0 => mix_attention(hard, s, alpha),
        _ => {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::AlphaOutOfRange(alpha));
            }
            Ok(RelevanceVector::new(hard.scores().to_vec(), RelevanceKind::Hard))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{END, START};
    use crate::model::ModelConfig;
    use crate::qa::QaModelConfig;

    fn example(src: Vec<u32>, tgt: Vec<u32>) -> TrainExample {
        let n = src.len();
        TrainExample {
            id: "t".into(),
            source: SourceEncoding {
                context: 0..n - 2,
                answer: n - 1..n,
                ids: src,
                truncated: false,
            },
            target: tgt,
            relevance: RelevanceVector::zeros(n),
            joint: None,
        }
    }

    #[test]
    fn overfits_single_example() {
        let cfg = ModelConfig {
            dropout: 0.0,
            ..ModelConfig::tiny(40)
        };
        let tc = TrainConfig {
            lr: 2e-3,
            accumulation: 1,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(Seq2Seq::init(cfg).unwrap(), &tc);
        let ex = example(vec![10, 11, 12, 3, 13], vec![START, 20, 21, 22, 23, END]);
        let mut loss = f64::INFINITY;
        for _ in 0..300 {
            loss = t.train_step(std::slice::from_ref(&ex)).unwrap();
        }
        assert!(loss < 0.05, "{loss}");
    }

    #[test]
    fn accumulation_defers_updates() {
        let cfg = ModelConfig::grad_check(30);
        let mut t = Trainer::new(Seq2Seq::init(cfg).unwrap(), &TrainConfig::default());
        let before = t.model.token_embedding.value.clone();
        let ex = example(vec![10, 11, 12, 3, 13], vec![START, 20, END]);
        for i in 0..3 {
            t.train_step(std::slice::from_ref(&ex)).unwrap();
            assert_eq!(t.pending(), i + 1);
        }
        assert_eq!(t.model.token_embedding.value, before);
        t.train_step(std::slice::from_ref(&ex)).unwrap();
        assert_eq!(t.steps, 1);
        assert_ne!(t.model.token_embedding.value, before);
    }

    #[test]
    fn empty_target_rejected() {
        let mut t = Trainer::new(Seq2Seq::init(ModelConfig::grad_check(30)).unwrap(), &TrainConfig::default());
        let ex = example(vec![10, 11, 12, 3, 13], vec![START]);
        assert!(matches!(t.train_step(&[ex]), Err(Error::EmptyTarget)));
    }

    #[test]
    fn deterministic_loss_trajectory() {
        let run = || {
            let mut t = Trainer::new(
                Seq2Seq::init(ModelConfig::tiny(40)).unwrap(),
                &TrainConfig {
                    lr: 1e-3,
                    accumulation: 1,
                    ..TrainConfig::default()
                },
            );
            let ex = example(vec![10, 11, 12, 3, 13], vec![START, 20, 21, END]);
            (0..5)
                .map(|_| t.train_step(std::slice::from_ref(&ex)).unwrap().to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn joint_path_updates_qa() {
        let cfg = ModelConfig::grad_check(30);
        let mut t = Trainer::new(
            Seq2Seq::init(cfg).unwrap(),
            &TrainConfig {
                accumulation: 1,
                ..TrainConfig::default()
            },
        );
        let qa = QaModel::init(QaModelConfig::grad_check(30)).unwrap();
        let before = qa.start_head.weight.value.clone();
        t.joint = Some(JointQa {
            model: qa,
            adam: Adam::new(AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            }),
            alpha: 0.3,
        });
        let mut ex = example(vec![10, 11, 12, 3, 13], vec![START, 20, END]);
        ex.joint = Some(JointInputs {
            question: vec![20, 21],
            hard: RelevanceVector::new(vec![0.0, 1.0, 0.0, 0.0, 0.0], RelevanceKind::Hard),
        });
        t.train_step(&[ex]).unwrap();
        let j = t.joint.as_ref().unwrap();
        assert_eq!(j.model.invocations(), 1);
        assert_ne!(j.model.start_head.weight.value, before);
    }
}
