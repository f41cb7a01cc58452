use crate::attention::{key_padding_mask, DecoderLayerState, KeyValues};
use crate::data::{PAD, START};
use crate::error::{Error, Result};
use crate::layers::{normal_matrix, Dropout, INIT_STD};
use crate::model::config::ModelConfig;
use crate::model::decoder::{Decoder, DecoderCache};
use crate::model::encoder::{Encoder, EncoderCache};
use crate::numeric::optim::impl_params;
use crate::numeric::{log_softmax, Mask, Matrix, Parameter, Rng};
use crate::relevance::RelevanceVector;

/// Encoder–decoder question generator with relevance-biased
/// cross-attention. The token table is shared by both embeddings and the
/// output projection.
#[derive(Debug, Clone)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub token_embedding: Parameter,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub final_logits_bias: Parameter,
}
impl_params!(Seq2Seq { token_embedding, encoder, decoder, final_logits_bias });

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub h_enc: Matrix,
    pub pad_mask: Vec<bool>,
}

impl EncoderOutput {
    fn cross_mask(&self, rows: usize) -> Option<Mask> {
        self.pad_mask
            .iter()
            .any(|&p| p)
            .then(|| key_padding_mask(rows, &self.pad_mask))
    }
}

pub struct ForwardCache {
    encoder: EncoderCache,
    decoder: DecoderCache,
    h_dec: Matrix,
    pub states: Vec<DecoderLayerState>,
}

impl ForwardCache {
    /// Cross-attention weights per layer and head, `[target × source]`.
    pub fn cross_weights(&self) -> Vec<&[Matrix]> {
        self.decoder.layers.iter().map(|l| l.cross_weights()).collect()
    }
}

/// Gradients that leave the model: the relevance vector's.
pub struct BackwardOutput {
    pub d_bias: Vec<f64>,
}

impl Seq2Seq {
    /// Seeded initialisation: normal(0, 0.02) weights and embeddings, zero
    /// biases, unit gains.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let attention = config.attention();
        let token_embedding = Parameter::new(normal_matrix(
            config.vocab_size,
            config.d_model,
            INIT_STD,
            &mut rng,
        ));
        let encoder = Encoder::new(
            attention,
            config.encoder_layers,
            config.ffn_dim,
            config.max_positions,
            &mut rng,
        )?;
        let decoder = Decoder::new(
            attention,
            config.decoder_layers,
            config.ffn_dim,
            config.max_positions,
            &mut rng,
        )?;
        Ok(Self {
            config,
            token_embedding,
            encoder,
            decoder,
            final_logits_bias: Parameter::new(Matrix::zeros(1, config.vocab_size)),
        })
    }

    fn check_bias(&self, source_len: usize, bias: &RelevanceVector) -> Result<()> {
        if bias.len() != source_len {
            return Err(Error::Length {
                what: "relevance vector vs source length",
                expected: source_len,
                found: bias.len(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, source: &[u32], pad: Option<&[bool]>) -> Result<EncoderOutput> {
        if source.is_empty() {
            return Err(Error::EmptySequence("source"));
        }
        let (h_enc, _) = self
            .encoder
            .forward(&self.token_embedding.value, source, pad, &mut Dropout::off())?;
        Ok(EncoderOutput {
            h_enc,
            pad_mask: pad.map_or_else(|| vec![false; source.len()], <[bool]>::to_vec),
        })
    }

    fn project_logits(&self, h: &Matrix) -> Result<Matrix> {
        let mut logits = h.matmul_nt(&self.token_embedding.value)?;
        logits.add_row_broadcast(self.final_logits_bias.value.data())?;
        Ok(logits)
    }

    /// Teacher-forced pass: logits `[target_in × vocab]` for each position
    /// of `target_in`.
    pub fn forward(
        &self,
        source: &[u32],
        pad: Option<&[bool]>,
        target_in: &[u32],
        bias: &RelevanceVector,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Matrix, ForwardCache)> {
        if source.is_empty() {
            return Err(Error::EmptySequence("source"));
        }
        if target_in.is_empty() {
            return Err(Error::EmptyTarget);
        }
        self.check_bias(source.len(), bias)?;
        let table = &self.token_embedding.value;
        let (h_enc, encoder) = self.encoder.forward(table, source, pad, dropout)?;
        let cross_mask = match pad {
            Some(p) if p.iter().any(|&b| b) => Some(key_padding_mask(target_in.len(), p)),
            _ => None,
        };
        let (h_dec, decoder, states) = self.decoder.forward(
            table,
            target_in,
            &h_enc,
            cross_mask.as_ref(),
            bias.scores(),
            dropout,
        )?;
        let logits = self.project_logits(&h_dec)?;
        Ok((
            logits,
            ForwardCache {
                encoder,
                decoder,
                h_dec,
                states,
            },
        ))
    }

    /// Accumulates parameter gradients for `dlogits` and returns the
    /// gradient with respect to the relevance vector.
    pub fn backward(&mut self, cache: &ForwardCache, dlogits: &Matrix) -> Result<BackwardOutput> {
        for (g, s) in self
            .final_logits_bias
            .grad
            .data_mut()
            .iter_mut()
            .zip(dlogits.column_sums())
        {
            *g += s;
        }
        dlogits.accumulate_tn(&cache.h_dec, &mut self.token_embedding.grad)?;
        let dh = dlogits.matmul(&self.token_embedding.value)?;
        let dec = self
            .decoder
            .backward(&cache.decoder, dh, &mut self.token_embedding.grad)?;
        self.encoder
            .backward(&cache.encoder, dec.d_memory, &mut self.token_embedding.grad)?;
        Ok(BackwardOutput { d_bias: dec.d_bias })
    }

    /// Next-token logits after `prefix` (which starts with the start token).
    pub fn decode_step(&self, prefix: &[u32], enc: &EncoderOutput, bias: &RelevanceVector) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(Error::EmptySequence("decoder prefix"));
        }
        self.check_bias(enc.h_enc.rows(), bias)?;
        let memory = self.cross_memory(enc)?;
        let mask = enc.cross_mask(prefix.len());
        let (h, _) = self.decoder.forward_cached(
            &self.token_embedding.value,
            prefix,
            &memory,
            mask.as_ref(),
            bias.scores(),
        )?;
        let last = h.row(h.rows() - 1).to_vec();
        Ok(self.project_logits(&Matrix::row_vector(&last))?.into_data())
    }

    /// Hidden states of every decoder layer for a full target prefix.
    pub fn decoder_states(
        &self,
        source: &[u32],
        pad: Option<&[bool]>,
        target_in: &[u32],
        bias: &RelevanceVector,
    ) -> Result<Vec<DecoderLayerState>> {
        let (_, cache) = self.forward(source, pad, target_in, bias, &mut Dropout::off())?;
        Ok(cache.states)
    }

    /// Cross-attention per decoder layer, averaged over heads and target
    /// positions: one weight per source token.
    pub fn mean_cross_attention(
        &self,
        source: &[u32],
        target_in: &[u32],
        bias: &RelevanceVector,
    ) -> Result<Vec<Vec<f64>>> {
        let (_, cache) = self.forward(source, None, target_in, bias, &mut Dropout::off())?;
        Ok(cache
            .cross_weights()
            .into_iter()
            .map(|heads| {
                let mut mean = vec![0.0; source.len()];
                let n = (heads.len() * target_in.len()) as f64;
                for h in heads {
                    for (m, s) in mean.iter_mut().zip(h.column_sums()) {
                        *m += s / n;
                    }
                }
                mean
            })
            .collect())
    }

    fn cross_memory(&self, enc: &EncoderOutput) -> Result<Vec<KeyValues>> {
        self.decoder
            .layers
            .iter()
            .map(|l| l.cross_attn.project_kv(&enc.h_enc, &enc.h_enc))
            .collect()
    }

    /// Incremental decoding state for one source.
    pub fn session(&self, source: &[u32], bias: &RelevanceVector) -> Result<DecodeSession<'_>> {
        let enc = self.encode(source, None)?;
        self.check_bias(source.len(), bias)?;
        Ok(DecodeSession {
            memory: self.cross_memory(&enc)?,
            bias: bias.scores().to_vec(),
            model: self,
        })
    }
}

/// Encoder output projected once per decoder layer, shared by every
/// hypothesis decoded from the same source.
pub struct DecodeSession<'m> {
    model: &'m Seq2Seq,
    memory: Vec<KeyValues>,
    bias: Vec<f64>,
}

/// Per-hypothesis self-attention keys and values.
#[derive(Debug, Clone)]
pub struct DecodeState {
    layers: Vec<KeyValues>,
}

impl DecodeState {
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |kv| kv.keys.rows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl DecodeSession<'_> {
    pub fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    /// Feeds `token`, returning the extended state and the next-token
    /// log-probabilities.
    pub fn advance(&self, state: &DecodeState, token: u32) -> Result<(DecodeState, Vec<f64>)> {
        let mut next = state.clone();
        let h = self.model.decoder.step(
            &self.model.token_embedding.value,
            token,
            &mut next.layers,
            &self.memory,
            None,
            &self.bias,
        )?;
        let logits = self.model.project_logits(&h)?;
        Ok((next, log_softmax(logits.data())))
    }

    /// State after the start token.
    pub fn start(&self) -> Result<(DecodeState, Vec<f64>)> {
        let empty = DecodeState {
            layers: self.model.decoder.start_state(),
        };
        self.advance(&empty, START)
    }
}

/// Next-token log-probabilities from full recomputation; used to check the
/// incremental path.
pub fn prefix_log_probs(model: &Seq2Seq, source: &[u32], prefix: &[u32], bias: &RelevanceVector) -> Result<Vec<f64>> {
    let enc = model.encode(source, None)?;
    debug_assert!(prefix.first() == Some(&START) && !prefix.contains(&PAD));
    Ok(log_softmax(&model.decode_step(prefix, &enc, bias)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Params;
    use crate::numeric::cross_entropy_loss;

    fn bias_for(n: usize, rng: &mut Rng) -> RelevanceVector {
        RelevanceVector::new(
            (0..n).map(|_| rng.normal(0.0, 1.0)).collect(),
            crate::relevance::RelevanceKind::Mixed,
        )
    }

    fn closed_form_count(c: &ModelConfig) -> usize {
        let d = c.d_model;
        let attn = 4 * (d * d + d);
        let ln = 2 * d;
        let ffn = d * c.ffn_dim + c.ffn_dim + c.ffn_dim * d + d;
        let emb = c.max_positions * d + ln;
        let enc_layer = attn + ln + ffn + ln;
        let dec_layer = 2 * attn + 3 * ln + ffn;
        c.vocab_size * d
            + c.vocab_size
            + 2 * emb
            + c.encoder_layers * enc_layer
            + c.decoder_layers * dec_layer
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let cfg = ModelConfig::tiny(1000);
        let m = Seq2Seq::init(cfg).unwrap();
        assert_eq!(m.param_count(), closed_form_count(&cfg));
        assert_eq!(m.param_count(), 364_264);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::grad_check(20);
        let a = Seq2Seq::init(cfg).unwrap();
        let b = Seq2Seq::init(cfg).unwrap();
        let c = Seq2Seq::init(ModelConfig { seed: 1, ..cfg }).unwrap();
        let flat = |m: &Seq2Seq| -> Vec<u64> {
            m.named_params()
                .iter()
                .flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect()
        };
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }

    #[test]
    fn initial_loss_near_log_vocab() {
        let cfg = ModelConfig {
            dropout: 0.0,
            ..ModelConfig::tiny(500)
        };
        let m = Seq2Seq::init(cfg).unwrap();
        let mut rng = Rng::new(3);
        let src: Vec<u32> = (0..12).map(|_| 5 + rng.below(495) as u32).collect();
        let tgt: Vec<u32> = (0..10).map(|_| 5 + rng.below(495) as u32).collect();
        let (logits, _) = m
            .forward(&src, None, &tgt[..9], &RelevanceVector::zeros(12), &mut Dropout::off())
            .unwrap();
        let (loss, _) = cross_entropy_loss(&logits, &tgt[1..], PAD).unwrap();
        assert!((loss - 500f64.ln()).abs() < 0.2, "{loss}");
    }

    #[test]
    fn constant_bias_shift_leaves_logits() {
        let m = Seq2Seq::init(ModelConfig::tiny(60)).unwrap();
        let mut rng = Rng::new(9);
        let src = [7, 8, 9, 10, 3, 11];
        let a = bias_for(6, &mut rng);
        let (l0, _) = m.forward(&src, None, &[1, 12, 13], &a, &mut Dropout::off()).unwrap();
        let (l1, _) = m
            .forward(&src, None, &[1, 12, 13], &a.shifted(-3.7), &mut Dropout::off())
            .unwrap();
        assert!(l0.max_abs_diff(&l1) < 1e-10);
    }

    #[test]
    fn causal_prefix_states_unchanged() {
        let m = Seq2Seq::init(ModelConfig::tiny(60)).unwrap();
        let src = [7, 8, 9, 3, 11];
        let a = RelevanceVector::zeros(5);
        let (short, _) = m.forward(&src, None, &[1, 20, 21], &a, &mut Dropout::off()).unwrap();
        let (long, _) = m
            .forward(&src, None, &[1, 20, 21, 40, 41], &a, &mut Dropout::off())
            .unwrap();
        assert!(short.max_abs_diff(&long.take_rows(3)) == 0.0);
    }

    #[test]
    fn padded_source_ids_do_not_matter() {
        let m = Seq2Seq::init(ModelConfig::tiny(60)).unwrap();
        let pad = [false, false, false, false, true, true];
        let a = RelevanceVector::zeros(6);
        let run = |src: &[u32]| {
            m.forward(src, Some(&pad), &[1, 20, 21], &a, &mut Dropout::off())
                .unwrap()
                .0
        };
        let x = run(&[7, 8, 3, 11, 0, 0]);
        let y = run(&[7, 8, 3, 11, 33, 58]);
        assert_eq!(x.max_abs_diff(&y), 0.0);
    }

    #[test]
    fn incremental_matches_full_recompute() {
        let m = Seq2Seq::init(ModelConfig::tiny(60)).unwrap();
        let mut rng = Rng::new(4);
        let src = [7, 8, 9, 10, 3, 11];
        let a = bias_for(6, &mut rng);
        let session = m.session(&src, &a).unwrap();
        let (mut state, mut lp) = session.start().unwrap();
        let mut prefix = vec![START];
        for tok in [20, 21, 22, 2] {
            let full = prefix_log_probs(&m, &src, &prefix, &a).unwrap();
            let diff = full.iter().zip(&lp).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "{diff}");
            prefix.push(tok);
            (state, lp) = session.advance(&state, tok).unwrap();
        }
        assert_eq!(state.len(), 5);
    }

    #[test]
    fn bias_length_checked() {
        let m = Seq2Seq::init(ModelConfig::grad_check(20)).unwrap();
        let err = m
            .forward(&[5, 6, 3, 7], None, &[1], &RelevanceVector::zeros(3), &mut Dropout::off())
            .err()
            .unwrap();
        assert!(matches!(err, Error::Length { .. }));
    }

    #[test]
    fn full_gradient_check() {
        let cfg = ModelConfig::grad_check(12);
        let mut model = Seq2Seq::init(cfg).unwrap();
        let mut rng = Rng::new(21);
        crate::numeric::jitter_params(&mut model, 0.3, &mut rng);
        let src = [5u32, 6, 7, 8, 3, 9];
        let a = bias_for(6, &mut rng);
        let tgt = [1u32, 10, 11, 5, 2];
        let loss = |m: &mut Seq2Seq, grad: bool| -> Result<f64> {
            let (logits, cache) = m.forward(&src, None, &tgt[..4], &a, &mut Dropout::off())?;
            let (l, dl) = cross_entropy_loss(&logits, &tgt[1..], PAD)?;
            if grad {
                m.backward(&cache, &dl)?;
            }
            Ok(l)
        };
        let report = crate::numeric::grad_check(&mut model, loss, 400, 1e-5, &mut rng).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
        assert!(report.checked >= 200);
    }
}
