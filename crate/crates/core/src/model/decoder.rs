use crate::attention::{
    causal_mask, AttentionCache, AttentionConfig, DecoderLayerState, KeyValues, MultiHeadAttention,
};
use crate::error::Result;
use crate::layers::{dropout_backward, Dropout, FeedForward, FeedForwardCache, LayerNorm};
use crate::model::encoder::{EmbeddingCache, PositionalEmbedding};
use crate::numeric::optim::impl_params;
use crate::numeric::{LayerNormCache, Mask, Matrix, Rng};

/// Post-norm decoder layer:
/// causal self-attention → add & norm → biased cross-attention → add & norm
/// → FFN → add & norm.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub self_norm: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub cross_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}
impl_params!(DecoderLayer { self_attn, self_norm, cross_attn, cross_norm, ffn, ffn_norm });

pub struct DecoderLayerCache {
    self_attn: AttentionCache,
    self_drop: Option<Vec<f64>>,
    self_norm: LayerNormCache,
    cross_attn: AttentionCache,
    cross_drop: Option<Vec<f64>>,
    cross_norm: LayerNormCache,
    ffn: FeedForwardCache,
    ffn_drop: Option<Vec<f64>>,
    ffn_norm: LayerNormCache,
}

impl DecoderLayerCache {
    /// Cross-attention weights per head, `[target × source]`.
    pub fn cross_weights(&self) -> &[Matrix] {
        &self.cross_attn.probs
    }
}

pub struct DecoderLayerGrads {
    pub d_input: Matrix,
    pub d_memory: Matrix,
    pub d_bias: Vec<f64>,
}

impl DecoderLayer {
    pub fn new(config: AttentionConfig, ffn_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::new(config, rng)?,
            self_norm: LayerNorm::new(config.d_model),
            cross_attn: MultiHeadAttention::new(config, rng)?,
            cross_norm: LayerNorm::new(config.d_model),
            ffn: FeedForward::new(config.d_model, ffn_dim, rng),
            ffn_norm: LayerNorm::new(config.d_model),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        x: &Matrix,
        self_mask: &Mask,
        memory: &Matrix,
        cross_mask: Option<&Mask>,
        bias: &[f64],
        dropout: &mut Dropout<'_>,
    ) -> Result<(Matrix, DecoderLayerCache, DecoderLayerState)> {
        let (a, self_attn) = self.self_attn.forward(x, x, x, Some(self_mask), None)?;
        let (a, self_drop) = dropout.apply(a);
        let (hb, self_norm) = self.self_norm.forward(&x.add(&a)?)?;
        let (c, cross_attn) = self
            .cross_attn
            .forward(&hb, memory, memory, cross_mask, Some(bias))?;
        let state = DecoderLayerState {
            h_i: x.clone(),
            h_i_a: a.clone(),
            h_i_b: hb.clone(),
            h_i_c_prime: c.clone(),
        };
        let (c, cross_drop) = dropout.apply(c);
        let (hc, cross_norm) = self.cross_norm.forward(&hb.add(&c)?)?;
        let (f, ffn) = self.ffn.forward(&hc)?;
        let (f, ffn_drop) = dropout.apply(f);
        let (out, ffn_norm) = self.ffn_norm.forward(&hc.add(&f)?)?;
        Ok((
            out,
            DecoderLayerCache {
                self_attn,
                self_drop,
                self_norm,
                cross_attn,
                cross_drop,
                cross_norm,
                ffn,
                ffn_drop,
                ffn_norm,
            },
            state,
        ))
    }

    /// Inference path reusing projected encoder keys/values.
    pub fn forward_cached(
        &self,
        x: &Matrix,
        self_mask: &Mask,
        memory: &KeyValues,
        cross_mask: Option<&Mask>,
        bias: &[f64],
    ) -> Result<(Matrix, Vec<Matrix>)> {
        let (a, _) = self.self_attn.forward(x, x, x, Some(self_mask), None)?;
        let (hb, _) = self.self_norm.forward(&x.add(&a)?)?;
        let (c, probs) = self.cross_attn.forward_cached(&hb, memory, cross_mask, Some(bias))?;
        let (hc, _) = self.cross_norm.forward(&hb.add(&c)?)?;
        let (f, _) = self.ffn.forward(&hc)?;
        let (out, _) = self.ffn_norm.forward(&hc.add(&f)?)?;
        Ok((out, probs))
    }

    /// One new target row against this layer's running self-attention keys
    /// and values, which it extends.
    pub fn step(
        &self,
        x: &Matrix,
        self_kv: &mut KeyValues,
        memory: &KeyValues,
        cross_mask: Option<&Mask>,
        bias: &[f64],
    ) -> Result<Matrix> {
        let kv = self.self_attn.project_kv(x, x)?;
        self_kv.keys.push_rows(&kv.keys)?;
        self_kv.values.push_rows(&kv.values)?;
        let (a, _) = self.self_attn.forward_cached(x, self_kv, None, None)?;
        let (hb, _) = self.self_norm.forward(&x.add(&a)?)?;
        let (c, _) = self.cross_attn.forward_cached(&hb, memory, cross_mask, Some(bias))?;
        let (hc, _) = self.cross_norm.forward(&hb.add(&c)?)?;
        let (f, _) = self.ffn.forward(&hc)?;
        let (out, _) = self.ffn_norm.forward(&hc.add(&f)?)?;
        Ok(out)
    }

    pub fn backward(&mut self, cache: &DecoderLayerCache, dout: &Matrix) -> Result<DecoderLayerGrads> {
        let dsum3 = self.ffn_norm.backward(&cache.ffn_norm, dout);
        let df = dropout_backward(dsum3.clone(), &cache.ffn_drop);
        let mut dhc = self.ffn.backward(&cache.ffn, &df)?;
        dhc.add_assign(&dsum3)?;

        let dsum2 = self.cross_norm.backward(&cache.cross_norm, &dhc);
        let dc = dropout_backward(dsum2.clone(), &cache.cross_drop);
        let cg = self.cross_attn.backward(&cache.cross_attn, &dc)?;
        let mut dhb = dsum2;
        dhb.add_assign(&cg.d_queries)?;
        let mut d_memory = cg.d_keys;
        d_memory.add_assign(&cg.d_values)?;

        let dsum1 = self.self_norm.backward(&cache.self_norm, &dhb);
        let da = dropout_backward(dsum1.clone(), &cache.self_drop);
        let sg = self.self_attn.backward(&cache.self_attn, &da)?;
        let mut d_input = dsum1;
        d_input.add_assign(&sg.d_queries)?;
        d_input.add_assign(&sg.d_keys)?;
        d_input.add_assign(&sg.d_values)?;
        Ok(DecoderLayerGrads {
            d_input,
            d_memory,
            d_bias: cg.d_bias.expect("cross-attention always carries a bias"),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub embedding: PositionalEmbedding,
    pub layers: Vec<DecoderLayer>,
}
impl_params!(Decoder { embedding, layers });

pub struct DecoderCache {
    embedding: EmbeddingCache,
    pub(crate) layers: Vec<DecoderLayerCache>,
}

pub struct DecoderGrads {
    pub d_memory: Matrix,
    pub d_bias: Vec<f64>,
}

impl Decoder {
    pub fn new(
        config: AttentionConfig,
        layers: usize,
        ffn_dim: usize,
        max_positions: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let embedding = PositionalEmbedding::new(max_positions, config.d_model, rng);
        let layers = (0..layers)
            .map(|_| DecoderLayer::new(config, ffn_dim, rng))
            .collect::<Result<_>>()?;
        Ok(Self { embedding, layers })
    }

    pub fn forward(
        &self,
        token_table: &Matrix,
        ids: &[u32],
        memory: &Matrix,
        cross_mask: Option<&Mask>,
        bias: &[f64],
        dropout: &mut Dropout<'_>,
    ) -> Result<(Matrix, DecoderCache, Vec<DecoderLayerState>)> {
        let self_mask = causal_mask(ids.len());
        let (mut x, embedding) = self.embedding.forward(token_table, ids, dropout)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut states = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c, s) = layer.forward(&x, &self_mask, memory, cross_mask, bias, dropout)?;
            x = y;
            caches.push(c);
            states.push(s);
        }
        Ok((
            x,
            DecoderCache {
                embedding,
                layers: caches,
            },
            states,
        ))
    }

    pub fn forward_cached(
        &self,
        token_table: &Matrix,
        ids: &[u32],
        memory: &[KeyValues],
        cross_mask: Option<&Mask>,
        bias: &[f64],
    ) -> Result<(Matrix, Vec<Vec<Matrix>>)> {
        let self_mask = causal_mask(ids.len());
        let (mut x, _) = self.embedding.forward(token_table, ids, &mut Dropout::off())?;
        let mut weights = Vec::with_capacity(self.layers.len());
        for (layer, kv) in self.layers.iter().zip(memory) {
            let (y, w) = layer.forward_cached(&x, &self_mask, kv, cross_mask, bias)?;
            x = y;
            weights.push(w);
        }
        Ok((x, weights))
    }

    /// Empty per-layer self-attention state for [`Self::step`].
    pub fn start_state(&self) -> Vec<KeyValues> {
        let d = self.embedding.norm.gain.value.cols();
        self.layers
            .iter()
            .map(|_| KeyValues {
                keys: Matrix::zeros(0, d),
                values: Matrix::zeros(0, d),
            })
            .collect()
    }

    /// Feeds `token` at the next position and returns its final hidden row.
    pub fn step(
        &self,
        token_table: &Matrix,
        token: u32,
        state: &mut [KeyValues],
        memory: &[KeyValues],
        cross_mask: Option<&Mask>,
        bias: &[f64],
    ) -> Result<Matrix> {
        let position = state.first().map_or(0, |kv| kv.keys.rows());
        let mut x = self.embedding.embed_at(token_table, token, position)?;
        for ((layer, kv), mem) in self.layers.iter().zip(state.iter_mut()).zip(memory) {
            x = layer.step(&x, kv, mem, cross_mask, bias)?;
        }
        Ok(x)
    }

    pub fn backward(
        &mut self,
        cache: &DecoderCache,
        dout: Matrix,
        token_grad: &mut Matrix,
    ) -> Result<DecoderGrads> {
        let mut d = dout;
        let mut d_memory: Option<Matrix> = None;
        let mut d_bias: Option<Vec<f64>> = None;
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            let g = layer.backward(c, &d)?;
            d = g.d_input;
            match d_memory.as_mut() {
                Some(m) => m.add_assign(&g.d_memory)?,
                None => d_memory = Some(g.d_memory),
            }
            match d_bias.as_mut() {
                Some(b) => b.iter_mut().zip(&g.d_bias).for_each(|(a, v)| *a += v),
                None => d_bias = Some(g.d_bias),
            }
        }
        self.embedding.backward(&cache.embedding, d, token_grad);
        Ok(DecoderGrads {
            d_memory: d_memory.expect("decoder has at least one layer"),
            d_bias: d_bias.expect("decoder has at least one layer"),
        })
    }
}
