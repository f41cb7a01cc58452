use crate::attention::{key_padding_mask, AttentionCache, AttentionConfig, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::layers::{
    dropout_backward, normal_matrix, Dropout, FeedForward, FeedForwardCache, LayerNorm, INIT_STD,
};
use crate::numeric::optim::impl_params;
use crate::numeric::{LayerNormCache, Mask, Matrix, Parameter, Rng};

/// Learned absolute positions plus a layer norm over the summed embedding.
#[derive(Debug, Clone)]
pub struct PositionalEmbedding {
    pub positions: Parameter,
    pub norm: LayerNorm,
}
impl_params!(PositionalEmbedding { positions, norm });

pub struct EmbeddingCache {
    ids: Vec<u32>,
    norm: LayerNormCache,
    dropout: Option<Vec<f64>>,
}

impl PositionalEmbedding {
    pub fn new(max_positions: usize, d_model: usize, rng: &mut Rng) -> Self {
        Self {
            positions: Parameter::new(normal_matrix(max_positions, d_model, INIT_STD, rng)),
            norm: LayerNorm::new(d_model),
        }
    }

    pub fn max_positions(&self) -> usize {
        self.positions.value.rows()
    }

    pub fn forward(
        &self,
        token_table: &Matrix,
        ids: &[u32],
        dropout: &mut Dropout<'_>,
    ) -> Result<(Matrix, EmbeddingCache)> {
        if ids.len() > self.max_positions() {
            return Err(Error::Overlength {
                len: ids.len(),
                max: self.max_positions(),
            });
        }
        let d = token_table.cols();
        let mut x = Matrix::zeros(ids.len(), d);
        for (i, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= token_table.rows() {
                return Err(Error::Length {
                    what: "token id within vocabulary",
                    expected: token_table.rows(),
                    found: id,
                });
            }
            let tok = token_table.row(id);
            let pos = self.positions.value.row(i);
            for ((o, t), p) in x.row_mut(i).iter_mut().zip(tok).zip(pos) {
                *o = t + p;
            }
        }
        let (y, norm) = self.norm.forward(&x)?;
        let (y, mask) = dropout.apply(y);
        Ok((
            y,
            EmbeddingCache {
                ids: ids.to_vec(),
                norm,
                dropout: mask,
            },
        ))
    }

    /// Embedding of a single token at `position`, without dropout.
    pub fn embed_at(&self, token_table: &Matrix, id: u32, position: usize) -> Result<Matrix> {
        if position >= self.max_positions() {
            return Err(Error::Overlength {
                len: position + 1,
                max: self.max_positions(),
            });
        }
        if id as usize >= token_table.rows() {
            return Err(Error::Length {
                what: "token id within vocabulary",
                expected: token_table.rows(),
                found: id as usize,
            });
        }
        let row: Vec<f64> = token_table
            .row(id as usize)
            .iter()
            .zip(self.positions.value.row(position))
            .map(|(t, p)| t + p)
            .collect();
        self.norm.forward(&Matrix::row_vector(&row)).map(|(y, _)| y)
    }

    /// Accumulates into the position table, the norm and `token_grad`.
    pub fn backward(&mut self, cache: &EmbeddingCache, dy: Matrix, token_grad: &mut Matrix) {
        let dy = dropout_backward(dy, &cache.dropout);
        let dx = self.norm.backward(&cache.norm, &dy);
        for (i, &id) in cache.ids.iter().enumerate() {
            let g = dx.row(i);
            for (t, v) in token_grad.row_mut(id as usize).iter_mut().zip(g) {
                *t += v;
            }
            for (p, v) in self.positions.grad.row_mut(i).iter_mut().zip(g) {
                *p += v;
            }
        }
    }
}

/// Post-norm layer: self-attention → add & norm → FFN → add & norm.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub self_attn: MultiHeadAttention,
    pub attn_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}
impl_params!(EncoderLayer { self_attn, attn_norm, ffn, ffn_norm });

pub struct EncoderLayerCache {
    attn: AttentionCache,
    attn_drop: Option<Vec<f64>>,
    attn_norm: LayerNormCache,
    ffn: FeedForwardCache,
    ffn_drop: Option<Vec<f64>>,
    ffn_norm: LayerNormCache,
}

impl EncoderLayer {
    pub fn new(config: AttentionConfig, ffn_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::new(config, rng)?,
            attn_norm: LayerNorm::new(config.d_model),
            ffn: FeedForward::new(config.d_model, ffn_dim, rng),
            ffn_norm: LayerNorm::new(config.d_model),
        })
    }

    pub fn forward(
        &self,
        x: &Matrix,
        mask: Option<&Mask>,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Matrix, EncoderLayerCache)> {
        let (a, attn) = self.self_attn.forward(x, x, x, mask, None)?;
        let (a, attn_drop) = dropout.apply(a);
        let (h, attn_norm) = self.attn_norm.forward(&x.add(&a)?)?;
        let (f, ffn) = self.ffn.forward(&h)?;
        let (f, ffn_drop) = dropout.apply(f);
        let (out, ffn_norm) = self.ffn_norm.forward(&h.add(&f)?)?;
        Ok((
            out,
            EncoderLayerCache {
                attn,
                attn_drop,
                attn_norm,
                ffn,
                ffn_drop,
                ffn_norm,
            },
        ))
    }

    pub fn backward(&mut self, cache: &EncoderLayerCache, dout: &Matrix) -> Result<Matrix> {
        let dsum2 = self.ffn_norm.backward(&cache.ffn_norm, dout);
        let df = dropout_backward(dsum2.clone(), &cache.ffn_drop);
        let mut dh = self.ffn.backward(&cache.ffn, &df)?;
        dh.add_assign(&dsum2)?;
        let dsum1 = self.attn_norm.backward(&cache.attn_norm, &dh);
        let da = dropout_backward(dsum1.clone(), &cache.attn_drop);
        let g = self.self_attn.backward(&cache.attn, &da)?;
        let mut dx = dsum1;
        dx.add_assign(&g.d_queries)?;
        dx.add_assign(&g.d_keys)?;
        dx.add_assign(&g.d_values)?;
        Ok(dx)
    }
}

/// Embedding + stack of [`EncoderLayer`]s. The token table is owned by the
/// enclosing model so it can be shared with the decoder and LM head.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub embedding: PositionalEmbedding,
    pub layers: Vec<EncoderLayer>,
}
impl_params!(Encoder { embedding, layers });

pub struct EncoderCache {
    embedding: EmbeddingCache,
    layers: Vec<EncoderLayerCache>,
}

impl Encoder {
    pub fn new(
        config: AttentionConfig,
        layers: usize,
        ffn_dim: usize,
        max_positions: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let embedding = PositionalEmbedding::new(max_positions, config.d_model, rng);
        let layers = (0..layers)
            .map(|_| EncoderLayer::new(config, ffn_dim, rng))
            .collect::<Result<_>>()?;
        Ok(Self { embedding, layers })
    }

    pub fn forward(
        &self,
        token_table: &Matrix,
        ids: &[u32],
        pad: Option<&[bool]>,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Matrix, EncoderCache)> {
        let mask = match pad {
            Some(p) if p.iter().any(|&b| b) => {
                if p.len() != ids.len() {
                    return Err(Error::Length {
                        what: "pad mask",
                        expected: ids.len(),
                        found: p.len(),
                    });
                }
                Some(key_padding_mask(ids.len(), p))
            }
            _ => None,
        };
        let (mut x, embedding) = self.embedding.forward(token_table, ids, dropout)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(&x, mask.as_ref(), dropout)?;
            x = y;
            caches.push(c);
        }
        Ok((
            x,
            EncoderCache {
                embedding,
                layers: caches,
            },
        ))
    }

    pub fn backward(&mut self, cache: &EncoderCache, dout: Matrix, token_grad: &mut Matrix) -> Result<()> {
        let mut d = dout;
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            d = layer.backward(c, &d)?;
        }
        self.embedding.backward(&cache.embedding, d, token_grad);
        Ok(())
    }
}
