//! Multi-head attention sub-layers, including cross-attention whose scores
//! carry an additive per-source-position relevance bias.
//!
//! The bias enters after the `1/√d_k` scaling and before the softmax, and the
//! same vector is added to every head and every query row:
//!
//! ```text
//! head_h = softmax(Q_h K_hᵀ / √d_k + 1·aᵀ) V_h
//! ```
//!
//! Because softmax is shift invariant along a row, replacing `a` with
//! `a + c·1` leaves every output unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{LayerNorm, Linear};
use crate::numeric::optim::impl_params;
use crate::numeric::{row_softmax, softmax_backward, Mask, Matrix, Rng};
use crate::relevance::RelevanceVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub heads: usize,
}

impl AttentionConfig {
    pub fn new(d_model: usize, heads: usize) -> Result<Self> {
        let cfg = Self { d_model, heads };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    /// Key dimension per head.
    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Hidden states of one decoder layer: input, self-attention output,
/// post-residual norm and biased cross-attention output.
#[derive(Debug, Clone)]
pub struct DecoderLayerState {
    pub h_i: Matrix,
    pub h_i_a: Matrix,
    pub h_i_b: Matrix,
    pub h_i_c_prime: Matrix,
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub config: AttentionConfig,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}
impl_params!(MultiHeadAttention { q, k, v, o });

/// Projected keys and values, reusable across decoding steps.
#[derive(Debug, Clone)]
pub struct KeyValues {
    pub keys: Matrix,
    pub values: Matrix,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    queries_in: Matrix,
    keys_in: Matrix,
    values_in: Matrix,
    q: Matrix,
    kv: KeyValues,
    /// Per-head attention weights `[queries × keys]`.
    pub probs: Vec<Matrix>,
    concat: Matrix,
    has_bias: bool,
}

pub struct AttentionGrads {
    pub d_queries: Matrix,
    pub d_keys: Matrix,
    pub d_values: Matrix,
    /// Gradient with respect to the additive bias, when one was supplied.
    pub d_bias: Option<Vec<f64>>,
}

impl MultiHeadAttention {
    pub fn new(config: AttentionConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        Ok(Self {
            config,
            q: Linear::new(d, d, rng),
            k: Linear::new(d, d, rng),
            v: Linear::new(d, d, rng),
            o: Linear::new(d, d, rng),
        })
    }

    fn check_inputs(
        &self,
        queries: &Matrix,
        keys: &Matrix,
        values: &Matrix,
        bias: Option<&[f64]>,
    ) -> Result<()> {
        let d = self.config.d_model;
        for m in [queries, keys, values] {
            if m.cols() != d {
                return Err(Error::Shape {
                    op: "multi_head_attention input width",
                    left: m.shape(),
                    right: (m.rows(), d),
                });
            }
        }
        if keys.rows() != values.rows() {
            return Err(Error::Shape {
                op: "multi_head_attention keys/values",
                left: keys.shape(),
                right: values.shape(),
            });
        }
        if let Some(b) = bias {
            if b.len() != keys.rows() {
                return Err(Error::Length {
                    what: "attention bias (one entry per key)",
                    expected: keys.rows(),
                    found: b.len(),
                });
            }
        }
        Ok(())
    }

    pub fn project_kv(&self, keys: &Matrix, values: &Matrix) -> Result<KeyValues> {
        Ok(KeyValues {
            keys: self.k.forward(keys)?,
            values: self.v.forward(values)?,
        })
    }

    /// Scaled scores of every head with the bias already added, masked cells
    /// left untouched. Exposed for inspection and broadcast checks.
    pub fn head_scores(&self, queries: &Matrix, keys: &Matrix, bias: Option<&[f64]>) -> Result<Vec<Matrix>> {
        self.check_inputs(queries, keys, keys, bias)?;
        let q = self.q.forward(queries)?;
        let k = self.k.forward(keys)?;
        let dk = self.config.d_k();
        let scale = 1.0 / (dk as f64).sqrt();
        (0..self.config.heads)
            .map(|h| {
                let mut s = q.column_block(h * dk, dk).matmul_nt(&k.column_block(h * dk, dk))?;
                s.scale(scale);
                if let Some(b) = bias {
                    s.add_row_broadcast(b)?;
                }
                Ok(s)
            })
            .collect()
    }

    fn attend(
        &self,
        q: &Matrix,
        kv: &KeyValues,
        mask: Option<&Mask>,
        bias: Option<&[f64]>,
    ) -> Result<(Matrix, Vec<Matrix>)> {
        let dk = self.config.d_k();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut concat = Matrix::zeros(q.rows(), self.config.d_model);
        let mut probs = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = q.column_block(h * dk, dk);
            let kh = kv.keys.column_block(h * dk, dk);
            let vh = kv.values.column_block(h * dk, dk);
            let mut scores = qh.matmul_nt(&kh)?;
            scores.scale(scale);
            let p = row_softmax(&scores, bias, mask)?;
            concat.set_column_block(h * dk, &p.matmul(&vh)?);
            probs.push(p);
        }
        Ok((concat, probs))
    }

    /// Full forward pass with saved activations for [`Self::backward`].
    pub fn forward(
        &self,
        queries: &Matrix,
        keys: &Matrix,
        values: &Matrix,
        mask: Option<&Mask>,
        bias: Option<&[f64]>,
    ) -> Result<(Matrix, AttentionCache)> {
        self.check_inputs(queries, keys, values, bias)?;
        let q = self.q.forward(queries)?;
        let kv = self.project_kv(keys, values)?;
        let (concat, probs) = self.attend(&q, &kv, mask, bias)?;
        let out = self.o.forward(&concat)?;
        Ok((
            out,
            AttentionCache {
                queries_in: queries.clone(),
                keys_in: keys.clone(),
                values_in: values.clone(),
                q,
                kv,
                probs,
                concat,
                has_bias: bias.is_some(),
            },
        ))
    }

    /// Inference-only forward against pre-projected keys and values.
    pub fn forward_cached(
        &self,
        queries: &Matrix,
        kv: &KeyValues,
        mask: Option<&Mask>,
        bias: Option<&[f64]>,
    ) -> Result<(Matrix, Vec<Matrix>)> {
        if let Some(b) = bias {
            if b.len() != kv.keys.rows() {
                return Err(Error::Length {
                    what: "attention bias (one entry per key)",
                    expected: kv.keys.rows(),
                    found: b.len(),
                });
            }
        }
        let q = self.q.forward(queries)?;
        let (concat, probs) = self.attend(&q, kv, mask, bias)?;
        Ok((self.o.forward(&concat)?, probs))
    }

    pub fn backward(&mut self, cache: &AttentionCache, dout: &Matrix) -> Result<AttentionGrads> {
        let dk = self.config.d_k();
        let scale = 1.0 / (dk as f64).sqrt();
        let dconcat = self.o.backward(&cache.concat, dout)?;
        let mut dq = Matrix::zeros(cache.q.rows(), self.config.d_model);
        let mut dkm = Matrix::zeros(cache.kv.keys.rows(), self.config.d_model);
        let mut dv = Matrix::zeros(cache.kv.values.rows(), self.config.d_model);
        let mut dbias = cache.has_bias.then(|| vec![0.0; cache.kv.keys.rows()]);
        for (h, p) in cache.probs.iter().enumerate() {
            let qh = cache.q.column_block(h * dk, dk);
            let kh = cache.kv.keys.column_block(h * dk, dk);
            let vh = cache.kv.values.column_block(h * dk, dk);
            let doh = dconcat.column_block(h * dk, dk);
            let dp = doh.matmul_nt(&vh)?;
            dv.set_column_block(h * dk, &p.matmul_tn(&doh)?);
            let ds = softmax_backward(p, &dp);
            if let Some(db) = dbias.as_mut() {
                for (b, s) in db.iter_mut().zip(ds.column_sums()) {
                    *b += s;
                }
            }
            let mut dqh = ds.matmul(&kh)?;
            dqh.scale(scale);
            let mut dkh = ds.matmul_tn(&qh)?;
            dkh.scale(scale);
            dq.set_column_block(h * dk, &dqh);
            dkm.set_column_block(h * dk, &dkh);
        }
        let d_queries = self.q.backward(&cache.queries_in, &dq)?;
        let d_keys = self.k.backward(&cache.keys_in, &dkm)?;
        let d_values = self.v.backward(&cache.values_in, &dv)?;
        Ok(AttentionGrads {
            d_queries,
            d_keys,
            d_values,
            d_bias: dbias,
        })
    }
}

/// `multi_head_attention(queries, keys, values)` without gradients.
pub fn multi_head_attention(
    attn: &MultiHeadAttention,
    queries: &Matrix,
    keys: &Matrix,
    values: &Matrix,
    mask: Option<&Mask>,
    bias: Option<&[f64]>,
) -> Result<Matrix> {
    attn.forward(queries, keys, values, mask, bias).map(|(out, _)| out)
}

/// Lower-triangular mask: position `i` sees positions `0..=i`.
pub fn causal_mask(length: usize) -> Mask {
    Mask::from_fn(length, length, |i, j| j <= i)
}

/// Mask letting every query row see all non-pad keys.
pub fn key_padding_mask(queries: usize, pad: &[bool]) -> Mask {
    Mask::from_fn(queries, pad.len(), |_, c| !pad[c])
}

/// `Norm(x + sublayer_out)`.
pub fn residual_norm(x: &Matrix, sublayer_out: &Matrix, norm: &LayerNorm) -> Result<Matrix> {
    let sum = x.add(sublayer_out)?;
    norm.forward(&sum).map(|(y, _)| y)
}

/// Decoder cross-attention biased by the relevance vector: queries from the
/// decoder states `h_b`, keys and values from the encoder output, and `a`
/// added to every row of every head's scaled scores.
pub fn biased_cross_attention(
    attn: &MultiHeadAttention,
    h_b: &Matrix,
    h_enc: &Matrix,
    a: &RelevanceVector,
    pad_mask: Option<&[bool]>,
) -> Result<Matrix> {
    if a.len() != h_enc.rows() {
        return Err(Error::Length {
            what: "relevance vector vs encoder positions",
            expected: h_enc.rows(),
            found: a.len(),
        });
    }
    let mask = pad_mask.map(|p| key_padding_mask(h_b.rows(), p));
    multi_head_attention(attn, h_b, h_enc, h_enc, mask.as_ref(), Some(a.scores()))
}
