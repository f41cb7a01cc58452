//! Differentiable primitives shared by every layer: masked/biased softmax,
//! layer normalisation, GELU and token-level cross-entropy.

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Boolean attention mask; `true` marks an allowed cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allow: Vec<bool>,
}

impl Mask {
    pub fn all(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            allow: vec![true; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allow = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                allow.push(f(r, c));
            }
        }
        Self { rows, cols, allow }
    }

    /// Every query row may see exactly the keys whose flag is `true`.
    pub fn from_key_flags(rows: usize, keys: &[bool]) -> Self {
        Self::from_fn(rows, keys.len(), |_, c| keys[c])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn allowed(&self, r: usize, c: usize) -> bool {
        self.allow[r * self.cols + c]
    }

    /// Cell-wise conjunction.
    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op: "mask and",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Mask {
            rows: self.rows,
            cols: self.cols,
            allow: self
                .allow
                .iter()
                .zip(&other.allow)
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }
}

/// Row-wise softmax of `scores + bias` (bias broadcast over rows). Masked
/// cells get probability exactly 0; a row with no allowed cell is an error.
pub fn row_softmax(scores: &Matrix, bias: Option<&[f64]>, mask: Option<&Mask>) -> Result<Matrix> {
    let (rows, cols) = scores.shape();
    if let Some(b) = bias {
        if b.len() != cols {
            return Err(Error::Length {
                what: "softmax bias",
                expected: cols,
                found: b.len(),
            });
        }
    }
    if let Some(m) = mask {
        if m.shape() != scores.shape() {
            return Err(Error::Shape {
                op: "row_softmax mask",
                left: scores.shape(),
                right: m.shape(),
            });
        }
    }
    let mut out = Matrix::zeros(rows, cols);
    let mut shifted = vec![0.0; cols];
    for r in 0..rows {
        let src = scores.row(r);
        let mut max = f64::NEG_INFINITY;
        for c in 0..cols {
            if mask.is_some_and(|m| !m.allowed(r, c)) {
                continue;
            }
            let v = src[c] + bias.map_or(0.0, |b| b[c]);
            shifted[c] = v;
            if v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::FullyMasked { row: r });
        }
        let dst = out.row_mut(r);
        let mut sum = 0.0;
        for c in 0..cols {
            if mask.is_some_and(|m| !m.allowed(r, c)) {
                continue;
            }
            let e = (shifted[c] - max).exp();
            dst[c] = e;
            sum += e;
        }
        for v in dst.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Backward pass of [`row_softmax`] given its output: `ds = p ⊙ (dp − ⟨dp, p⟩)`.
/// Masked cells have `p = 0` and therefore receive no gradient.
pub fn softmax_backward(probs: &Matrix, dprobs: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let dp = dprobs.row(r);
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for (o, (pi, dpi)) in out.row_mut(r).iter_mut().zip(p.iter().zip(dp)) {
            *o = pi * (dpi - dot);
        }
    }
    out
}

/// Log-softmax of a single row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v - lse).collect()
}

/// Saved activations needed by [`layer_norm_backward`].
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

/// Normalises every row to zero mean and unit (population) variance, then
/// applies `gain` and `shift`.
pub fn layer_norm(x: &Matrix, gain: &[f64], shift: &[f64], eps: f64) -> Result<Matrix> {
    layer_norm_forward(x, gain, shift, eps).map(|(y, _)| y)
}

pub fn layer_norm_forward(
    x: &Matrix,
    gain: &[f64],
    shift: &[f64],
    eps: f64,
) -> Result<(Matrix, LayerNormCache)> {
    let cols = x.cols();
    for (what, v) in [("layer_norm gain", gain), ("layer_norm shift", shift)] {
        if v.len() != cols {
            return Err(Error::Length {
                what,
                expected: cols,
                found: v.len(),
            });
        }
    }
    if eps <= 0.0 {
        return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
    }
    let n = cols as f64;
    let mut y = Matrix::zeros(x.rows(), cols);
    let mut normalized = Matrix::zeros(x.rows(), cols);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        let nr = normalized.row_mut(r);
        for (o, v) in nr.iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        let nr = normalized.row(r).to_vec();
        for (c, o) in y.row_mut(r).iter_mut().enumerate() {
            *o = nr[c] * gain[c] + shift[c];
        }
    }
    Ok((y, LayerNormCache { normalized, inv_std }))
}

/// Returns `dx` and accumulates into `dgain`/`dshift`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &[f64],
    dy: &Matrix,
    dgain: &mut [f64],
    dshift: &mut [f64],
) -> Matrix {
    let cols = dy.cols();
    let n = cols as f64;
    let mut dx = Matrix::zeros(dy.rows(), cols);
    let mut dxhat = vec![0.0; cols];
    for r in 0..dy.rows() {
        let xh = cache.normalized.row(r);
        let g = dy.row(r);
        for c in 0..cols {
            dgain[c] += g[c] * xh[c];
            dshift[c] += g[c];
            dxhat[c] = g[c] * gain[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
        let is = cache.inv_std[r];
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = is * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Mean token negative log-likelihood over non-pad positions together with
/// its gradient with respect to the logits.
pub fn cross_entropy_loss(logits: &Matrix, targets: &[u32], pad_id: u32) -> Result<(f64, Matrix)> {
    if targets.len() != logits.rows() {
        return Err(Error::Length {
            what: "cross-entropy targets",
            expected: logits.rows(),
            found: targets.len(),
        });
    }
    let count = targets.iter().filter(|&&t| t != pad_id).count();
    if count == 0 {
        return Err(Error::AllPad);
    }
    let vocab = logits.cols();
    let mut grad = Matrix::zeros(logits.rows(), vocab);
    let mut total = 0.0;
    let inv = 1.0 / count as f64;
    for (r, &t) in targets.iter().enumerate() {
        if t == pad_id {
            continue;
        }
        let t = t as usize;
        if t >= vocab {
            return Err(Error::Length {
                what: "target id within vocabulary",
                expected: vocab,
                found: t,
            });
        }
        let lp = log_softmax(logits.row(r));
        total -= lp[t];
        for (g, l) in grad.row_mut(r).iter_mut().zip(&lp) {
            *g = l.exp() * inv;
        }
        grad.row_mut(r)[t] -= inv;
    }
    Ok((total * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_row() {
        let p = row_softmax(&Matrix::zeros(1, 3), None, None).unwrap();
        for v in p.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_bias_is_a_no_op() {
        let s = Matrix::zeros(1, 2);
        for c in [-7.5, 0.0, 3.25, 1e3] {
            let b = row_softmax(&s, Some(&[c, c]), None).unwrap();
            assert!(b.max_abs_diff(&row_softmax(&s, None, None).unwrap()) < 1e-15);
        }
    }

    #[test]
    fn closed_form_two_way() {
        let p = row_softmax(&Matrix::from_rows(&[&[1.0, 2.0]]), None, None).unwrap();
        let e = std::f64::consts::E;
        assert!((p.get(0, 0) - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((p.get(0, 1) - e / (1.0 + e)).abs() < 1e-15);
        assert!((p.get(0, 0) - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn masked_cells_are_zero_and_full_mask_errors() {
        let s = Matrix::from_rows(&[&[1.0, 5.0, 2.0], &[0.0, 0.0, 0.0]]);
        let m = Mask::from_fn(2, 3, |r, c| r == 1 || c != 1);
        let p = row_softmax(&s, None, Some(&m)).unwrap();
        assert_eq!(p.get(0, 1), 0.0);
        assert!((p.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let none = Mask::from_fn(2, 3, |r, _| r == 1);
        assert!(matches!(
            row_softmax(&s, None, Some(&none)),
            Err(Error::FullyMasked { row: 0 })
        ));
    }

    #[test]
    fn layer_norm_examples() {
        let ones = [1.0; 3];
        let zeros = [0.0; 3];
        let y = layer_norm(&Matrix::from_rows(&[&[5.0, 5.0, 5.0]]), &ones, &zeros, 1e-5).unwrap();
        assert_eq!(y.row(0), &[0.0, 0.0, 0.0]);

        let y = layer_norm(&Matrix::from_rows(&[&[1.0, -1.0]]), &[1.0; 2], &[0.0; 2], 1e-14)
            .unwrap();
        assert!((y.get(0, 0) - 1.0).abs() < 1e-12 && (y.get(0, 1) + 1.0).abs() < 1e-12);

        let y = layer_norm(
            &Matrix::from_rows(&[&[3.0, -2.0, 0.5]]),
            &zeros,
            &[0.25, 0.25, 0.25],
            1e-5,
        )
        .unwrap();
        assert!(y.row(0).iter().all(|&v| v == 0.25));
    }

    #[test]
    fn layer_norm_rejects_nonpositive_eps() {
        assert!(layer_norm(&Matrix::zeros(1, 2), &[1.0; 2], &[0.0; 2], 0.0).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let (loss, grad) = cross_entropy_loss(&Matrix::zeros(1, 2), &[0], 99).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((grad.get(0, 0) + 0.5).abs() < 1e-15 && (grad.get(0, 1) - 0.5).abs() < 1e-15);

        let (loss, _) = cross_entropy_loss(&Matrix::zeros(3, 17), &[4, 16, 0], 99).unwrap();
        assert!((loss - 17f64.ln()).abs() < 1e-12);

        let (loss, _) =
            cross_entropy_loss(&Matrix::from_rows(&[&[60.0, 0.0, 0.0]]), &[0], 99).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn cross_entropy_pad_rows() {
        let logits = Matrix::from_rows(&[&[1.0, 2.0], &[0.3, -0.1]]);
        let (_, grad) = cross_entropy_loss(&logits, &[1, 0], 0).unwrap();
        assert_eq!(grad.row(1), &[0.0, 0.0]);
        assert!(matches!(
            cross_entropy_loss(&logits, &[0, 0], 0),
            Err(Error::AllPad)
        ));
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_backward_matches_difference() {
        let x = Matrix::from_rows(&[&[0.3, -1.2, 2.0, 0.7], &[1.0, 1.5, -0.5, 0.1]]);
        let gain = [1.1, 0.9, -0.3, 2.0];
        let shift = [0.0, 0.1, 0.2, -0.1];
        let w = Matrix::from_rows(&[&[0.5, -1.0, 0.25, 2.0], &[1.5, 0.2, -0.7, 0.3]]);
        let f = |x: &Matrix| -> f64 {
            let y = layer_norm(x, &gain, &shift, 1e-5).unwrap();
            y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = layer_norm_forward(&x, &gain, &shift, 1e-5).unwrap();
        let mut dg = [0.0; 4];
        let mut ds = [0.0; 4];
        let dx = layer_norm_backward(&cache, &gain, &w, &mut dg, &mut ds);
        for i in 0..8 {
            let mut xp = x.clone();
            xp.data_mut()[i] += 1e-6;
            let mut xm = x.clone();
            xm.data_mut()[i] -= 1e-6;
            let fd = (f(&xp) - f(&xm)) / 2e-6;
            assert!((fd - dx.data()[i]).abs() < 1e-6, "{i}: {fd} vs {}", dx.data()[i]);
        }
    }
}
