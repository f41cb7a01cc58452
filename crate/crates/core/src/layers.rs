//! Building blocks with hand-written backward passes: affine maps, layer
//! norm, the GELU feed-forward block and residual dropout.

use crate::error::Result;
use crate::numeric::optim::impl_params;
use crate::numeric::{gelu, gelu_grad, layer_norm_backward, layer_norm_forward, LayerNormCache};
use crate::numeric::{Matrix, Parameter, Rng};

pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;

/// `rows × cols` entries drawn from N(0, std).
pub fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.normal(0.0, std)).collect();
    Matrix::new(rows, cols, data).expect("sized by construction")
}

/// `y = x · W + b` with `W` stored as `[in × out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}
impl_params!(Linear { weight, bias });

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Parameter::new(normal_matrix(input, output, INIT_STD, rng)),
            bias: Parameter::new(Matrix::zeros(1, output)),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.weight.value)?;
        y.add_row_broadcast(self.bias.value.data())?;
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&mut self, x: &Matrix, dy: &Matrix) -> Result<Matrix> {
        x.accumulate_tn(dy, &mut self.weight.grad)?;
        for (g, d) in self.bias.grad.data_mut().iter_mut().zip(dy.column_sums()) {
            *g += d;
        }
        dy.matmul_nt(&self.weight.value)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Parameter,
    pub shift: Parameter,
}
impl_params!(LayerNorm { gain, shift });

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Parameter::new(Matrix::filled(1, dim, 1.0)),
            shift: Parameter::new(Matrix::zeros(1, dim)),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LayerNormCache)> {
        layer_norm_forward(x, self.gain.value.data(), self.shift.value.data(), LN_EPS)
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Matrix) -> Matrix {
        layer_norm_backward(
            cache,
            self.gain.value.data(),
            dy,
            self.gain.grad.data_mut(),
            self.shift.grad.data_mut(),
        )
    }
}

/// Position-wise `fc2(gelu(fc1(x)))`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}
impl_params!(FeedForward { fc1, fc2 });

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    input: Matrix,
    pre: Matrix,
    act: Matrix,
}

impl FeedForward {
    pub fn new(d_model: usize, ffn_dim: usize, rng: &mut Rng) -> Self {
        Self {
            fc1: Linear::new(d_model, ffn_dim, rng),
            fc2: Linear::new(ffn_dim, d_model, rng),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, FeedForwardCache)> {
        let pre = self.fc1.forward(x)?;
        let mut act = pre.clone();
        act.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        let out = self.fc2.forward(&act)?;
        Ok((
            out,
            FeedForwardCache {
                input: x.clone(),
                pre,
                act,
            },
        ))
    }

    pub fn backward(&mut self, cache: &FeedForwardCache, dy: &Matrix) -> Result<Matrix> {
        let mut dact = self.fc2.backward(&cache.act, dy)?;
        for (d, p) in dact.data_mut().iter_mut().zip(cache.pre.data()) {
            *d *= gelu_grad(*p);
        }
        self.fc1.backward(&cache.input, &dact)
    }
}

/// Inverted dropout driven by an explicit generator. With no generator (or
/// rate 0) it is the identity, which is how evaluation and gradient checks
/// run.
pub struct Dropout<'a> {
    rate: f64,
    rng: Option<&'a mut Rng>,
}

impl<'a> Dropout<'a> {
    pub fn new(rate: f64, rng: &'a mut Rng) -> Self {
        Self {
            rate,
            rng: Some(rng),
        }
    }

    pub fn off() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn active(&self) -> bool {
        self.rate > 0.0 && self.rng.is_some()
    }

    pub fn apply(&mut self, mut x: Matrix) -> (Matrix, Option<Vec<f64>>) {
        if !self.active() {
            return (x, None);
        }
        let keep = 1.0 - self.rate;
        let rng = self.rng.as_mut().expect("active implies rng");
        let mask: Vec<f64> = (0..x.data().len())
            .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        for (v, m) in x.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        (x, Some(mask))
    }
}

pub(crate) fn dropout_backward(mut dy: Matrix, mask: &Option<Vec<f64>>) -> Matrix {
    if let Some(m) = mask {
        for (d, k) in dy.data_mut().iter_mut().zip(m) {
            *d *= k;
        }
    }
    dy
}
