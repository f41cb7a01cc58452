use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// A trainable array with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Matrix,
    pub grad: Matrix,
}

impl Parameter {
    pub fn new(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named traversal over every parameter of a model component. Names are
/// dot-joined paths (`decoder.layers.0.cross_attn.q.weight`) and are stable,
/// which makes them the key for checkpoints and optimizer state.
pub trait Params {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Parameter)>);
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Parameter)>);

    fn named_params(&self) -> Vec<(String, &Parameter)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        let mut out = Vec::new();
        self.collect_params_mut("", &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    fn zero_grads(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }
}

pub(crate) fn join_name(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

impl Params for Parameter {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Parameter)>) {
        out.push((prefix.to_string(), self));
    }
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Parameter)>) {
        out.push((prefix.to_string(), self));
    }
}

impl<T: Params> Params for Vec<T> {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Parameter)>) {
        for (i, item) in self.iter().enumerate() {
            item.collect_params(&join_name(prefix, &i.to_string()), out);
        }
    }
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Parameter)>) {
        for (i, item) in self.iter_mut().enumerate() {
            item.collect_params_mut(&join_name(prefix, &i.to_string()), out);
        }
    }
}

/// Implements [`Params`] for a struct by visiting the listed fields in order.
macro_rules! impl_params {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::numeric::Params for $ty {
            fn collect_params<'a>(
                &'a self,
                prefix: &str,
                out: &mut Vec<(String, &'a $crate::numeric::Parameter)>,
            ) {
                $( self.$field.collect_params(&$crate::numeric::optim::join_name(prefix, stringify!($field)), out); )*
            }
            fn collect_params_mut<'a>(
                &'a mut self,
                prefix: &str,
                out: &mut Vec<(String, &'a mut $crate::numeric::Parameter)>,
            ) {
                $( self.$field.collect_params_mut(&$crate::numeric::optim::join_name(prefix, stringify!($field)), out); )*
            }
        }
    };
}
pub(crate) use impl_params;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shape: (usize, usize), cfg: AdamConfig) -> Self {
        Self {
            m: Matrix::zeros(shape.0, shape.1),
            v: Matrix::zeros(shape.0, shape.1),
            step_count: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }
}

/// One bias-corrected Adam update of `param` from its current gradient.
pub fn adam_step(param: &mut Parameter, state: &mut AdamState) -> Result<()> {
    if state.m.shape() != param.value.shape() {
        return Err(Error::Shape {
            op: "adam_step",
            left: param.value.shape(),
            right: state.m.shape(),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    let g = param.grad.data();
    let m = state.m.data_mut();
    for (mi, gi) in m.iter_mut().zip(g) {
        *mi = b1 * *mi + (1.0 - b1) * gi;
    }
    let v = state.v.data_mut();
    for (vi, gi) in v.iter_mut().zip(g) {
        *vi = b2 * *vi + (1.0 - b2) * gi * gi;
    }
    let m = state.m.data();
    let v = state.v.data();
    for ((w, mi), vi) in param.value.data_mut().iter_mut().zip(m).zip(v) {
        let mhat = mi / bc1;
        let vhat = vi / bc2;
        *w -= state.lr * mhat / (vhat.sqrt() + state.eps);
    }
    Ok(())
}

/// Adam over a whole [`Params`] tree, keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<(String, AdamState)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            states: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
        for (_, s) in &mut self.states {
            s.lr = lr;
        }
    }

    /// Applies one update to every parameter and clears its gradient.
    pub fn step<P: Params + ?Sized>(&mut self, model: &mut P) -> Result<()> {
        let params = model.named_params_mut();
        if self.states.is_empty() {
            self.states = params
                .iter()
                .map(|(n, p)| (n.clone(), AdamState::new(p.value.shape(), self.config)))
                .collect();
        }
        if self.states.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} parameters, model has {}",
                self.states.len(),
                params.len()
            )));
        }
        for ((name, p), (sname, state)) in params.into_iter().zip(&mut self.states) {
            if name != *sname {
                return Err(Error::Config(format!(
                    "optimizer state for {sname} applied to {name}"
                )));
            }
            adam_step(p, state)?;
            p.zero_grad();
        }
        Ok(())
    }

    pub fn states(&self) -> &[(String, AdamState)] {
        &self.states
    }

    pub fn restore_states(&mut self, states: Vec<(String, AdamState)>) {
        self.states = states;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_value() {
        let mut p = Parameter::new(Matrix::from_rows(&[&[1.0, -2.0]]));
        let mut s = AdamState::new((1, 2), AdamConfig::default());
        for _ in 0..10 {
            adam_step(&mut p, &mut s).unwrap();
        }
        assert_eq!(p.value.row(0), &[1.0, -2.0]);
        assert_eq!(s.step_count, 10);
    }

    #[test]
    fn constant_gradient_moves_lr_per_step() {
        // With g constant, m̂ = g and v̂ = g² exactly, so each step moves by
        // lr · |g| / (|g| + eps).
        let cfg = AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        };
        let mut p = Parameter::new(Matrix::zeros(1, 1));
        let mut s = AdamState::new((1, 1), cfg);
        let g = 0.37;
        let mut prev = 0.0;
        for step in 0..500 {
            p.grad.set(0, 0, g);
            adam_step(&mut p, &mut s).unwrap();
            let delta = prev - p.value.get(0, 0);
            prev = p.value.get(0, 0);
            if step > 100 {
                assert!((delta - cfg.lr * g / (g + cfg.eps)).abs() < 1e-12, "{delta}");
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut p = Parameter::new(Matrix::zeros(2, 2));
        let mut s = AdamState::new((1, 2), AdamConfig::default());
        assert!(adam_step(&mut p, &mut s).is_err());
    }
}
