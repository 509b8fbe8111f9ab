use rand::Rng;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor with its gradient buffer and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let n = value.numel();
        Self {
            name: name.into(),
            value,
            grad: vec![0.0; n],
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first_moment, &self.second_moment)
    }
}

/// Ordered, named collection of parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Total scalar count across all blocks.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.value.data())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Records every parameter on the tape as a gradient-carrying leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.value.clone())).collect()
    }

    /// Records every parameter as a constant, for inference.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.value.clone())).collect()
    }

    /// Adds the gradients of `vars` (as returned by [`ParamSet::bind`]) into
    /// the gradient buffers. Unreached parameters contribute zero.
    pub fn accumulate(&mut self, grads: &Gradients, vars: &[Var]) {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            if let Some(g) = grads.get(v) {
                for (acc, gi) in p.grad.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Replaces values from named blocks; names and shapes must match.
    pub fn load_blocks(&mut self, blocks: Vec<(String, Tensor)>) -> Result<()> {
        if blocks.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} blocks, model expects {}",
                blocks.len(),
                self.params.len()
            )));
        }
        for (p, (name, t)) in self.params.iter_mut().zip(blocks) {
            if p.name != name || p.value.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "checkpoint block {name} {:?} does not match model block {} {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            *p = Parameter::new(name, t);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter, then zeroes grads.
pub fn adam_step(params: &mut ParamSet, adam: &Adam) -> Result<()> {
    if !(adam.lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", adam.lr)));
    }
    for p in params.iter_mut() {
        p.step += 1;
        let t = p.step as i32;
        let c1 = 1.0 - adam.beta1.powi(t);
        let c2 = 1.0 - adam.beta2.powi(t);
        let values = p.value.data_mut();
        for i in 0..values.len() {
            let g = p.grad[i];
            let m = adam.beta1 * p.first_moment[i] + (1.0 - adam.beta1) * g;
            let v = adam.beta2 * p.second_moment[i] + (1.0 - adam.beta2) * g * g;
            p.first_moment[i] = m;
            p.second_moment[i] = v;
            values[i] -= adam.lr * (m / c1) / ((v / c2).sqrt() + adam.eps);
        }
        p.grad.fill(0.0);
    }
    Ok(())
}

/// Glorot-uniform weights, `U(+-sqrt(6 / (fan_in + fan_out)))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-limit..=limit))
}
