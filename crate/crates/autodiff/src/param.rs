//! Named learnable tensors and the Adam optimizer state attached to them.

use crate::error::AdError;
use crate::matrix::Matrix;
use crate::tape::{Gradients, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn new(index: usize) -> Self {
        Self(index)
    }
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    /// Adam first moment.
    pub m: Matrix,
    /// Adam second moment.
    pub v: Matrix,
    /// Whether weight decay applies (weights yes, biases and norm affine no).
    pub decay: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix, decay: bool) -> ParamId {
        let (r, c) = value.shape();
        self.params.push(Param {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of Adam steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Records the parameter's current value on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape, id: ParamId) -> Tensor {
        tape.param(id, self.params[id.0].value.clone())
    }

    /// Overwrites every stored gradient; parameters absent from `grads` get
    /// zero.
    pub fn set_grads(&mut self, grads: &Gradients) -> Result<(), AdError> {
        for p in &mut self.params {
            let (r, c) = p.value.shape();
            p.grad = Matrix::zeros(r, c);
        }
        for (id, g) in grads.iter() {
            let p = &mut self.params[id.0];
            if g.shape() != p.value.shape() {
                return Err(AdError::GradShape {
                    name: p.name.clone(),
                    got: g.shape(),
                    want: p.value.shape(),
                });
            }
            p.grad = g.clone();
        }
        Ok(())
    }

    /// One bias-corrected Adam update from the stored gradients. Weight decay
    /// is added to the gradient (`g + wd·p`) before the moment update.
    pub fn adam_step(&mut self, opt: &Adam) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);
        for p in &mut self.params {
            let wd = if p.decay { opt.weight_decay } else { 0.0 };
            let values = p.value.as_mut_slice();
            let grads = p.grad.as_slice();
            let m = p.m.as_mut_slice();
            let v = p.v.as_mut_slice();
            for i in 0..values.len() {
                let g = grads[i] + wd * values[i];
                m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
                v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                values[i] -= opt.lr * mhat / (vhat.sqrt() + opt.eps);
            }
        }
    }
}
