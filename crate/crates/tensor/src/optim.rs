//! Adam optimizer.

use crate::params::{ParamId, Params};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Option<Moments>>,
}

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> Option<&Moments> {
        self.moments.get(id.index()).and_then(Option::as_ref)
    }

    /// Restores saved state.
    pub fn restore(&mut self, step: u64, moments: Vec<(ParamId, Moments)>) {
        self.step = step;
        self.moments.clear();
        for (id, mo) in moments {
            if self.moments.len() <= id.index() {
                self.moments.resize(id.index() + 1, None);
            }
            self.moments[id.index()] = Some(mo);
        }
    }

    pub fn update(&mut self, params: &mut Params, grads: &[(ParamId, Tensor)]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads {
            if self.moments.len() <= id.index() {
                self.moments.resize(id.index() + 1, None);
            }
            let mo = self.moments[id.index()].get_or_insert_with(|| Moments {
                m: Tensor::zeros(g.dims()),
                v: Tensor::zeros(g.dims()),
            });
            let p = params.get_mut(*id);
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(mo.m.data_mut())
                .zip(mo.v.data_mut())
                .zip(g.data());
            for (((p, m), v), &g) in iter {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
