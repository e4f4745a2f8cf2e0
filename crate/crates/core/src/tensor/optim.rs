//! Adam with a cosine-annealed learning rate.

use std::f64::consts::PI;

use super::{s, Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Cosine annealing between `lr_min` and `lr_max` with half-period `period`:
/// `lr(t) = lr_min + (lr_max − lr_min)·(1 + cos(π·t/period))/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub lr_min: f64,
    pub lr_max: f64,
    pub period: usize,
}

impl CosineSchedule {
    pub fn lr_at(&self, t: usize) -> f64 {
        if self.period == 0 {
            return self.lr_max;
        }
        let phase = PI * t as f64 / self.period as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + phase.cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for every parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>, hyper: AdamHyper) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        Self {
            m,
            v,
            step: 0,
            hyper,
        }
    }

    /// One bias-corrected Adam update at learning rate `lr`.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape_err(
                "adam_step",
                format!("{} params, {} grads, {} moment buffers", params.len(), grads.len(), self.m.len()),
            ));
        }
        self.step += 1;
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2): (T, T) = (s(beta1), s(beta2));
        let step_size: T = s(lr / bc1);
        let bc2_sqrt: T = s(bc2.sqrt());
        let eps: T = s(eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(shape_err("adam_step", format!("parameter {i} shape mismatch")));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let denom = vv.sqrt() / bc2_sqrt + eps;
                *pv = *pv - step_size * *mv / denom;
            }
        }
        Ok(())
    }
}
