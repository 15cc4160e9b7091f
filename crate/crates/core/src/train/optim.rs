use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ParamSet;
use crate::tensor::{Element, Tensor};

/// AdamW with decoupled weight decay applied to matrices only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state of one phase: step count and Adam moments shaped like
/// the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub step: u64,
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
}

impl<T: Element> TrainState<T> {
    /// Zeroed moments for `params`.
    pub fn fresh(params: &ParamSet<T>) -> Self {
        let zeros = || {
            let mut z = ParamSet::new();
            for (name, t) in params.iter() {
                z.insert(name.clone(), Tensor::zeros(t.shape()));
            }
            z
        };
        TrainState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn moments_are_zero(&self) -> bool {
        self.m
            .iter()
            .chain(self.v.iter())
            .all(|(_, t)| t.data().iter().all(|&x| x == T::zero()))
    }
}

/// Global L2 norm over every gradient tensor.
pub fn global_norm<T: Element>(grads: &ParamSet<T>) -> f64 {
    grads
        .iter()
        .flat_map(|(_, t)| t.data().iter())
        .map(|&x| {
            let x = x.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm<T: Element>(grads: &mut ParamSet<T>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = T::from_f64(max_norm / (norm + 1e-6));
        for (_, t) in grads.iter_mut() {
            for x in t.data_mut() {
                *x = *x * s;
            }
        }
    }
    norm
}

impl AdamW {
    pub fn step<T: Element>(
        &self,
        params: &mut ParamSet<T>,
        grads: &ParamSet<T>,
        state: &mut TrainState<T>,
        lr: f64,
    ) -> Result<()> {
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - self.beta1), T::from_f64(1.0 - self.beta2));
        let step_size = T::from_f64(lr / bc1);
        let inv_bc2_sqrt = T::from_f64(1.0 / bc2.sqrt());
        let eps = T::from_f64(self.eps);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?;
            let m = state.m.get_mut(name)?;
            let decay = if p.ndim() >= 2 {
                T::from_f64(1.0 - lr * self.weight_decay)
            } else {
                T::one()
            };
            let v = state.v.get_mut(name)?;
            let (pd, gd, md, vd) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = b1 * md[i] + one_b1 * gd[i];
                vd[i] = b2 * vd[i] + one_b2 * gd[i] * gd[i];
                let denom = vd[i].sqrt() * inv_bc2_sqrt + eps;
                pd[i] = pd[i] * decay - step_size * md[i] / denom;
            }
        }
        Ok(())
    }
}
