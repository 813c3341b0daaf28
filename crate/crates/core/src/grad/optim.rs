use std::collections::BTreeMap;

use super::{DenseArray, Gradients, ParamStore};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescales the whole gradient when its global norm exceeds this value.
    pub clip_norm: Option<f64>,
    step: u64,
    m: BTreeMap<String, DenseArray>,
    v: BTreeMap<String, DenseArray>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let scale = match self.clip_norm {
            Some(limit) => {
                let norm = grads
                    .params
                    .values()
                    .flat_map(|g| g.data())
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                if norm > limit {
                    limit / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, g) in &grads.params {
            let Some(p) = params.get_mut(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| DenseArray::zeros(g.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| DenseArray::zeros(g.shape()));
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gs = gv * scale;
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gs;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gs * gs;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
