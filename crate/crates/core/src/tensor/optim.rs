use serde::{Deserialize, Serialize};

use super::ParamStore;

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2.5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam update over every parameter that holds a gradient,
/// followed by zeroing all gradients.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) {
    store.step += 1;
    let t = store.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..store.len() {
        let id = super::ParamId(i);
        let Some(grad) = store.get(id).grad().map(<[f64]>::to_vec) else { continue };
        let (m, v) = (&mut store.first_moment[i], &mut store.second_moment[i]);
        let mut delta = vec![0.0; grad.len()];
        for j in 0..grad.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * grad[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * grad[j] * grad[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            delta[j] = cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
        store.get_mut(id).data_mut().iter_mut().zip(&delta).for_each(|(p, d)| *p -= d);
    }
    store.zero_grad();
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for i in 0..store.len() {
            if let Some(g) = store.get_mut(super::ParamId(i)).grad_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    norm
}
