use super::{Grads, ParamStore};

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

/// One bias-corrected Adam step on every trainable tensor. Frozen tensors
/// and their moments are left untouched.
pub fn adam_update(store: &mut ParamStore, grads: &Grads, opt: &Adam) {
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    for (p, g) in store.params.iter_mut().zip(&grads.values) {
        if !p.trainable {
            continue;
        }
        for i in 0..g.len() {
            p.m[i] = opt.beta1 * p.m[i] + (1.0 - opt.beta1) * g[i];
            p.v[i] = opt.beta2 * p.v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            let m_hat = p.m[i] / bc1;
            let v_hat = p.v[i] / bc2;
            p.value.data[i] -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
        }
    }
}
