use crate::autodiff::{Array, ParamStore};
use crate::scalar::Scalar;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    steps: u64,
    m: Vec<Array<T>>,
    v: Vec<Array<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, weight_decay: f64) -> Self {
        let zeros: Vec<Array<T>> = store.iter().map(|p| Array::zeros(p.value.shape().to_vec())).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, steps: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates every parameter from its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.steps += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.steps as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.steps as i32));
        let lr_t = T::of(lr);
        let decay = T::of(1.0 - lr * self.weight_decay);
        let eps = T::of(self.eps);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let value = p.value.data_mut();
            for i in 0..value.len() {
                let (mi, vi) = (&mut m.data_mut()[i], &mut v.data_mut()[i]);
                *mi = b1 * *mi + (T::one() - b1) * g[i];
                *vi = b2 * *vi + (T::one() - b2) * g[i] * g[i];
                let update = (*mi / c1) / ((*vi / c2).sqrt() + eps);
                value[i] = value[i] * decay - lr_t * update;
            }
        }
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = store.iter().flat_map(|p| p.grad.data().iter()).map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for p in store.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}
