use thiserror::Error;

use super::{Grads, ParamStore, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; non-positive disables clipping.
    pub clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip: 5.0 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdamError {
    #[error("non-finite gradient in parameter `{0}`")]
    NonFinite(String),
}

/// Adam with bias correction. Moment buffers mirror the store's shapes.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub config: AdamConfig,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    t: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>, config: AdamConfig) -> Self {
        let zeros = || store.ids().map(|id| Tensor::zeros(store.get(id).rows(), store.get(id).cols())).collect();
        Adam { config, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Returns the gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Grads<S>) -> Result<f64, AdamError> {
        for id in store.ids() {
            if grads.get(id).is_some_and(|g| !g.all_finite()) {
                return Err(AdamError::NonFinite(store.name(id).to_string()));
            }
        }
        let norm = grads.global_norm().f64();
        let factor = if self.config.clip > 0.0 && norm > self.config.clip { self.config.clip / norm } else { 1.0 };
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (S::c(c.beta1), S::c(c.beta2));
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let step = S::c(c.lr / bc1);
        let inv_bc2 = S::c(1.0 / bc2);
        let eps = S::c(c.eps);
        let f = S::c(factor);
        for id in store.ids() {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = store.get_mut(id);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let gi = gi * f;
                *mi = b1 * *mi + (S::one() - b1) * gi;
                *vi = b2 * *vi + (S::one() - b2) * gi * gi;
                *w -= step * *mi / ((*vi * inv_bc2).sqrt() + eps);
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamId;

    fn one(x: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_f64(1, 2, &[x, -x]));
        (s, id)
    }

    fn grads(id: ParamId, g: &[f64]) -> Grads<f64> {
        let mut out = Grads { slots: vec![None] };
        out.accumulate(id, &Tensor::from_f64(1, g.len(), g));
        out
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = one(0.7);
        let mut adam = Adam::new(&s, AdamConfig::default());
        for _ in 0..3 {
            adam.step(&mut s, &grads(id, &[0.0, 0.0])).unwrap();
        }
        assert_eq!(s.get(id).data(), &[0.7, -0.7]);
    }

    #[test]
    fn constant_gradient_moves_by_lr_times_sign() {
        let (mut s, id) = one(0.0);
        let mut adam = Adam::new(&s, AdamConfig { clip: 0.0, ..Default::default() });
        let mut prev = s.get(id).clone();
        for _ in 0..200 {
            adam.step(&mut s, &grads(id, &[0.3, -2.0])).unwrap();
            let cur = s.get(id).clone();
            let d0 = cur.data()[0] - prev.data()[0];
            let d1 = cur.data()[1] - prev.data()[1];
            assert!((d0 + 1e-3).abs() < 1e-7 && (d1 - 1e-3).abs() < 1e-7, "{d0} {d1}");
            prev = cur;
        }
    }

    #[test]
    fn clipping_halves_norm_ten() {
        // With a single step Adam normalizes magnitude away, so observe the
        // first moment instead: m = (1 - beta1) * clipped grad.
        let (mut s, id) = one(0.0);
        let mut adam = Adam::new(&s, AdamConfig::default());
        let norm = adam.step(&mut s, &grads(id, &[6.0, 8.0])).unwrap();
        assert_eq!(norm, 10.0);
        let m = adam.m[0].data();
        assert!((m[0] - 0.1 * 3.0).abs() < 1e-12 && (m[1] - 0.1 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_fails_fast() {
        let (mut s, id) = one(1.0);
        let mut adam = Adam::new(&s, AdamConfig::default());
        let err = adam.step(&mut s, &grads(id, &[f64::NAN, 0.0])).unwrap_err();
        assert_eq!(err, AdamError::NonFinite("w".into()));
        assert_eq!(s.get(id).data(), &[1.0, -1.0]);
        assert_eq!(adam.steps(), 0);
    }
}
