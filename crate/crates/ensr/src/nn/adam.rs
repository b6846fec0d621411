//! Adam with bias correction. Moment buffers are keyed like the
//! parameter store and updated in sorted order, so a run is a pure
//! function of (initial params, gradient sequence).

use super::params::ParamStore;
use super::tensor::Tensor;
use std::collections::BTreeMap;

#[derive(Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub(crate) t: u64,
    pub(crate) m: BTreeMap<String, Tensor>,
    pub(crate) v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Adam {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over every parameter that received a gradient;
    /// parameters absent from `grads` are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params.get_mut(name);
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch for {}", name);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            for i in 0..g.numel() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                p.data_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_signwise() {
        // with bias correction, step 1 is exactly -lr * g / (|g| + eps)
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let mut opt = Adam::new(0.1, 0.9, 0.999);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::new(vec![2], vec![3.0, -0.5]).unwrap());
        opt.step(&mut p, &grads);
        let w = p.get("w");
        assert!((w.data()[0] - (1.0 - 0.1 * (3.0 / (3.0 + 1e-8)))).abs() < 1e-12);
        assert!((w.data()[1] - (-2.0 + 0.1 * (0.5 / (0.5 + 1e-8)))).abs() < 1e-12);
    }

    #[test]
    fn two_steps_match_hand_computation() {
        let (b1, b2, lr, eps) = (0.5, 0.75, 0.2, 1e-8);
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![1], vec![0.0]).unwrap());
        let mut opt = Adam::new(lr, b1, b2);
        opt.eps = eps;
        let gs = [2.0, -1.0];
        let mut w = 0.0;
        let (mut m, mut v) = (0.0, 0.0);
        for (i, &g) in gs.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            w -= lr * mhat / (vhat.sqrt() + eps);
            let mut grads = BTreeMap::new();
            grads.insert("w".to_string(), Tensor::new(vec![1], vec![g]).unwrap());
            opt.step(&mut p, &grads);
            assert!((p.get("w").data()[0] - w).abs() < 1e-14, "step {}", t);
        }
    }

    #[test]
    fn zero_beta1_tracks_raw_gradient() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![1], vec![5.0]).unwrap());
        let mut opt = Adam::new(0.01, 0.0, 0.9);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::new(vec![1], vec![4.0]).unwrap());
        opt.step(&mut p, &grads);
        // m = g exactly; v-hat = g^2; update = lr * g/|g|
        assert!((p.get("w").data()[0] - (5.0 - 0.01 * (4.0 / (4.0 + 1e-8)))).abs() < 1e-12);
    }

    #[test]
    fn untouched_params_stay_fixed() {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::new(vec![1], vec![1.0]).unwrap());
        p.insert("b", Tensor::new(vec![1], vec![2.0]).unwrap());
        let mut opt = Adam::new(0.1, 0.9, 0.999);
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), Tensor::new(vec![1], vec![1.0]).unwrap());
        opt.step(&mut p, &grads);
        assert_eq!(p.get("b").data()[0], 2.0);
        assert_ne!(p.get("a").data()[0], 1.0);
    }
}
