//! Finite-difference gradient checking utilities.
//!
//! Kept in the library (not in a test module) so integration tests can
//! drive the same checker against full losses.

use super::tensor::Tensor;

/// Central-difference gradient of a scalar function at `x`.
pub fn numeric_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    let mut g = vec![0.0f64; x.numel()];
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    Tensor::new(x.shape().to_vec(), g).unwrap()
}

/// Largest elementwise relative error, with absolute fallback near zero:
/// max_i |a_i - b_i| / max(1, |a_i|, |b_i|).
pub fn max_rel_err(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "gradcheck shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| (p - q).abs() / 1.0_f64.max(p.abs()).max(q.abs()))
        .fold(0.0, f64::max)
}
