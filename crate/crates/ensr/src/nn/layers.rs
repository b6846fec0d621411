//! Network building blocks composed from tape primitives, plus the
//! initializers and loss helpers shared by the GAN and the integrator.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

/// He/Kaiming uniform draw: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    assert!(fan_in > 0);
    let limit = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Zero-padded convolution with optional per-channel bias.
pub fn conv2d(t: &Tape, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Var {
    let xp = if pad > 0 { t.pad2(x, pad) } else { x };
    let y = t.conv(xp, w, stride);
    match bias {
        Some(b) => {
            let s = t.shape_of(y);
            let bb = t.bcast_bhw(b, s[0], s[2], s[3]);
            t.add(y, bb)
        }
        None => y,
    }
}

/// Layer norm over (C,H,W) per sample, with per-channel affine.
pub fn layer_norm_chw(t: &Tape, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
    let s = t.shape_of(x);
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let n = (c * h * w) as f64;
    let mu = t.scale(t.sum_hw(t.sum_c(x)), 1.0 / n); // (B,1,1,1)
    let mu_f = t.expand_c(t.expand_hw(mu, h, w), c);
    let xc = t.sub(x, mu_f);
    let var = t.scale(t.sum_hw(t.sum_c(t.mul(xc, xc))), 1.0 / n);
    let inv = t.recip(t.sqrt(t.add_scalar(var, eps)));
    let inv_f = t.expand_c(t.expand_hw(inv, h, w), c);
    let xn = t.mul(xc, inv_f);
    let g = t.bcast_bhw(gamma, b, h, w);
    let be = t.bcast_bhw(beta, b, h, w);
    t.add(t.mul(xn, g), be)
}

/// Layer norm over channels only, independently at every spatial
/// position. Statistics never cross pixels, so tiled and whole-image
/// inference agree exactly.
pub fn layer_norm_c(t: &Tape, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
    let s = t.shape_of(x);
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let n = c as f64;
    let mu = t.scale(t.sum_c(x), 1.0 / n); // (B,1,H,W)
    let xc = t.sub(x, t.expand_c(mu, c));
    let var = t.scale(t.sum_c(t.mul(xc, xc)), 1.0 / n);
    let inv = t.recip(t.sqrt(t.add_scalar(var, eps)));
    let xn = t.mul(xc, t.expand_c(inv, c));
    let g = t.bcast_bhw(gamma, b, h, w);
    let be = t.bcast_bhw(beta, b, h, w);
    t.add(t.mul(xn, g), be)
}

/// Global average pooling: (B,C,H,W) -> (B,C).
pub fn gap(t: &Tape, x: Var) -> Var {
    let s = t.shape_of(x);
    let pooled = t.scale(t.sum_hw(x), 1.0 / (s[2] * s[3]) as f64);
    t.reshape(pooled, &[s[0], s[1]])
}

pub fn mean_all(t: &Tape, x: Var) -> Var {
    let n: usize = t.shape_of(x).iter().product();
    t.scale(t.sum_all(x), 1.0 / n as f64)
}

/// |x| as a sign-masked product; the mask is constant under
/// differentiation, matching the a.e. derivative sign(x).
pub fn abs(t: &Tape, x: Var) -> Var {
    let mask = Rc::new(t.value(x).map(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    }));
    t.mul_const(x, mask)
}

pub fn mse_loss(t: &Tape, a: Var, b: Var) -> Var {
    let d = t.sub(a, b);
    mean_all(t, t.mul(d, d))
}

pub fn mae_loss(t: &Tape, a: Var, b: Var) -> Var {
    let d = t.sub(a, b);
    mean_all(t, abs(t, d))
}

fn diff_kernels(t: &Tape) -> (Var, Var) {
    // 2x2 forward-difference stencils; held as leaves so gradients flow
    // through conv_grad_input back to the images while the kernels
    // themselves are never updated
    let kx = t.leaf(Tensor::new(vec![1, 1, 2, 2], vec![-1.0, 1.0, 0.0, 0.0]).unwrap());
    let ky = t.leaf(Tensor::new(vec![1, 1, 2, 2], vec![-1.0, 0.0, 1.0, 0.0]).unwrap());
    (kx, ky)
}

/// Mean squared difference of forward-difference gradient fields,
/// averaged over both orientations. Single-channel inputs.
pub fn grad_diff_loss(t: &Tape, a: Var, b: Var) -> Var {
    assert_eq!(t.shape_of(a)[1], 1, "gradient loss expects one channel");
    let (kx, ky) = diff_kernels(t);
    let dxa = t.conv(a, kx, 1);
    let dxb = t.conv(b, kx, 1);
    let dya = t.conv(a, ky, 1);
    let dyb = t.conv(b, ky, 1);
    let ex = mse_loss(t, dxa, dxb);
    let ey = mse_loss(t, dya, dyb);
    t.scale(t.add(ex, ey), 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_rel_err, numeric_grad};
    use rand::SeedableRng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn he_uniform_range_and_determinism() {
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let a = he_uniform(&[8, 4, 3, 3], 4 * 9, &mut r1);
        let b = he_uniform(&[8, 4, 3, 3], 4 * 9, &mut r2);
        assert_eq!(a, b);
        let limit = (6.0 / 36.0_f64).sqrt();
        assert!(a.data().iter().all(|v| v.abs() < limit));
        // not degenerate
        assert!(a.data().iter().any(|v| v.abs() > limit * 0.5));
    }

    #[test]
    fn conv2d_pad_keeps_spatial_dims() {
        let t = Tape::new();
        let x = t.leaf(rand_tensor(&[2, 3, 8, 8], 1));
        let w = t.leaf(rand_tensor(&[5, 3, 3, 3], 2));
        let b = t.leaf(rand_tensor(&[5], 3));
        let y = conv2d(&t, x, w, Some(b), 1, 1);
        assert_eq!(t.shape_of(y), vec![2, 5, 8, 8]);
        let y2 = conv2d(&t, x, w, Some(b), 2, 1);
        assert_eq!(t.shape_of(y2), vec![2, 5, 4, 4]);
    }

    #[test]
    fn layer_norm_chw_normalizes_each_sample() {
        let t = Tape::new();
        let x = t.leaf(rand_tensor(&[3, 2, 4, 4], 11));
        let gamma = t.leaf(Tensor::full(&[2], 1.0));
        let beta = t.leaf(Tensor::zeros(&[2]));
        let y = t.value(layer_norm_chw(&t, x, gamma, beta, 1e-5));
        let n = 2 * 4 * 4;
        for bi in 0..3 {
            let s = &y.data()[bi * n..(bi + 1) * n];
            let mean: f64 = s.iter().sum::<f64>() / n as f64;
            let var: f64 = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4); // eps shifts it slightly
        }
    }

    #[test]
    fn layer_norm_c_normalizes_each_position() {
        let t = Tape::new();
        let x = t.leaf(rand_tensor(&[2, 4, 3, 3], 12));
        let gamma = t.leaf(Tensor::full(&[4], 1.0));
        let beta = t.leaf(Tensor::zeros(&[4]));
        let y = t.value(layer_norm_c(&t, x, gamma, beta, 1e-5));
        let (hw, c) = (9, 4);
        for bi in 0..2 {
            for pos in 0..hw {
                let vals: Vec<f64> = (0..c)
                    .map(|ci| y.data()[(bi * c + ci) * hw + pos])
                    .collect();
                let mean: f64 = vals.iter().sum::<f64>() / c as f64;
                assert!(mean.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_c_is_tiling_invariant() {
        // normalizing a spatial crop equals cropping the normalized image
        let t = Tape::new();
        let full = rand_tensor(&[1, 3, 4, 6], 13);
        let x = t.leaf(full.clone());
        let gamma = t.leaf(rand_tensor(&[3], 14));
        let beta = t.leaf(rand_tensor(&[3], 15));
        let y_full = t.value(layer_norm_c(&t, x, gamma, beta, 1e-5));
        // left 4x3 crop
        let mut crop = Tensor::zeros(&[1, 3, 4, 3]);
        for c in 0..3 {
            for y in 0..4 {
                for xx in 0..3 {
                    crop.data_mut()[(c * 4 + y) * 3 + xx] = full.data()[(c * 4 + y) * 6 + xx];
                }
            }
        }
        let xc = t.leaf(crop);
        let y_crop = t.value(layer_norm_c(&t, xc, gamma, beta, 1e-5));
        for c in 0..3 {
            for y in 0..4 {
                for xx in 0..3 {
                    let a = y_full.data()[(c * 4 + y) * 6 + xx];
                    let b = y_crop.data()[(c * 4 + y) * 3 + xx];
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradcheck_layer_norms() {
        let x0 = rand_tensor(&[2, 3, 3, 2], 21);
        let g0 = rand_tensor(&[3], 22);
        let b0 = rand_tensor(&[3], 23);
        for chw in [true, false] {
            let build = |xt: &Tensor, gt: &Tensor, bt: &Tensor| {
                let t = Tape::new();
                let x = t.leaf(xt.clone());
                let g = t.leaf(gt.clone());
                let b = t.leaf(bt.clone());
                let y = if chw {
                    layer_norm_chw(&t, x, g, b, 1e-5)
                } else {
                    layer_norm_c(&t, x, g, b, 1e-5)
                };
                let loss = t.sum_all(t.mul(y, y));
                (t, x, g, b, loss)
            };
            let (t, x, g, b, loss) = build(&x0, &g0, &b0);
            let grads = t.backward(loss);
            let checks: [(&str, Var, &Tensor); 3] =
                [("x", x, &x0), ("gamma", g, &g0), ("beta", b, &b0)];
            for (label, var, base) in checks {
                let ga = t.value(grads.wrt(var).unwrap());
                let gn = numeric_grad(
                    |p: &Tensor| {
                        let (t, _, _, _, l) = match label {
                            "x" => build(p, &g0, &b0),
                            "gamma" => build(&x0, p, &b0),
                            _ => build(&x0, &g0, p),
                        };
                        t.value(l).item()
                    },
                    base,
                    1e-5,
                );
                assert!(
                    max_rel_err(&ga, &gn) < 1e-6,
                    "{} chw={} err={}",
                    label,
                    chw,
                    max_rel_err(&ga, &gn)
                );
            }
        }
    }

    #[test]
    fn abs_loss_values_and_grad() {
        let t = Tape::new();
        let x = t.leaf(Tensor::new(vec![4], vec![-2.0, 3.0, 0.0, -0.5]).unwrap());
        let y = abs(&t, x);
        assert_eq!(t.value(y).data(), &[2.0, 3.0, 0.0, 0.5]);
        let loss = t.sum_all(y);
        let g = t.value(t.backward(loss).wrt(x).unwrap());
        assert_eq!(g.data(), &[-1.0, 1.0, 0.0, -1.0]);
    }

    #[test]
    fn losses_on_known_pair() {
        let t = Tape::new();
        let a = t.leaf(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.leaf(Tensor::new(vec![1, 1, 2, 2], vec![0.0, 4.0, 3.0, 2.0]).unwrap());
        assert!((t.value(mse_loss(&t, a, b)).item() - (1.0 + 4.0 + 0.0 + 4.0) / 4.0).abs() < 1e-12);
        assert!((t.value(mae_loss(&t, a, b)).item() - (1.0 + 2.0 + 0.0 + 2.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn grad_diff_loss_on_ramps() {
        // a is a ramp in x with slope 1, b is flat: dx differs by 1
        // everywhere, dy matches, so the loss is (1 + 0) / 2
        let t = Tape::new();
        let mut av = Tensor::zeros(&[1, 1, 3, 4]);
        for y in 0..3 {
            for x in 0..4 {
                av.data_mut()[y * 4 + x] = x as f64;
            }
        }
        let a = t.leaf(av);
        let b = t.leaf(Tensor::zeros(&[1, 1, 3, 4]));
        let l = t.value(grad_diff_loss(&t, a, b)).item();
        assert!((l - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gradcheck_grad_diff_loss() {
        let a0 = rand_tensor(&[2, 1, 4, 5], 31);
        let b0 = rand_tensor(&[2, 1, 4, 5], 32);
        let build = |at: &Tensor| {
            let t = Tape::new();
            let a = t.leaf(at.clone());
            let b = t.leaf(b0.clone());
            let l = grad_diff_loss(&t, a, b);
            (t, a, l)
        };
        let (t, a, l) = build(&a0);
        let ga = t.value(t.backward(l).wrt(a).unwrap());
        let gn = numeric_grad(
            |p: &Tensor| {
                let (t, _, l) = build(p);
                t.value(l).item()
            },
            &a0,
            1e-5,
        );
        assert!(max_rel_err(&ga, &gn) < 1e-6);
    }

    #[test]
    fn gap_averages_planes() {
        let t = Tape::new();
        let mut x = Tensor::zeros(&[1, 2, 2, 2]);
        x.data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 10.0, 10.0, 20.0, 20.0]);
        let y = t.value(gap(&t, t.leaf(x)));
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[2.5, 15.0]);
    }
}
