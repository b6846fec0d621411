//! Discrete Fourier transforms, self-contained.
//!
//! Power-of-two lengths run an iterative radix-2 Cooley-Tukey; anything
//! else goes through Bluestein's chirp-z reduction to a power-of-two
//! circular convolution, so every length is supported in O(n log n).
//! Both directions are unnormalized here; callers apply their own scale.

use num_complex::Complex64;
use std::f64::consts::{PI, TAU};

fn fft_pow2(x: &mut [Complex64], inverse: bool) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            x.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let ang = sign * TAU / len as f64;
        let tw: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, ang * k as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let u = x[start + k];
                let v = x[start + k + half] * tw[k];
                x[start + k] = u + v;
                x[start + k + half] = u - v;
            }
        }
        len <<= 1;
    }
}

fn fft_bluestein(x: &mut [Complex64], inverse: bool) {
    let n = x.len();
    let m = (2 * n - 1).next_power_of_two();
    let sign = if inverse { 1.0 } else { -1.0 };
    // chirp[k] = exp(sign*i*pi*k^2/n); k^2 is tracked mod 2n so the
    // angle argument never grows, keeping the twiddles accurate.
    let mut chirp = Vec::with_capacity(n);
    let mut r: u64 = 0;
    for k in 0..n as u64 {
        if k > 0 {
            r = (r + 2 * k - 1) % (2 * n as u64);
        }
        chirp.push(Complex64::from_polar(1.0, sign * PI * r as f64 / n as f64));
    }
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = x[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = Complex64::new(1.0, 0.0);
    for k in 1..n {
        let c = chirp[k].conj();
        b[k] = c;
        b[m - k] = c;
    }
    fft_pow2(&mut a, false);
    fft_pow2(&mut b, false);
    for i in 0..m {
        a[i] *= b[i];
    }
    fft_pow2(&mut a, true);
    let inv_m = 1.0 / m as f64;
    for k in 0..n {
        x[k] = a[k] * chirp[k] * inv_m;
    }
}

/// Unnormalized DFT of any length; `inverse` flips the exponent sign.
pub fn fft_1d(x: &mut [Complex64], inverse: bool) {
    if x.len() <= 1 {
        return;
    }
    if x.len().is_power_of_two() {
        fft_pow2(x, inverse);
    } else {
        fft_bluestein(x, inverse);
    }
}

pub fn transpose(h: usize, w: usize, data: &[Complex64]) -> Vec<Complex64> {
    debug_assert_eq!(data.len(), h * w);
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = data[y * w + x];
        }
    }
    out
}

/// In-place separable 2-D DFT over a row-major `h`x`w` buffer,
/// unnormalized, natural (DC at index 0) layout.
pub fn fft_2d(h: usize, w: usize, data: &mut Vec<Complex64>, inverse: bool) {
    debug_assert_eq!(data.len(), h * w);
    for row in data.chunks_exact_mut(w) {
        fft_1d(row, inverse);
    }
    let mut t = transpose(h, w, data);
    for col in t.chunks_exact_mut(h) {
        fft_1d(col, inverse);
    }
    *data = transpose(w, h, &t);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
        let n = x.len();
        let sign = if inverse { 1.0 } else { -1.0 };
        (0..n)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, &v) in x.iter().enumerate() {
                    let ang = sign * TAU * (k as f64) * (j as f64) / n as f64;
                    acc += v * Complex64::from_polar(1.0, ang);
                }
                acc
            })
            .collect()
    }

    fn signal(n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|i| {
                Complex64::new(
                    (i as f64 * 0.7).sin() + 0.3,
                    (i as f64 * 1.3).cos() * 0.5,
                )
            })
            .collect()
    }

    fn assert_close(a: &[Complex64], b: &[Complex64], tol: f64) {
        let scale = b.iter().map(|v| v.norm()).fold(1.0f64, f64::max);
        for (x, y) in a.iter().zip(b) {
            assert!(
                (x - y).norm() <= tol * scale,
                "{} vs {} (scale {})",
                x,
                y,
                scale
            );
        }
    }

    #[test]
    fn matches_naive_all_paths() {
        // powers of two, odd, even-composite, and the Bluestein m-wrap edge
        for n in [1usize, 2, 3, 4, 5, 6, 8, 10, 12, 15, 16, 27, 96, 320] {
            let sig = signal(n);
            let mut x = sig.clone();
            fft_1d(&mut x, false);
            assert_close(&x, &naive_dft(&sig, false), 1e-11);
            let mut y = sig.clone();
            fft_1d(&mut y, true);
            assert_close(&y, &naive_dft(&sig, true), 1e-11);
        }
    }

    #[test]
    fn forward_inverse_roundtrip() {
        for n in [4usize, 6, 9, 320] {
            let sig = signal(n);
            let mut x = sig.clone();
            fft_1d(&mut x, false);
            fft_1d(&mut x, true);
            let inv_n = 1.0 / n as f64;
            for v in &mut x {
                *v *= inv_n;
            }
            assert_close(&x, &sig, 1e-12);
        }
    }

    #[test]
    fn parseval_energy() {
        let sig = signal(20);
        let mut x = sig.clone();
        fft_1d(&mut x, false);
        let e_time: f64 = sig.iter().map(|v| v.norm_sqr()).sum();
        let e_freq: f64 = x.iter().map(|v| v.norm_sqr()).sum::<f64>() / 20.0;
        assert!((e_time - e_freq).abs() < 1e-10 * e_time);
    }

    #[test]
    fn dft_2d_matches_naive() {
        let (h, w) = (6usize, 4usize);
        let sig = signal(h * w);
        let mut x = sig.clone();
        fft_2d(h, w, &mut x, false);

        let mut want = vec![Complex64::new(0.0, 0.0); h * w];
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for x2 in 0..w {
                        let ang = -TAU
                            * ((ky * y) as f64 / h as f64 + (kx * x2) as f64 / w as f64);
                        acc += sig[y * w + x2] * Complex64::from_polar(1.0, ang);
                    }
                }
                want[ky * w + kx] = acc;
            }
        }
        assert_close(&x, &want, 1e-11);
    }
}
