//! Fidelity metrics and corpus-level aggregation.

use crate::error::{Error, Result};
use crate::image::Image;

/// 10*log10(peak^2 / MSE); identical inputs give +inf.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if a.h() != b.h() || a.w() != b.w() {
        return Err(Error::Shape("psnr inputs differ in size".into()));
    }
    let mut acc = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        acc += d * d;
    }
    let mse = acc / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-region separable Gaussian filter; output is (h-10)x(w-10).
fn gauss_valid(h: usize, w: usize, data: &[f64]) -> Vec<f64> {
    let k = gaussian_kernel();
    let wo = w - SSIM_WINDOW + 1;
    let ho = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; h * wo];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..wo {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * row[x + i];
            }
            horiz[y * wo + x] = acc;
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * horiz[(y + i) * wo + x];
            }
            out[y * wo + x] = acc;
        }
    }
    out
}

/// Mean structural similarity over all fully-valid 11x11 windows,
/// Gaussian-weighted (sigma 1.5), K1=0.01, K2=0.03.
pub fn ssim(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if a.h() != b.h() || a.w() != b.w() {
        return Err(Error::Shape("ssim inputs differ in size".into()));
    }
    let (h, w) = (a.h(), a.w());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {0}x{0} input, got {1}x{2}",
            SSIM_WINDOW, h, w
        )));
    }
    let xs = a.data();
    let ys = b.data();
    let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x * y).collect();

    let mu_x = gauss_valid(h, w, xs);
    let mu_y = gauss_valid(h, w, ys);
    let m_xx = gauss_valid(h, w, &xx);
    let m_yy = gauss_valid(h, w, &yy);
    let m_xy = gauss_valid(h, w, &xy);

    let c1 = (SSIM_K1 * peak) * (SSIM_K1 * peak);
    let c2 = (SSIM_K2 * peak) * (SSIM_K2 * peak);
    let mut acc = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = m_xx[i] - mx * mx;
        let vy = m_yy[i] - my * my;
        let cxy = m_xy[i] - mx * my;
        let s = ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
        acc += s;
    }
    Ok(acc / mu_x.len() as f64)
}

/// Fraction of pixels whose absolute difference is <= t, for every
/// threshold t in 0..=255. Inclusive comparison; inputs are the
/// quantized images, so the curve always ends at 1.
pub fn accuracy_curve(a: &[u8], b: &[u8]) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape("accuracy inputs empty or mismatched".into()));
    }
    let hist = diff_histogram(a, b)?;
    let total = a.len() as f64;
    let mut out = Vec::with_capacity(256);
    let mut cum = 0u64;
    for count in hist {
        cum += count;
        out.push(cum as f64 / total);
    }
    Ok(out)
}

/// Histogram of |a-b| values, the poolable form of the accuracy curve.
pub fn diff_histogram(a: &[u8], b: &[u8]) -> Result<[u64; 256]> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape("accuracy inputs empty or mismatched".into()));
    }
    let mut hist = [0u64; 256];
    for (&x, &y) in a.iter().zip(b) {
        hist[(x as i16 - y as i16).unsigned_abs() as usize] += 1;
    }
    Ok(hist)
}

/// Accuracy curve pooled over several images: per-threshold fraction of
/// all pixels, not the mean of per-image fractions.
pub fn pooled_accuracy(hists: &[[u64; 256]]) -> Result<Vec<f64>> {
    if hists.is_empty() {
        return Err(Error::Shape("no histograms to pool".into()));
    }
    let mut total = 0u64;
    let mut cum = [0u64; 256];
    for h in hists {
        for (c, &v) in cum.iter_mut().zip(h.iter()) {
            *c += v;
        }
    }
    for &v in &cum {
        total += v;
    }
    let mut out = Vec::with_capacity(256);
    let mut run = 0u64;
    for &v in &cum {
        run += v;
        out.push(run as f64 / total as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (n-1); a single observation has
/// std 0 by convention.
pub fn mean_std(xs: &[f64]) -> Result<MeanStd> {
    if xs.is_empty() {
        return Err(Error::Shape("mean_std of empty slice".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Ok(MeanStd { mean, std: 0.0 });
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok(MeanStd {
        mean,
        std: var.sqrt(),
    })
}
