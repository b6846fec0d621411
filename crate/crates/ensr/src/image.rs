//! Row-major `f64` grayscale images plus the patch and quantization
//! protocol shared by training, inference and evaluation.

use crate::error::{Error, Result};

/// The five partial-reconstruction methods, in the fixed order that
/// defines channel layout everywhere downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SrMethod {
    Zip,
    Bi,
    Nedi,
    Sc,
    Aplus,
}

impl SrMethod {
    pub const ALL: [SrMethod; 5] = [
        SrMethod::Zip,
        SrMethod::Bi,
        SrMethod::Nedi,
        SrMethod::Sc,
        SrMethod::Aplus,
    ];

    /// Short name used in file names and CLI flags.
    pub fn key(self) -> &'static str {
        match self {
            SrMethod::Zip => "zip",
            SrMethod::Bi => "bi",
            SrMethod::Nedi => "nedi",
            SrMethod::Sc => "sc",
            SrMethod::Aplus => "aplus",
        }
    }

    pub fn from_key(key: &str) -> Option<SrMethod> {
        SrMethod::ALL.iter().copied().find(|m| m.key() == key)
    }

    /// 1-based position in the fixed ordering.
    pub fn index(self) -> usize {
        SrMethod::ALL.iter().position(|&m| m == self).unwrap() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Shape(format!(
                "image buffer holds {} samples, expected {}x{}={}",
                data.len(),
                h,
                w,
                h * w
            )));
        }
        Ok(Image { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Image {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.w + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.w..(y + 1) * self.w]
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        (lo, hi)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Values clipped into `[lo, hi]`.
    pub fn clip(mut self, lo: f64, hi: f64) -> Self {
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
        self
    }
}

/// Cuts `img` into `patch`x`patch` tiles on a stride-`stride` grid,
/// top-left origin, row-major grid order. The grid must tile the image
/// exactly: `(H - patch) % stride == 0` and likewise for W.
pub fn patchify(img: &Image, patch: usize, stride: usize) -> Result<Vec<Image>> {
    if patch == 0 || stride == 0 {
        return Err(Error::Shape("patch and stride must be positive".into()));
    }
    if patch > img.h || patch > img.w {
        return Err(Error::Shape(format!(
            "patch {} exceeds image {}x{}",
            patch, img.h, img.w
        )));
    }
    if (img.h - patch) % stride != 0 || (img.w - patch) % stride != 0 {
        return Err(Error::Shape(format!(
            "patch grid (patch={}, stride={}) does not tile {}x{}",
            patch, stride, img.h, img.w
        )));
    }
    let ny = (img.h - patch) / stride + 1;
    let nx = (img.w - patch) / stride + 1;
    let mut out = Vec::with_capacity(ny * nx);
    for gy in 0..ny {
        for gx in 0..nx {
            let mut p = Image::zeros(patch, patch);
            for dy in 0..patch {
                let src = &img.row(gy * stride + dy)[gx * stride..gx * stride + patch];
                p.data_mut()[dy * patch..(dy + 1) * patch].copy_from_slice(src);
            }
            out.push(p);
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`]: overlapping contributions are averaged per
/// pixel, so a `patchify`/`unpatchify` round trip reproduces the image
/// exactly (every contribution to a pixel is the same value).
pub fn unpatchify(
    patches: &[Image],
    h: usize,
    w: usize,
    patch: usize,
    stride: usize,
) -> Result<Image> {
    if patch == 0 || stride == 0 || patch > h || patch > w {
        return Err(Error::Shape("bad patch geometry".into()));
    }
    if (h - patch) % stride != 0 || (w - patch) % stride != 0 {
        return Err(Error::Shape("patch grid does not tile target".into()));
    }
    let ny = (h - patch) / stride + 1;
    let nx = (w - patch) / stride + 1;
    if patches.len() != ny * nx {
        return Err(Error::Shape(format!(
            "{} patches given, grid needs {}",
            patches.len(),
            ny * nx
        )));
    }
    let mut acc = vec![0.0f64; h * w];
    let mut cnt = vec![0.0f64; h * w];
    for gy in 0..ny {
        for gx in 0..nx {
            let p = &patches[gy * nx + gx];
            if p.h() != patch || p.w() != patch {
                return Err(Error::Shape("patch size mismatch".into()));
            }
            for dy in 0..patch {
                let y = gy * stride + dy;
                for dx in 0..patch {
                    let x = gx * stride + dx;
                    acc[y * w + x] += p.at(dy, dx);
                    cnt[y * w + x] += 1.0;
                }
            }
        }
    }
    for i in 0..acc.len() {
        acc[i] /= cnt[i];
    }
    Image::new(h, w, acc)
}

/// Affine quantization parameters. `degenerate` marks a constant image,
/// which quantizes to all zeros and dequantizes back to the constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub min: f64,
    pub max: f64,
    pub degenerate: bool,
}

/// Maps `[min, max]` affinely onto `0..=255` with round-half-away-from-zero.
pub fn quantize(img: &Image) -> (Vec<u8>, QuantParams) {
    let (min, max) = img.min_max();
    if !(max > min) {
        return (
            vec![0u8; img.data.len()],
            QuantParams {
                min,
                max,
                degenerate: true,
            },
        );
    }
    let scale = 255.0 / (max - min);
    let q = img
        .data
        .iter()
        .map(|&v| ((v - min) * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    (
        q,
        QuantParams {
            min,
            max,
            degenerate: false,
        },
    )
}

pub fn dequantize(q: &[u8], h: usize, w: usize, p: QuantParams) -> Result<Image> {
    if q.len() != h * w {
        return Err(Error::Shape("quantized buffer size mismatch".into()));
    }
    if p.degenerate {
        return Image::new(h, w, vec![p.min; h * w]);
    }
    let step = (p.max - p.min) / 255.0;
    Image::new(h, w, q.iter().map(|&v| p.min + v as f64 * step).collect())
}
