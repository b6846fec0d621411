//! Frequency-domain degradation and zero-fill reconstruction.
//!
//! Acquisition is modeled by keeping only the central quarter of
//! k-space (half the bandwidth per axis). The wrinkle is the Nyquist
//! bin of an even-length grid: it represents both +/- the folding
//! frequency at once. On the way down the +N and -N lines are folded
//! into one bin; on the way up the bin is split evenly across both.
//! With that bookkeeping, `downsample` after `zip_upscale` reproduces
//! the input to floating-point accuracy, and both maps keep real
//! images real.

use crate::error::{Error, Result};
use crate::fft;
use crate::image::Image;
use num_complex::Complex64;

/// DC-centered k-space grid: bin `(y, x)` holds frequency
/// `(y - h/2, x - w/2)`. Dimensions are always even.
#[derive(Debug, Clone, PartialEq)]
pub struct KGrid {
    h: usize,
    w: usize,
    data: Vec<Complex64>,
}

impl KGrid {
    pub fn new(h: usize, w: usize, data: Vec<Complex64>) -> Result<Self> {
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("k-space grid must be even, got {}x{}", h, w)));
        }
        if data.len() != h * w {
            return Err(Error::Shape("k-space buffer size mismatch".into()));
        }
        Ok(KGrid { h, w, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> Complex64 {
        self.data[y * self.w + x]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    /// log(1 + |K|), the usual k-space display transform.
    pub fn log_magnitude(&self) -> Image {
        let data = self.data.iter().map(|v| (1.0 + v.norm()).ln()).collect();
        Image::new(self.h, self.w, data).expect("dims match")
    }
}

/// Swaps half-planes so DC moves between index 0 and the grid center.
/// Involutive for even dimensions.
fn shift(h: usize, w: usize, data: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        let sy = (y + h / 2) % h;
        for x in 0..w {
            out[y * w + x] = data[sy * w + (x + w / 2) % w];
        }
    }
    out
}

/// Unitary 2-D DFT of a real image, DC-centered. Even dimensions only.
pub fn fft2(img: &Image) -> Result<KGrid> {
    let (h, w) = (img.h(), img.w());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "fft2 needs even dimensions, got {}x{}",
            h, w
        )));
    }
    let mut data: Vec<Complex64> = img
        .data()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    fft::fft_2d(h, w, &mut data, false);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in &mut data {
        *v *= scale;
    }
    KGrid::new(h, w, shift(h, w, &data))
}

/// Unitary inverse of [`fft2`]; returns the real part.
pub fn ifft2(k: &KGrid) -> Result<Image> {
    let (h, w) = (k.h, k.w);
    let mut data = shift(h, w, &k.data);
    fft::fft_2d(h, w, &mut data, true);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    Image::new(h, w, data.iter().map(|v| v.re * scale).collect())
}

/// Central crop of k-space to half size per axis, folding the two
/// source Nyquist lines into the target Nyquist bin.
fn crop_fold(k: &KGrid) -> KGrid {
    let (p, q) = (k.h / 2, k.w / 2);
    let fold = |t: usize, tlen: usize, slen: usize| -> (usize, Option<usize>) {
        // target freq g = t - tlen/2; source index of freq f is f + slen/2
        let g = t as isize - (tlen / 2) as isize;
        let base = (g + (slen / 2) as isize) as usize;
        if g == -((tlen / 2) as isize) {
            // also the aliased +Nyquist line
            (base, Some((g.abs() + (slen / 2) as isize) as usize))
        } else {
            (base, None)
        }
    };
    let mut data = vec![Complex64::new(0.0, 0.0); p * q];
    for ty in 0..p {
        let (y0, y1) = fold(ty, p, k.h);
        for tx in 0..q {
            let (x0, x1) = fold(tx, q, k.w);
            let mut acc = k.at(y0, x0);
            if let Some(x1) = x1 {
                acc += k.at(y0, x1);
            }
            if let Some(y1) = y1 {
                acc += k.at(y1, x0);
                if let Some(x1) = x1 {
                    acc += k.at(y1, x1);
                }
            }
            data[ty * q + tx] = acc;
        }
    }
    KGrid::new(p, q, data).expect("even halves")
}

/// Zero-embed k-space into a grid twice the size per axis, splitting the
/// source Nyquist line evenly across the two target lines it represents.
fn embed_split(k: &KGrid) -> KGrid {
    let (h2, w2) = (k.h * 2, k.w * 2);
    // maps a target index to (source index, weight) or None outside band
    let place = |t: usize, tlen: usize, slen: usize| -> Option<(usize, f64)> {
        let f = t as isize - (tlen / 2) as isize;
        let half = (slen / 2) as isize;
        if f > -half && f < half {
            Some(((f + half) as usize, 1.0))
        } else if f == -half || f == half {
            Some((0, 0.5)) // source index 0 is the -Nyquist bin
        } else {
            None
        }
    };
    let mut data = vec![Complex64::new(0.0, 0.0); h2 * w2];
    for ty in 0..h2 {
        let Some((sy, wy)) = place(ty, h2, k.h) else {
            continue;
        };
        for tx in 0..w2 {
            let Some((sx, wx)) = place(tx, w2, k.w) else {
                continue;
            };
            data[ty * w2 + tx] = k.at(sy, sx) * (wy * wx);
        }
    }
    KGrid::new(h2, w2, data).expect("even doubles")
}

/// Bandwidth-limited 2x downsampling: central k-space crop with Nyquist
/// folding, amplitude halved. Needs dimensions divisible by 4 so the
/// result is still an even grid.
pub fn downsample(img: &Image) -> Result<Image> {
    if img.h() % 4 != 0 || img.w() % 4 != 0 {
        return Err(Error::Shape(format!(
            "downsample needs dimensions divisible by 4, got {}x{}",
            img.h(),
            img.w()
        )));
    }
    let k = fft2(img)?;
    let mut folded = crop_fold(&k);
    for v in &mut folded.data {
        *v *= 0.5;
    }
    ifft2(&folded)
}

/// Zero-fill interpolation to 2x per axis: k-space zero-embedding with
/// Nyquist splitting, amplitude doubled. Exact right inverse of
/// [`downsample`], and interpolates the source exactly at even sites.
pub fn zip_upscale(img: &Image) -> Result<Image> {
    let k = fft2(img)?;
    let mut embedded = embed_split(&k);
    for v in &mut embedded.data {
        *v *= 2.0;
    }
    ifft2(&embedded)
}
