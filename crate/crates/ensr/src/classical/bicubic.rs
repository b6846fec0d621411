//! Keys cubic-convolution resampling (a = -0.5), replicated borders.

use crate::image::Image;

/// Keys kernel with a = -0.5. Interpolating: W(0)=1, W(k)=0 for integer
/// k != 0, and integer shifts sum to one (flat stays flat).
pub fn keys(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Value at continuous source coordinate (fy, fx); taps beyond the edge
/// replicate the border pixel.
pub fn sample(img: &Image, fy: f64, fx: f64) -> f64 {
    let y0 = fy.floor() as isize;
    let x0 = fx.floor() as isize;
    let hm = img.h() as isize - 1;
    let wm = img.w() as isize - 1;
    let mut acc = 0.0;
    for dy in -1isize..=2 {
        let wy = keys(fy - (y0 + dy) as f64);
        let yy = (y0 + dy).clamp(0, hm) as usize;
        for dx in -1isize..=2 {
            let wx = keys(fx - (x0 + dx) as f64);
            let xx = (x0 + dx).clamp(0, wm) as usize;
            acc += wy * wx * img.at(yy, xx);
        }
    }
    acc
}

/// 2x upscale with center-aligned grids: output pixel `o` samples the
/// source at `(o + 0.5)/2 - 0.5`.
pub fn upscale2x(img: &Image) -> Image {
    let (h, w) = (img.h() * 2, img.w() * 2);
    let mut out = Image::zeros(h, w);
    for oy in 0..h {
        let fy = (oy as f64 + 0.5) / 2.0 - 0.5;
        for ox in 0..w {
            let fx = (ox as f64 + 0.5) / 2.0 - 0.5;
            out.set(oy, ox, sample(img, fy, fx));
        }
    }
    out
}
