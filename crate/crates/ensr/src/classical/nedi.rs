//! Edge-directed 2x interpolation (Li-Orchard scheme).
//!
//! Low-res pixels land on the even HR lattice. The two missing cosets
//! are filled in turn by 4-tap linear predictors whose weights are
//! re-estimated per pixel by least squares over a local 8x8 training
//! window, exploiting that edge orientation statistics survive the
//! change of scale. Ill-conditioned fits fall back to plain averaging.

use crate::error::Result;
use crate::image::Image;
use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

const COND_LIMIT: f64 = 1e8;
const MIN_SAMPLES: usize = 8;

/// Weights from normal equations, or None when the window is too
/// uniform / ambiguous to support a stable estimate.
fn fit_weights(rows: &[[f64; 4]], targets: &[f64]) -> Option<Vector4<f64>> {
    if rows.len() < MIN_SAMPLES {
        return None;
    }
    let c = DMatrix::from_fn(rows.len(), 4, |i, j| rows[i][j]);
    let y = DVector::from_column_slice(targets);
    let r: Matrix4<f64> = (c.transpose() * &c).fixed_view::<4, 4>(0, 0).into_owned();
    let rhs: Vector4<f64> = (c.transpose() * y).fixed_view::<4, 1>(0, 0).into_owned();
    let svd = r.svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) || smax / smin > COND_LIMIT {
        return None;
    }
    r.lu().solve(&rhs).map(|w| Vector4::from(w))
}

pub fn upscale2x(img: &Image) -> Result<Image> {
    let (h, w) = (img.h(), img.w());
    let (hh, ww) = (2 * h, 2 * w);
    let mut out = Image::zeros(hh, ww);
    for y in 0..h {
        for x in 0..w {
            out.set(2 * y, 2 * x, img.at(y, x));
        }
    }

    // mean over the in-bounds subset; every candidate is on an
    // already-filled coset, so no zero placeholder can leak in
    let mean_at = |o: &Image, coords: [(isize, isize); 4]| -> f64 {
        let mut s = 0.0;
        let mut n = 0.0;
        for (y, x) in coords {
            if y >= 0 && x >= 0 && (y as usize) < hh && (x as usize) < ww {
                s += o.at(y as usize, x as usize);
                n += 1.0;
            }
        }
        s / n
    };

    // pass 1: odd/odd sites from their four diagonal neighbors
    for y in 0..h {
        for x in 0..w {
            let (cy, cx) = (2 * y + 1, 2 * x + 1);
            let mut value = None;
            if h >= 8 && w >= 8 && y + 1 < h && x + 1 < w {
                // 8x8 training window in source coordinates, clamped to
                // the frame; samples are window pixels whose diagonal
                // neighbors stay inside the window
                let wy0 = (y as isize - 3).clamp(0, h as isize - 8) as usize;
                let wx0 = (x as isize - 3).clamp(0, w as isize - 8) as usize;
                let mut rows = Vec::with_capacity(36);
                let mut targets = Vec::with_capacity(36);
                for j in wy0 + 1..wy0 + 7 {
                    for i in wx0 + 1..wx0 + 7 {
                        rows.push([
                            img.at(j - 1, i - 1),
                            img.at(j - 1, i + 1),
                            img.at(j + 1, i - 1),
                            img.at(j + 1, i + 1),
                        ]);
                        targets.push(img.at(j, i));
                    }
                }
                if let Some(wt) = fit_weights(&rows, &targets) {
                    let n = [
                        out.at(cy - 1, cx - 1),
                        out.at(cy - 1, cx + 1),
                        out.at(cy + 1, cx - 1),
                        out.at(cy + 1, cx + 1),
                    ];
                    value = Some(wt[0] * n[0] + wt[1] * n[1] + wt[2] * n[2] + wt[3] * n[3]);
                }
            }
            let value = value.unwrap_or_else(|| {
                let (y, x) = (cy as isize, cx as isize);
                mean_at(&out, [(y - 1, x - 1), (y - 1, x + 1), (y + 1, x - 1), (y + 1, x + 1)])
            });
            out.set(cy, cx, value);
        }
    }

    // pass 2: remaining sites (odd coordinate sum) from their four
    // axial neighbors. The quincunx filled so far is the 45-degree
    // rotation of a square lattice, so the pass-1 relation "predict
    // from neighbors at twice the prediction distance, same
    // orientation" becomes: train on distance-2 axial neighbors.
    for cy in 0..hh {
        let x0 = if cy % 2 == 0 { 1 } else { 0 };
        for cx in (x0..ww).step_by(2) {
            let mut value = None;
            let interior =
                cy >= 5 && cx >= 5 && cy + 7 <= hh && cx + 7 <= ww && h >= 8 && w >= 8;
            if interior {
                // 8x8 box around the site; samples are its filled coset
                let mut rows = Vec::with_capacity(32);
                let mut targets = Vec::with_capacity(32);
                for j in cy - 3..cy + 5 {
                    for i in cx - 3..cx + 5 {
                        if (j + i) % 2 != 0 {
                            continue;
                        }
                        rows.push([
                            out.at(j - 2, i),
                            out.at(j + 2, i),
                            out.at(j, i - 2),
                            out.at(j, i + 2),
                        ]);
                        targets.push(out.at(j, i));
                    }
                }
                if let Some(wt) = fit_weights(&rows, &targets) {
                    value = Some(
                        wt[0] * out.at(cy - 1, cx)
                            + wt[1] * out.at(cy + 1, cx)
                            + wt[2] * out.at(cy, cx - 1)
                            + wt[3] * out.at(cy, cx + 1),
                    );
                }
            }
            let value = value.unwrap_or_else(|| {
                let (y, x) = (cy as isize, cx as isize);
                mean_at(&out, [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)])
            });
            out.set(cy, cx, value);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_source_samples() {
        let img = Image::new(
            12,
            10,
            (0..120).map(|i| ((i * 13) % 31) as f64).collect(),
        )
        .unwrap();
        let up = upscale2x(&img).unwrap();
        assert_eq!((up.h(), up.w()), (24, 20));
        for y in 0..12 {
            for x in 0..10 {
                assert_eq!(up.at(2 * y, 2 * x), img.at(y, x));
            }
        }
    }

    #[test]
    fn flat_image_fallback() {
        // constant input: every LS system is singular, fallback averages
        // reproduce the constant everywhere
        let img = Image::new(9, 9, vec![4.0; 81]).unwrap();
        let up = upscale2x(&img).unwrap();
        for &v in up.data() {
            assert!((v - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstructs_linear_ramp() {
        // a plane is in the span of both 4-tap predictors, so either the
        // LS fit or the average reproduces it exactly away from borders
        let img = Image::new(
            16,
            16,
            (0..256)
                .map(|i| (i / 16) as f64 * 2.0 + (i % 16) as f64 * 0.5)
                .collect(),
        )
        .unwrap();
        let up = upscale2x(&img).unwrap();
        for y in 2..30 {
            for x in 2..30 {
                let want = y as f64 * 1.0 + x as f64 * 0.25;
                assert!(
                    (up.at(y, x) - want).abs() < 1e-6,
                    "({}, {}): {} vs {}",
                    y,
                    x,
                    up.at(y, x),
                    want
                );
            }
        }
    }

    #[test]
    fn small_images_fall_back_cleanly() {
        let img = Image::new(3, 3, (0..9).map(|i| i as f64).collect()).unwrap();
        let up = upscale2x(&img).unwrap();
        assert_eq!((up.h(), up.w()), (6, 6));
        for &v in up.data() {
            assert!(v.is_finite());
        }
    }
}
