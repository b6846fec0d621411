//! Patch features for the dictionary methods: first and second order
//! gradients of the cheap upscale, gathered per patch and compressed
//! with PCA.

use crate::image::Image;
use nalgebra::{DMatrix, DVector};

/// Four same-size gradient maps of `img` (replicated borders):
/// d/dx, d/dy, half second difference in x, in y.
pub fn gradient_maps(img: &Image) -> [Image; 4] {
    let (h, w) = (img.h(), img.w());
    let at = |y: isize, x: isize| -> f64 {
        img.at(
            y.clamp(0, h as isize - 1) as usize,
            x.clamp(0, w as isize - 1) as usize,
        )
    };
    let mut gx = Image::zeros(h, w);
    let mut gy = Image::zeros(h, w);
    let mut lx = Image::zeros(h, w);
    let mut ly = Image::zeros(h, w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            gx.set(y as usize, x as usize, at(y, x + 1) - at(y, x - 1));
            gy.set(y as usize, x as usize, at(y + 1, x) - at(y - 1, x));
            lx.set(
                y as usize,
                x as usize,
                0.5 * (at(y, x + 2) - 2.0 * at(y, x) + at(y, x - 2)),
            );
            ly.set(
                y as usize,
                x as usize,
                0.5 * (at(y + 2, x) - 2.0 * at(y, x) + at(y - 2, x)),
            );
        }
    }
    [gx, gy, lx, ly]
}

/// Raw feature vector for the `patch`x`patch` tile at (y, x): the four
/// gradient maps, map-major then row-major. Length 4*patch^2.
pub fn gather(maps: &[Image; 4], y: usize, x: usize, patch: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(4 * patch * patch);
    for m in maps {
        for dy in 0..patch {
            for dx in 0..patch {
                v.push(m.at(y + dy, x + dx));
            }
        }
    }
    v
}

/// PCA projection fitted on training features. Columns of `basis` are
/// principal directions of the centered data, sign-fixed so the entry
/// of largest magnitude is positive. Projection applies the bare basis
/// with no centering: gradient features are zero-mean by construction,
/// and keeping zero mapped to zero is what lets a flat patch synthesize
/// an exactly zero residual.
#[derive(Debug, Clone)]
pub struct Pca {
    pub basis: DMatrix<f64>, // d_in x d_out
}

impl Pca {
    /// Keeps the smallest number of components explaining at least
    /// `var_keep` of the variance, capped at `max_dim`.
    pub fn fit(samples: &DMatrix<f64>, var_keep: f64, max_dim: usize) -> Pca {
        let d = samples.nrows();
        let n = samples.ncols();
        assert!(n > 1, "pca needs more than one sample");
        let mean = samples.column_mean();
        let mut centered = samples.clone();
        for mut c in centered.column_iter_mut() {
            c -= &mean;
        }
        let cov = (&centered * centered.transpose()) / (n as f64 - 1.0);
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        let mut keep = 0usize;
        let mut acc = 0.0;
        for &i in &order {
            keep += 1;
            acc += eig.eigenvalues[i].max(0.0);
            if total <= 0.0 || acc >= var_keep * total || keep == max_dim {
                break;
            }
        }
        let mut basis = DMatrix::zeros(d, keep);
        for (j, &i) in order.iter().take(keep).enumerate() {
            let mut col = eig.eigenvectors.column(i).clone_owned();
            let mut arg = 0usize;
            for r in 1..d {
                if col[r].abs() > col[arg].abs() {
                    arg = r;
                }
            }
            if col[arg] < 0.0 {
                col = -col;
            }
            basis.set_column(j, &col);
        }
        Pca { basis }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.basis.transpose() * x
    }

    pub fn project_all(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        self.basis.transpose() * xs
    }
}
