//! Classical 2x upscalers: cubic convolution, edge-directed
//! interpolation, and the two dictionary methods (sparse coding and
//! anchored regression) that share a feature pipeline.

pub mod bicubic;
pub mod features;
pub mod ksvd;
pub mod nedi;

mod aplus;
mod sc;

pub use aplus::AplusModel;
pub use sc::ScModel;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io;
use features::Pca;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Knobs shared by the dictionary upscalers.
#[derive(Debug, Clone)]
pub struct DictCfg {
    pub atoms: usize,
    pub sparsity: usize,
    pub ksvd_iters: usize,
    pub patch: usize,
    pub pca_var: f64,
    pub pca_max: usize,
    pub lambda: f64,
    pub neighborhood: usize,
    pub train_stride: usize,
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for DictCfg {
    fn default() -> Self {
        DictCfg {
            atoms: 1024,
            sparsity: 3,
            ksvd_iters: 10,
            patch: 6,
            pca_var: 0.999,
            pca_max: 30,
            lambda: 0.1,
            neighborhood: 256,
            train_stride: 2,
            max_samples: 20000,
            seed: 0,
        }
    }
}

/// Gathers (gradient-feature, residual-target) patch pairs from
/// LR/HR image pairs, reservoir-sampled down to `max_samples` so memory
/// stays bounded on large corpora. Columns are samples.
pub(crate) fn harvest(pairs: &[(Image, Image)], cfg: &DictCfg) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = cfg.patch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut feats: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<Vec<f64>> = Vec::new();
    let mut seen = 0usize;
    for (lr, hr) in pairs {
        let up = bicubic::upscale2x(lr);
        if up.h() != hr.h() || up.w() != hr.w() {
            return Err(Error::Shape(format!(
                "training pair mismatch: 2x{}x{} vs {}x{}",
                lr.h(),
                lr.w(),
                hr.h(),
                hr.w()
            )));
        }
        if up.h() < p || up.w() < p {
            return Err(Error::Shape("image smaller than feature patch".into()));
        }
        let maps = features::gradient_maps(&up);
        for y in (0..=up.h() - p).step_by(cfg.train_stride) {
            for x in (0..=up.w() - p).step_by(cfg.train_stride) {
                let f = features::gather(&maps, y, x, p);
                let mut t = Vec::with_capacity(p * p);
                for dy in 0..p {
                    for dx in 0..p {
                        t.push(hr.at(y + dy, x + dx) - up.at(y + dy, x + dx));
                    }
                }
                seen += 1;
                if feats.len() < cfg.max_samples {
                    feats.push(f);
                    targets.push(t);
                } else {
                    let j = rng.gen_range(0..seen);
                    if j < cfg.max_samples {
                        feats[j] = f;
                        targets[j] = t;
                    }
                }
            }
        }
    }
    let n = feats.len();
    if n < 2 {
        return Err(Error::Shape("not enough training patches".into()));
    }
    let fd = feats[0].len();
    let td = targets[0].len();
    Ok((
        DMatrix::from_fn(fd, n, |r, c| feats[c][r]),
        DMatrix::from_fn(td, n, |r, c| targets[c][r]),
    ))
}

/// Stride-1 dictionary inference: predict a residual patch from each
/// PCA feature, overlap-average, add onto the cubic baseline.
pub(crate) fn upscale_residual(
    lr: &Image,
    pca: &Pca,
    patch: usize,
    mut predict: impl FnMut(&DVector<f64>) -> DVector<f64>,
) -> Result<Image> {
    let up = bicubic::upscale2x(lr);
    let (h, w) = (up.h(), up.w());
    if h < patch || w < patch {
        return Err(Error::Shape("image smaller than feature patch".into()));
    }
    let maps = features::gradient_maps(&up);
    let mut acc = vec![0.0f64; h * w];
    let mut cnt = vec![0.0f64; h * w];
    for y in 0..=h - patch {
        for x in 0..=w - patch {
            let raw = DVector::from_vec(features::gather(&maps, y, x, patch));
            let res = predict(&pca.project(&raw));
            debug_assert_eq!(res.len(), patch * patch);
            for dy in 0..patch {
                for dx in 0..patch {
                    acc[(y + dy) * w + (x + dx)] += res[dy * patch + dx];
                    cnt[(y + dy) * w + (x + dx)] += 1.0;
                }
            }
        }
    }
    let mut out = up;
    for i in 0..acc.len() {
        out.data_mut()[i] += acc[i] / cnt[i];
    }
    Ok(out)
}

pub(crate) fn write_mat(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let data: Vec<f64> = (0..m.nrows())
        .flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)]))
        .collect();
    io::write_real(path, &Image::new(m.nrows(), m.ncols(), data)?, 0)
}

pub(crate) fn read_mat(path: &Path) -> Result<DMatrix<f64>> {
    let (img, _) = io::read_real(path)?;
    Ok(DMatrix::from_row_slice(
        img.h(),
        img.w(),
        img.data(),
    ))
}
