//! Anchored neighborhood regression: one ridge regressor per
//! dictionary atom, fitted offline on the atom's nearest training
//! samples, selected at runtime by correlation.

use super::features::Pca;
use super::ksvd;
use super::{harvest, read_mat, upscale_residual, write_mat, DictCfg};
use crate::error::{Error, Result};
use crate::image::Image;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct AplusModel {
    pub(crate) pca: Pca,
    pub dict: DMatrix<f64>,
    /// One (patch^2 x feature-dim) regressor per atom.
    pub regressors: Vec<DMatrix<f64>>,
    pub patch: usize,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    patch: usize,
    atoms: usize,
}

impl AplusModel {
    pub fn train(pairs: &[(Image, Image)], cfg: &DictCfg) -> Result<AplusModel> {
        let (raw, targets) = harvest(pairs, cfg)?;
        let pca = Pca::fit(&raw, cfg.pca_var, cfg.pca_max);
        let feats = pca.project_all(&raw);
        let n = feats.ncols();
        let d = feats.nrows();
        let atoms = cfg.atoms.min(n);
        let (dict, _) = ksvd::ksvd(&feats, atoms, cfg.sparsity, cfg.ksvd_iters, cfg.seed);

        // unit-norm copies for the angular neighborhood ranking
        let mut unit = feats.clone();
        for mut c in unit.column_iter_mut() {
            let nn = c.norm();
            if nn > 1e-12 {
                c /= nn;
            } else {
                c.fill(0.0);
            }
        }

        let m = cfg.neighborhood.min(n);
        let mut regressors = Vec::with_capacity(atoms);
        for k in 0..atoms {
            let scores = dict.column(k).transpose() * &unit; // 1 x n
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .abs()
                    .partial_cmp(&scores[a].abs())
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let picks = &order[..m];
            let nb = feats.select_columns(picks.iter());
            let yb = targets.select_columns(picks.iter());
            let mut gram = &nb * nb.transpose();
            for i in 0..d {
                gram[(i, i)] += cfg.lambda;
            }
            let inv = gram
                .cholesky()
                .ok_or_else(|| Error::Numeric("ridge gram not positive definite".into()))?
                .inverse();
            regressors.push(yb * nb.transpose() * inv);
        }
        Ok(AplusModel {
            pca,
            dict,
            regressors,
            patch: cfg.patch,
        })
    }

    pub fn upscale2x(&self, lr: &Image) -> Result<Image> {
        let zero = DVector::zeros(self.patch * self.patch);
        upscale_residual(lr, &self.pca, self.patch, |f| {
            if f.norm() < 1e-12 {
                return zero.clone();
            }
            let corr = self.dict.transpose() * f;
            let mut best = 0usize;
            for k in 1..corr.len() {
                if corr[k].abs() > corr[best].abs() {
                    best = k;
                }
            }
            &self.regressors[best] * f
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        write_mat(&dir.join("pca_basis.raw"), &self.pca.basis)?;
        write_mat(&dir.join("dict.raw"), &self.dict)?;
        // all regressors stacked vertically, atom-major
        let rows = self.patch * self.patch;
        let d = self.pca.dim();
        let mut stack = DMatrix::zeros(rows * self.regressors.len(), d);
        for (k, r) in self.regressors.iter().enumerate() {
            stack.view_mut((k * rows, 0), (rows, d)).copy_from(r);
        }
        write_mat(&dir.join("regressors.raw"), &stack)?;
        let meta = Meta {
            kind: "aplus".into(),
            patch: self.patch,
            atoms: self.regressors.len(),
        };
        fs::write(
            dir.join("meta.json"),
            serde_json::to_string_pretty(&meta)? + "\n",
        )
        .map_err(|e| Error::io(dir.display().to_string(), e))
    }

    pub fn load(dir: &Path) -> Result<AplusModel> {
        let meta: Meta = serde_json::from_str(
            &fs::read_to_string(dir.join("meta.json"))
                .map_err(|e| Error::io(dir.display().to_string(), e))?,
        )?;
        if meta.kind != "aplus" {
            return Err(Error::Container(format!(
                "{}: model kind {:?}, expected aplus",
                dir.display(),
                meta.kind
            )));
        }
        let pca = Pca {
            basis: read_mat(&dir.join("pca_basis.raw"))?,
        };
        let dict = read_mat(&dir.join("dict.raw"))?;
        let stack = read_mat(&dir.join("regressors.raw"))?;
        let rows = meta.patch * meta.patch;
        if meta.atoms * rows != stack.nrows() {
            return Err(Error::Container("regressor stack size mismatch".into()));
        }
        let regressors = (0..meta.atoms)
            .map(|k| stack.view((k * rows, 0), (rows, stack.ncols())).into_owned())
            .collect();
        Ok(AplusModel {
            pca,
            dict,
            regressors,
            patch: meta.patch,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::bicubic;
    use crate::testutil::scratch_dir;

    fn textured(h: usize, w: usize, phase: f64) -> Image {
        Image::new(
            h,
            w,
            (0..h * w)
                .map(|i| {
                    let y = (i / w) as f64;
                    let x = (i % w) as f64;
                    0.5 + 0.25 * ((0.45 * x + phase).sin() + (0.6 * y - 0.5 * phase).cos())
                        + 0.08 * ((x - y) * 0.8).cos()
                })
                .collect(),
        )
        .unwrap()
    }

    fn small_cfg() -> DictCfg {
        DictCfg {
            atoms: 20,
            sparsity: 2,
            ksvd_iters: 3,
            pca_max: 12,
            neighborhood: 64,
            max_samples: 500,
            train_stride: 3,
            seed: 9,
            ..DictCfg::default()
        }
    }

    #[test]
    fn beats_bicubic_on_training_distribution() {
        let pairs: Vec<(Image, Image)> = (0..3)
            .map(|i| {
                let hr = textured(40, 40, i as f64 * 1.1);
                let lr = crate::kspace::downsample(&hr).unwrap();
                (lr, hr)
            })
            .collect();
        let model = AplusModel::train(&pairs, &small_cfg()).unwrap();
        let hr = textured(40, 40, 7.7);
        let lr = crate::kspace::downsample(&hr).unwrap();
        let sr = model.upscale2x(&lr).unwrap();
        let base = bicubic::upscale2x(&lr);
        let err = |a: &Image| -> f64 {
            a.data()
                .iter()
                .zip(hr.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        };
        assert!(
            err(&sr) < err(&base),
            "aplus {} vs bicubic {}",
            err(&sr),
            err(&base)
        );
    }

    #[test]
    fn save_load_roundtrip() {
        let pairs: Vec<(Image, Image)> = (0..2)
            .map(|i| {
                let hr = textured(32, 32, 0.3 + i as f64);
                let lr = crate::kspace::downsample(&hr).unwrap();
                (lr, hr)
            })
            .collect();
        let model = AplusModel::train(&pairs, &small_cfg()).unwrap();
        let dir = scratch_dir("aplus-model");
        model.save(&dir).unwrap();
        let back = AplusModel::load(&dir).unwrap();
        assert_eq!(model.dict, back.dict);
        assert_eq!(model.regressors.len(), back.regressors.len());

        let lr = crate::kspace::downsample(&textured(32, 32, 4.0)).unwrap();
        let a = model.upscale2x(&lr).unwrap();
        let b = back.upscale2x(&lr).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
