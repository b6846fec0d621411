//! Sparse-coding super resolution: a learned low-res feature dictionary
//! with a paired high-res residual dictionary sharing its codes.

use super::features::Pca;
use super::ksvd::{self, SparseCode};
use super::{harvest, read_mat, upscale_residual, write_mat, DictCfg};
use crate::error::{Error, Result};
use crate::image::Image;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct ScModel {
    pub(crate) pca: Pca,
    pub dict_lr: DMatrix<f64>,
    pub dict_hr: DMatrix<f64>,
    pub patch: usize,
    pub sparsity: usize,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    patch: usize,
    sparsity: usize,
}

impl ScModel {
    pub fn train(pairs: &[(Image, Image)], cfg: &DictCfg) -> Result<ScModel> {
        let (raw, targets) = harvest(pairs, cfg)?;
        let pca = Pca::fit(&raw, cfg.pca_var, cfg.pca_max);
        let feats = pca.project_all(&raw);
        let atoms = cfg.atoms.min(feats.ncols());
        let (dict_lr, codes) = ksvd::ksvd(&feats, atoms, cfg.sparsity, cfg.ksvd_iters, cfg.seed);
        let dict_hr = ksvd::paired_dictionary(&targets, &codes, atoms);
        Ok(ScModel {
            pca,
            dict_lr,
            dict_hr,
            patch: cfg.patch,
            sparsity: cfg.sparsity,
        })
    }

    pub fn upscale2x(&self, lr: &Image) -> Result<Image> {
        upscale_residual(lr, &self.pca, self.patch, |f| {
            let code: SparseCode = ksvd::omp(&self.dict_lr, f, self.sparsity);
            let mut y = DVector::zeros(self.dict_hr.nrows());
            for (&k, &c) in code.support.iter().zip(&code.coefs) {
                y.axpy(c, &self.dict_hr.column(k).clone_owned(), 1.0);
            }
            y
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        write_mat(&dir.join("pca_basis.raw"), &self.pca.basis)?;
        write_mat(&dir.join("dict_lr.raw"), &self.dict_lr)?;
        write_mat(&dir.join("dict_hr.raw"), &self.dict_hr)?;
        let meta = Meta {
            kind: "sc".into(),
            patch: self.patch,
            sparsity: self.sparsity,
        };
        fs::write(
            dir.join("meta.json"),
            serde_json::to_string_pretty(&meta)? + "\n",
        )
        .map_err(|e| Error::io(dir.display().to_string(), e))
    }

    pub fn load(dir: &Path) -> Result<ScModel> {
        let meta: Meta = serde_json::from_str(
            &fs::read_to_string(dir.join("meta.json"))
                .map_err(|e| Error::io(dir.display().to_string(), e))?,
        )?;
        if meta.kind != "sc" {
            return Err(Error::Container(format!(
                "{}: model kind {:?}, expected sc",
                dir.display(),
                meta.kind
            )));
        }
        let pca = Pca {
            basis: read_mat(&dir.join("pca_basis.raw"))?,
        };
        Ok(ScModel {
            pca,
            dict_lr: read_mat(&dir.join("dict_lr.raw"))?,
            dict_hr: read_mat(&dir.join("dict_hr.raw"))?,
            patch: meta.patch,
            sparsity: meta.sparsity,
        })
    }
}
