//! Run configuration: a flat key=value file with strict parsing, a
//! canonical echo format, and a content hash that gets stamped into
//! every artifact so mismatched runs are caught instead of compared.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Mixes extra words into a base seed; used to hand every phantom,
/// epoch, and penalty draw its own deterministic RNG stream.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut s = base ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        s = s
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(p)
            .rotate_left(17)
            ^ 0xd1b5_4a32_d192_ed03;
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleMode {
    Cnn,
    Avg,
}

impl EnsembleMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnsembleMode::Cnn => "cnn",
            EnsembleMode::Avg => "avg",
        }
    }
}

/// Every tunable in one place. Defaults follow the source protocol:
/// 320x320 images, 80/40 patch grid, GAN 50 epochs / lr 2e-5 / batch 64,
/// ensemble 80 epochs / lr 2e-5 / batch 4, loss weights (0.1, 0.1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus_dims: usize,
    pub corpus_n_train: usize,
    pub corpus_n_test: usize,
    pub corpus_ellipses_min: usize,
    pub corpus_ellipses_max: usize,
    pub corpus_texture_amp: f64,
    pub corpus_noise_sigma: f64,
    pub dict_atoms: usize,
    pub dict_sparsity: usize,
    pub dict_iters: usize,
    pub dict_max_samples: usize,
    pub gan_epochs: usize,
    pub gan_lr: f64,
    pub gan_batch: usize,
    pub gan_patch: usize,
    pub gan_stride: usize,
    pub gan_n_critic: usize,
    pub gan_width: f64,
    pub gan_gp_coef: f64,
    pub gan_lambda_gra: f64,
    pub gan_lambda_mse: f64,
    pub gan_lambda_per: f64,
    pub ensemble_epochs: usize,
    pub ensemble_lr: f64,
    pub ensemble_batch: usize,
    pub ensemble_inputs: usize,
    pub ensemble_mode: EnsembleMode,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            seed: 17,
            corpus_dims: 320,
            corpus_n_train: 10,
            corpus_n_test: 3,
            corpus_ellipses_min: 4,
            corpus_ellipses_max: 9,
            corpus_texture_amp: 0.08,
            corpus_noise_sigma: 0.0,
            dict_atoms: 1024,
            dict_sparsity: 3,
            dict_iters: 10,
            dict_max_samples: 20000,
            gan_epochs: 50,
            gan_lr: 2e-5,
            gan_batch: 64,
            gan_patch: 80,
            gan_stride: 40,
            gan_n_critic: 5,
            gan_width: 1.0,
            gan_gp_coef: 10.0,
            gan_lambda_gra: 0.1,
            gan_lambda_mse: 0.1,
            gan_lambda_per: 1.0,
            ensemble_epochs: 80,
            ensemble_lr: 2e-5,
            ensemble_batch: 4,
            ensemble_inputs: 5,
            ensemble_mode: EnsembleMode::Cnn,
        }
    }
}

macro_rules! config_keys {
    ($($key:literal => $field:ident : $kind:ident),+ $(,)?) => {
        fn apply(cfg: &mut RunConfig, key: &str, value: &str) -> Result<bool> {
            match key {
                $($key => { cfg.$field = parse_value!($kind, key, value)?; Ok(true) })+
                _ => Ok(false),
            }
        }

        fn body(cfg: &RunConfig) -> String {
            let mut s = String::new();
            $(writeln!(s, "{} = {}", $key, emit_value!($kind, cfg.$field)).unwrap();)+
            s
        }
    };
}

macro_rules! parse_value {
    (usize, $key:expr, $v:expr) => {
        $v.parse::<usize>()
            .map_err(|_| Error::Config(format!("{}: expected an integer, got {:?}", $key, $v)))
    };
    (u64, $key:expr, $v:expr) => {
        $v.parse::<u64>()
            .map_err(|_| Error::Config(format!("{}: expected an integer, got {:?}", $key, $v)))
    };
    (f64, $key:expr, $v:expr) => {
        $v.parse::<f64>()
            .map_err(|_| Error::Config(format!("{}: expected a number, got {:?}", $key, $v)))
            .and_then(|x| {
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::Config(format!("{}: must be finite", $key)))
                }
            })
    };
    (mode, $key:expr, $v:expr) => {
        match $v {
            "cnn" => Ok(EnsembleMode::Cnn),
            "avg" => Ok(EnsembleMode::Avg),
            other => Err(Error::Config(format!(
                "{}: expected cnn or avg, got {:?}",
                $key, other
            ))),
        }
    };
}

macro_rules! emit_value {
    (mode, $v:expr) => {
        $v.as_str().to_string()
    };
    ($t:ident, $v:expr) => {
        format!("{}", $v)
    };
}

// sorted; body() emits in this order, giving the canonical form
config_keys! {
    "corpus.dims" => corpus_dims: usize,
    "corpus.ellipses_max" => corpus_ellipses_max: usize,
    "corpus.ellipses_min" => corpus_ellipses_min: usize,
    "corpus.n_test" => corpus_n_test: usize,
    "corpus.n_train" => corpus_n_train: usize,
    "corpus.noise_sigma" => corpus_noise_sigma: f64,
    "corpus.texture_amp" => corpus_texture_amp: f64,
    "dict.atoms" => dict_atoms: usize,
    "dict.iters" => dict_iters: usize,
    "dict.max_samples" => dict_max_samples: usize,
    "dict.sparsity" => dict_sparsity: usize,
    "ensemble.batch" => ensemble_batch: usize,
    "ensemble.epochs" => ensemble_epochs: usize,
    "ensemble.inputs" => ensemble_inputs: usize,
    "ensemble.lr" => ensemble_lr: f64,
    "ensemble.mode" => ensemble_mode: mode,
    "gan.batch" => gan_batch: usize,
    "gan.epochs" => gan_epochs: usize,
    "gan.gp_coef" => gan_gp_coef: f64,
    "gan.lambda_gra" => gan_lambda_gra: f64,
    "gan.lambda_mse" => gan_lambda_mse: f64,
    "gan.lambda_per" => gan_lambda_per: f64,
    "gan.lr" => gan_lr: f64,
    "gan.n_critic" => gan_n_critic: usize,
    "gan.patch" => gan_patch: usize,
    "gan.stride" => gan_stride: usize,
    "gan.width" => gan_width: f64,
    "seed" => seed: u64,
}

impl RunConfig {
    /// Strict parse: unknown keys, duplicates, or malformed lines fail.
    /// Missing keys take defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen: BTreeMap<String, ()> = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {:?}", ln + 1, raw))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), ()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {}", ln + 1, key)));
            }
            if !apply(&mut cfg, key, value)? {
                return Err(Error::Config(format!("line {}: unknown key {}", ln + 1, key)));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` override on top of parsed values; the
    /// caller re-validates once all overrides are in.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !apply(self, key.trim(), value.trim())? {
            return Err(Error::Config(format!("unknown key {}", key.trim())));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.corpus_dims % 4 != 0 || self.corpus_dims == 0 {
            return fail("corpus.dims must be a positive multiple of 4");
        }
        if self.corpus_ellipses_min > self.corpus_ellipses_max {
            return fail("corpus.ellipses_min must be <= corpus.ellipses_max");
        }
        if self.corpus_noise_sigma < 0.0 {
            return fail("corpus.noise_sigma must be >= 0");
        }
        if self.corpus_n_train < 2 {
            return fail("corpus.n_train must be >= 2 to split train/valid");
        }
        if self.gan_patch == 0 || self.gan_stride == 0 {
            return fail("gan.patch and gan.stride must be positive");
        }
        if self.gan_patch > self.corpus_dims {
            return fail("gan.patch cannot exceed corpus.dims");
        }
        if (self.corpus_dims - self.gan_patch) % self.gan_stride != 0 {
            return fail("patch grid must tile corpus.dims exactly ((dims - patch) % stride == 0)");
        }
        if !(self.gan_width > 0.0) || self.gan_width > 1.0 {
            return fail("gan.width must be in (0, 1]");
        }
        if self.gan_lr <= 0.0 || self.ensemble_lr <= 0.0 {
            return fail("learning rates must be positive");
        }
        if self.gan_batch == 0 || self.ensemble_batch == 0 {
            return fail("batch sizes must be positive");
        }
        if self.gan_n_critic == 0 {
            return fail("gan.n_critic must be >= 1");
        }
        if self.gan_lambda_gra < 0.0 || self.gan_lambda_mse < 0.0 || self.gan_lambda_per < 0.0 {
            return fail("loss weights must be >= 0");
        }
        if self.gan_gp_coef < 0.0 {
            return fail("gan.gp_coef must be >= 0");
        }
        if self.ensemble_inputs != 3 && self.ensemble_inputs != 5 {
            return fail("ensemble.inputs must be 3 or 5");
        }
        if self.dict_atoms == 0 || self.dict_sparsity == 0 {
            return fail("dict.atoms and dict.sparsity must be positive");
        }
        if self.dict_sparsity > self.dict_atoms {
            return fail("dict.sparsity cannot exceed dict.atoms");
        }
        Ok(())
    }

    /// Canonical echo: fixed header, implementation notes, sha256 of the
    /// key-value body, then every key in sorted order. `parse` of the
    /// echo reproduces the config exactly.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        s.push_str("# ensr configuration (canonical echo; missing keys take these defaults)\n");
        s.push_str("# fixed implementation choices, independent of this file:\n");
        s.push_str("#   - perceptual feature extractor: seeded random 5-layer conv stack\n");
        s.push_str("#     (a stand-in interface for a pretrained VGG feature layer)\n");
        s.push_str("#   - all conv kernels 3x3, zero padding; generator skips 1-7, 2-6, 3-5\n");
        s.push_str("#   - critic recipe: gp_coef 10, n_critic 5, adam betas (0, 0.9)\n");
        s.push_str("#   - networks use channel-only layer norm so tiled and whole-image\n");
        s.push_str("#     inference agree; the critic normalizes per sample over (C,H,W)\n");
        write!(s, "# sha256(body) = {}\n", self.hash_hex()).unwrap();
        s.push_str(&body(self));
        s
    }

    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(body(self).as_bytes());
        h.finalize().into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{:02x}", b)).collect()
    }

    /// Low 32 bits of the config hash; stamped as the tag word of every
    /// raster this run writes.
    pub fn tag(&self) -> u32 {
        let h = self.hash();
        u32::from_le_bytes([h[0], h[1], h[2], h[3]])
    }
}
