//! Corpus construction and loading.
//!
//! Each entry is one HR image fanned out to its LR counterpart and the
//! five preliminary upscalings, stored under
//! `<root>/<split>/<id>/{hr,lr,plr_*}.raw`. The manifest is written
//! last, so its presence marks a complete corpus; loaders refuse to
//! touch a root without one. HR images are synthetic phantoms by
//! default, or user-supplied rasters when `hr_dir` is set (real slices
//! can be dropped in without code changes).

use crate::classical::{bicubic, nedi, AplusModel, DictCfg, ScModel};
use crate::config::derive_seed;
use crate::ensemble::PredictionStack;
use crate::error::{Error, Result};
use crate::image::{Image, SrMethod};
use crate::io::{read_real, write_real};
use crate::kspace;
use crate::phantom::{generate_phantom, PhantomConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA: u32 = 1;

/// Seed-derivation tags: corpus images, dictionary pool.
const SEED_IMAGE: u64 = 0xA0;
const SEED_DICT_POOL: u64 = 0xD0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub split: Split,
    pub dims: usize,
    pub seed: u64,
}

/// Written to `<root>/manifest.json` once every raster is on disk. The
/// `root` field records where the corpus was generated; loaders take
/// the actual directory as a parameter, so a moved corpus still loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub schema: u32,
    pub root: String,
    pub config: String,
    pub records: Vec<ImageRecord>,
}

impl CorpusManifest {
    /// Records of one split, sorted by id.
    pub fn records(&self, split: Split) -> Vec<&ImageRecord> {
        let mut out: Vec<&ImageRecord> =
            self.records.iter().filter(|r| r.split == split).collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }
}

#[derive(Debug, Clone)]
pub struct CorpusCfg {
    pub phantom: PhantomConfig,
    /// Training pool size, split 80/20 into train/valid at image level.
    pub n_train: usize,
    pub n_test: usize,
    /// Held-out phantoms used only to train the SC/A+ dictionaries.
    pub n_dict: usize,
    pub dict: DictCfg,
    /// When set, HR images are read from this directory (sorted `*.raw`
    /// files in the container format) instead of being generated.
    pub hr_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for CorpusCfg {
    fn default() -> CorpusCfg {
        CorpusCfg {
            phantom: PhantomConfig::default(),
            n_train: 10,
            n_test: 3,
            n_dict: 3,
            dict: DictCfg::default(),
            hr_dir: None,
            seed: 0,
        }
    }
}

impl CorpusCfg {
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        if self.n_train < 2 {
            return Err(Error::Config(format!(
                "n_train must be at least 2 to split train/valid, got {}",
                self.n_train
            )));
        }
        if self.n_test == 0 {
            return Err(Error::Config("n_test must be positive".into()));
        }
        if self.n_train + self.n_test > 999 {
            return Err(Error::Config(format!(
                "corpus of {} images exceeds the 999-id namespace",
                self.n_train + self.n_test
            )));
        }
        if self.n_dict == 0 {
            return Err(Error::Config(
                "n_dict must be positive (dictionaries need a training pool)".into(),
            ));
        }
        Ok(())
    }

    /// Hash over every generation-relevant field; stored in the
    /// manifest and checked on resume so a root can't silently mix
    /// images from different configurations.
    pub fn hash_hex(&self) -> String {
        let p = &self.phantom;
        let d = &self.dict;
        let desc = format!(
            "corpus-v{}|dims={}|ell={}..{}|tex={:?}|sigma={:?}|n_train={}|n_test={}|n_dict={}|seed={}|hr={}|atoms={}|sparsity={}|iters={}|patch={}|pca_var={:?}|pca_max={}|lambda={:?}|nb={}|tstride={}|samples={}|dseed={}",
            SCHEMA,
            p.dims,
            p.ellipses_min,
            p.ellipses_max,
            p.texture_amp,
            p.noise_sigma,
            self.n_train,
            self.n_test,
            self.n_dict,
            self.seed,
            self.hr_dir
                .as_ref()
                .map(|h| h.display().to_string())
                .unwrap_or_default(),
            d.atoms,
            d.sparsity,
            d.ksvd_iters,
            d.patch,
            d.pca_var,
            d.pca_max,
            d.lambda,
            d.neighborhood,
            d.train_stride,
            d.max_samples,
            d.seed,
        );
        let digest = Sha256::digest(desc.as_bytes());
        digest.iter().map(|b| format!("{:02x}", b)).collect()
    }
}

/// 80/20 image-level split of the training pool; both sides non-empty.
pub fn split_counts(n_train: usize) -> (usize, usize) {
    let tr = (n_train * 4 / 5).max(1).min(n_train - 1);
    (tr, n_train - tr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Hr,
    Lr,
    Plr(SrMethod),
}

impl Role {
    pub fn name(&self) -> String {
        match self {
            Role::Hr => "hr".into(),
            Role::Lr => "lr".into(),
            Role::Plr(m) => format!("plr_{}", m.key()),
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.raw", self.name())
    }

    /// All seven roles an entry stores, in on-disk order.
    pub fn all() -> Vec<Role> {
        let mut v = vec![Role::Hr, Role::Lr];
        v.extend(SrMethod::ALL.iter().map(|m| Role::Plr(*m)));
        v
    }
}

pub fn entry_dir(root: &Path, rec: &ImageRecord) -> PathBuf {
    root.join(rec.split.as_str()).join(&rec.id)
}

fn write_manifest(root: &Path, manifest: &CorpusManifest) -> Result<()> {
    let path = root.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(root: &Path) -> Result<CorpusManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::Corpus(format!(
                "{}: no manifest.json — corpus missing or incomplete",
                root.display()
            )))
        }
        Err(e) => return Err(Error::io(&path, e)),
    };
    let manifest: CorpusManifest = serde_json::from_str(&text)?;
    if manifest.schema != SCHEMA {
        return Err(Error::Corpus(format!(
            "{}: unsupported manifest schema {} (expected {})",
            root.display(),
            manifest.schema,
            SCHEMA
        )));
    }
    Ok(manifest)
}

/// Loads one raster of an entry, checking its dims against the record
/// (LR is half-size, everything else HR-size).
pub fn load_image(root: &Path, rec: &ImageRecord, role: Role) -> Result<Image> {
    let path = entry_dir(root, rec).join(role.file_name());
    let (img, _tag) = read_real(&path).map_err(|e| {
        Error::Corpus(format!(
            "entry {} role {}: {}",
            rec.id,
            role.name(),
            e
        ))
    })?;
    let want = match role {
        Role::Lr => rec.dims / 2,
        _ => rec.dims,
    };
    if img.h() != want || img.w() != want {
        return Err(Error::Corpus(format!(
            "entry {} role {}: expected {}x{}, file holds {}x{}",
            rec.id,
            role.name(),
            want,
            want,
            img.h(),
            img.w()
        )));
    }
    Ok(img)
}

/// The five preliminary upscalings of an entry as a channel-ordered stack.
pub fn load_stack(root: &Path, rec: &ImageRecord) -> Result<PredictionStack> {
    let mut layers = Vec::with_capacity(SrMethod::ALL.len());
    for m in SrMethod::ALL {
        layers.push((m, load_image(root, rec, Role::Plr(m))?));
    }
    PredictionStack::new(layers)
}

/// One split as `(record, image)` pairs in sorted-id order.
pub fn load_split(
    root: &Path,
    manifest: &CorpusManifest,
    split: Split,
    role: Role,
) -> Result<Vec<(ImageRecord, Image)>> {
    manifest
        .records(split)
        .into_iter()
        .map(|rec| Ok((rec.clone(), load_image(root, rec, role)?)))
        .collect()
}

pub fn load_split_stacks(
    root: &Path,
    manifest: &CorpusManifest,
    split: Split,
) -> Result<Vec<(ImageRecord, PredictionStack)>> {
    manifest
        .records(split)
        .into_iter()
        .map(|rec| Ok((rec.clone(), load_stack(root, rec)?)))
        .collect()
}

fn bits_equal(a: &Image, b: &Image) -> bool {
    a.h() == b.h()
        && a.w() == b.w()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Re-derives LR from every stored HR and demands a bit-exact match,
/// so a corpus that drifted from the degradation model is caught
/// before anything trains on it.
pub fn verify_integrity(root: &Path, manifest: &CorpusManifest) -> Result<()> {
    for rec in &manifest.records {
        let hr = load_image(root, rec, Role::Hr)?;
        let lr = load_image(root, rec, Role::Lr)?;
        let expect = kspace::downsample(&hr)?;
        if !bits_equal(&lr, &expect) {
            return Err(Error::Corpus(format!(
                "entry {}: stored LR is not downsample(HR) bit-exactly",
                rec.id
            )));
        }
        for m in SrMethod::ALL {
            load_image(root, rec, Role::Plr(m))?;
        }
    }
    Ok(())
}

/// HR image source for one corpus index: a phantom from the record
/// seed, or the i-th sorted raster of `hr_dir`.
enum HrSource {
    Phantom(PhantomConfig),
    Files(Vec<PathBuf>),
}

impl HrSource {
    fn fetch(&self, index: usize, seed: u64, dims: usize) -> Result<Image> {
        match self {
            HrSource::Phantom(cfg) => generate_phantom(cfg, seed),
            HrSource::Files(paths) => {
                let path = &paths[index];
                let (img, _tag) = read_real(path)?;
                if img.h() != dims || img.w() != dims {
                    return Err(Error::Config(format!(
                        "{}: supplied HR image is {}x{}, corpus dims are {}",
                        path.display(),
                        img.h(),
                        img.w(),
                        dims
                    )));
                }
                Ok(img)
            }
        }
    }
}

fn list_hr_files(dir: &Path, need: usize) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "raw").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.len() < need {
        return Err(Error::Config(format!(
            "{}: found {} .raw images, corpus needs {}",
            dir.display(),
            paths.len(),
            need
        )));
    }
    paths.truncate(need);
    Ok(paths)
}

/// The five preliminary upscalings of one LR image, in channel order.
pub fn fan_out(lr: &Image, sc: &ScModel, ap: &AplusModel) -> Result<[(SrMethod, Image); 5]> {
    Ok([
        (SrMethod::Zip, kspace::zip_upscale(lr)?),
        (SrMethod::Bi, bicubic::upscale2x(lr)),
        (SrMethod::Nedi, nedi::upscale2x(lr)?),
        (SrMethod::Sc, sc.upscale2x(lr)?),
        (SrMethod::Aplus, ap.upscale2x(lr)?),
    ])
}

/// Loads the dictionaries a finished corpus keeps under `<root>/dict`.
pub fn load_dictionaries(root: &Path) -> Result<(ScModel, AplusModel)> {
    let sc = ScModel::load(&root.join("dict").join("sc"))?;
    let ap = AplusModel::load(&root.join("dict").join("aplus"))?;
    Ok((sc, ap))
}

/// Loads the SC/A+ dictionaries from `<root>/dict` if a previous run
/// left them there, otherwise trains both on a held-out phantom pool
/// and saves them.
fn ensure_dictionaries(root: &Path, cfg: &CorpusCfg) -> Result<(ScModel, AplusModel)> {
    let sc_dir = root.join("dict").join("sc");
    let ap_dir = root.join("dict").join("aplus");
    if let (Ok(sc), Ok(ap)) = (ScModel::load(&sc_dir), AplusModel::load(&ap_dir)) {
        return Ok((sc, ap));
    }
    let pairs: Vec<(Image, Image)> = (0..cfg.n_dict)
        .map(|j| {
            let hr = generate_phantom(
                &cfg.phantom,
                derive_seed(cfg.seed, &[SEED_DICT_POOL, j as u64]),
            )?;
            let lr = kspace::downsample(&hr)?;
            Ok((lr, hr))
        })
        .collect::<Result<_>>()?;
    let sc = ScModel::train(&pairs, &cfg.dict)?;
    let ap = AplusModel::train(&pairs, &cfg.dict)?;
    sc.save(&sc_dir)?;
    ap.save(&ap_dir)?;
    Ok((sc, ap))
}

fn build_entry(
    root: &Path,
    rec: &ImageRecord,
    hr: &Image,
    sc: &ScModel,
    ap: &AplusModel,
) -> Result<()> {
    let dir = entry_dir(root, rec);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let lr = kspace::downsample(hr)?;
    let plr = fan_out(&lr, sc, ap)?;
    write_real(&dir.join(Role::Hr.file_name()), hr, 0)?;
    write_real(&dir.join(Role::Lr.file_name()), &lr, 0)?;
    for (m, img) in &plr {
        write_real(&dir.join(Role::Plr(*m).file_name()), img, 0)?;
    }
    Ok(())
}

/// Builds a complete corpus under `root`. A root that already holds a
/// manifest is reused as-is when its config hash matches (resume is a
/// no-op) and rejected when it doesn't. Entries are generated in
/// parallel — each is fully determined by its own derived seed — and
/// the manifest lands last as the completion marker.
pub fn build_corpus(root: &Path, cfg: &CorpusCfg) -> Result<CorpusManifest> {
    cfg.validate()?;
    let hash = cfg.hash_hex();
    if root.join(MANIFEST_FILE).exists() {
        let existing = load_manifest(root)?;
        if existing.config != hash {
            return Err(Error::Config(format!(
                "{}: existing corpus was built with a different config (hash {} vs {})",
                root.display(),
                existing.config,
                hash
            )));
        }
        return Ok(existing);
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let (sc, ap) = ensure_dictionaries(root, cfg)?;

    let total = cfg.n_train + cfg.n_test;
    let (n_tr, _n_va) = split_counts(cfg.n_train);
    let source = match &cfg.hr_dir {
        None => HrSource::Phantom(cfg.phantom.clone()),
        Some(dir) => HrSource::Files(list_hr_files(dir, total)?),
    };
    let records: Vec<ImageRecord> = (0..total)
        .map(|i| {
            let split = if i < n_tr {
                Split::Train
            } else if i < cfg.n_train {
                Split::Valid
            } else {
                Split::Test
            };
            let seed = match source {
                HrSource::Phantom(_) => derive_seed(cfg.seed, &[SEED_IMAGE, i as u64]),
                HrSource::Files(_) => 0,
            };
            ImageRecord {
                id: format!("s{:03}", i),
                split,
                dims: cfg.phantom.dims,
                seed,
            }
        })
        .collect();

    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(8)
        .min(total.max(1));
    let chunk = total.div_ceil(threads);
    let mut slots: Vec<Result<()>> = (0..total).map(|_| Ok(())).collect();
    std::thread::scope(|scope| {
        for (c, slot_chunk) in slots.chunks_mut(chunk).enumerate() {
            let records = &records;
            let source = &source;
            let (sc, ap) = (&sc, &ap);
            scope.spawn(move || {
                for (k, slot) in slot_chunk.iter_mut().enumerate() {
                    let i = c * chunk + k;
                    let rec = &records[i];
                    *slot = source
                        .fetch(i, rec.seed, rec.dims)
                        .and_then(|hr| build_entry(root, rec, &hr, sc, ap));
                }
            });
        }
    });
    for slot in slots {
        slot?;
    }

    let manifest = CorpusManifest {
        schema: SCHEMA,
        root: root.display().to_string(),
        config: hash,
        records,
    };
    write_manifest(root, &manifest)?;
    Ok(manifest)
}
