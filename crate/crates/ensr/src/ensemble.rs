//! Synthesis of the per-method SR predictions into one image: a
//! channel-concat CNN integrator with the generator's architecture,
//! trained under MAE, plus the plain averaging baseline and the
//! {3,5} x {avg, cnn} ablation grid.

use crate::config::{derive_seed, EnsembleMode};
use crate::error::{Error, Result};
use crate::gan::{build_generator, generator_forward, GenArch};
use crate::image::{patchify, unpatchify, Image, SrMethod};
use crate::nn::checkpoint::{self, Checkpoint};
use crate::nn::layers::mae_loss;
use crate::nn::{Adam, ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

/// Ordered per-method predictions. Construction sorts members into the
/// fixed `SrMethod` order, so channel layout never depends on call-site
/// argument order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionStack {
    methods: Vec<SrMethod>,
    images: Vec<Image>,
}

impl PredictionStack {
    pub fn new(entries: Vec<(SrMethod, Image)>) -> Result<PredictionStack> {
        if entries.is_empty() {
            return Err(Error::Config("prediction stack needs at least one member".into()));
        }
        let mut entries = entries;
        entries.sort_by_key(|(m, _)| m.index());
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Config(format!(
                    "duplicate prediction for method {}",
                    pair[0].0.key()
                )));
            }
        }
        let (h, w) = (entries[0].1.h(), entries[0].1.w());
        for (m, img) in &entries {
            if img.h() != h || img.w() != w {
                return Err(Error::Shape(format!(
                    "prediction {} is {}x{}, stack is {}x{}",
                    m.key(),
                    img.h(),
                    img.w(),
                    h,
                    w
                )));
            }
        }
        let (methods, images) = entries.into_iter().unzip();
        Ok(PredictionStack { methods, images })
    }

    pub fn methods(&self) -> &[SrMethod] {
        &self.methods
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.methods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.methods.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.images[0].h(), self.images[0].w())
    }

    /// Member subset, e.g. the 3-input variant from a full stack.
    pub fn select(&self, methods: &[SrMethod]) -> Result<PredictionStack> {
        let mut entries = Vec::with_capacity(methods.len());
        for &m in methods {
            match self.methods.iter().position(|&x| x == m) {
                Some(i) => entries.push((m, self.images[i].clone())),
                None => {
                    return Err(Error::Config(format!(
                        "stack has no {} prediction to select",
                        m.key()
                    )))
                }
            }
        }
        PredictionStack::new(entries)
    }

    /// (1, n, H, W) tensor in channel order.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w) = self.dims();
        let mut data = Vec::with_capacity(self.len() * h * w);
        for img in &self.images {
            data.extend_from_slice(img.data());
        }
        Tensor::new(vec![1, self.len(), h, w], data).unwrap()
    }

    /// Same-channel patches on a regular grid, as smaller stacks.
    pub fn patchify(&self, patch: usize, stride: usize) -> Result<Vec<PredictionStack>> {
        let mut per_method: Vec<Vec<Image>> = Vec::with_capacity(self.len());
        for img in &self.images {
            per_method.push(patchify(img, patch, stride)?);
        }
        let n = per_method[0].len();
        Ok((0..n)
            .map(|i| PredictionStack {
                methods: self.methods.clone(),
                images: per_method.iter().map(|v| v[i].clone()).collect(),
            })
            .collect())
    }
}

/// Method subset for an input-set size: 3 selects ZIP, BI, NEDI; 5 all.
pub fn inputs_subset(n_inputs: usize) -> Result<&'static [SrMethod]> {
    match n_inputs {
        3 => Ok(&SrMethod::ALL[..3]),
        5 => Ok(&SrMethod::ALL),
        n => Err(Error::Config(format!("unsupported ensemble input count {}", n))),
    }
}

/// The Table-IV style grid, row-major: inputs x mode.
pub fn ablation_grid() -> [(usize, EnsembleMode); 4] {
    [
        (3, EnsembleMode::Avg),
        (3, EnsembleMode::Cnn),
        (5, EnsembleMode::Avg),
        (5, EnsembleMode::Cnn),
    ]
}

/// Pixelwise mean over present members.
pub fn average_ensemble(stack: &PredictionStack) -> Image {
    let (h, w) = stack.dims();
    let mut acc = vec![0.0f64; h * w];
    for img in stack.images() {
        for (a, &v) in acc.iter_mut().zip(img.data()) {
            *a += v;
        }
    }
    let n = stack.len() as f64;
    Image::new(h, w, acc.into_iter().map(|v| v / n).collect()).unwrap()
}

fn order_hash(methods: &[SrMethod]) -> String {
    let joined: Vec<&str> = methods.iter().map(|m| m.key()).collect();
    let mut hasher = Sha256::new();
    hasher.update(joined.join(",").as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{:02x}", b)).collect()
}

/// Integrator network: the generator architecture with a widened first
/// conv accepting one channel per stacked prediction.
pub fn build_integrator(n_inputs: usize, width: f64, seed: u64) -> ParamStore {
    build_generator(&GenArch::new(n_inputs, width), seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorCfg {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub width: f64,
    pub seed: u64,
}

impl Default for IntegratorCfg {
    fn default() -> IntegratorCfg {
        IntegratorCfg {
            epochs: 80,
            lr: 2e-5,
            batch: 4,
            width: 1.0,
            seed: 23,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaeRow {
    pub epoch: usize,
    pub mae: f64,
}

fn write_mae_csv(path: &Path, rows: &[MaeRow]) -> Result<()> {
    let mut s = String::from("epoch,mae\n");
    for r in rows {
        s.push_str(&format!("{},{:.9e}\n", r.epoch, r.mae));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn stack_batch(stacks: &[&PredictionStack]) -> Tensor {
    let (h, w) = stacks[0].dims();
    let c = stacks[0].len();
    let mut data = Vec::with_capacity(stacks.len() * c * h * w);
    for s in stacks {
        assert_eq!(s.dims(), (h, w), "batch dims mismatch");
        assert_eq!(s.len(), c, "batch channel mismatch");
        for img in s.images() {
            data.extend_from_slice(img.data());
        }
    }
    Tensor::new(vec![stacks.len(), c, h, w], data).unwrap()
}

fn target_batch(imgs: &[&Image]) -> Tensor {
    let (h, w) = (imgs[0].h(), imgs[0].w());
    let mut data = Vec::with_capacity(imgs.len() * h * w);
    for im in imgs {
        data.extend_from_slice(im.data());
    }
    Tensor::new(vec![imgs.len(), 1, h, w], data).unwrap()
}

struct IntState {
    params: ParamStore,
    adam: Adam,
    epoch: usize,
    history: Vec<MaeRow>,
}

/// Trains the CNN integrator on (stack, HR) pairs under MAE. Resumes
/// from the checkpoint under `out` when present; finished runs no-op.
pub fn train_integrator(
    pairs: &[(PredictionStack, Image)],
    cfg: &IntegratorCfg,
    out: &Path,
    config_hash: &str,
) -> Result<ParamStore> {
    if pairs.is_empty() {
        return Err(Error::Config("no integrator training pairs supplied".into()));
    }
    let methods: Vec<SrMethod> = pairs[0].0.methods().to_vec();
    for (stack, hr) in pairs {
        if stack.methods() != methods.as_slice() {
            return Err(Error::Config("training stacks disagree on member methods".into()));
        }
        if stack.dims() != (hr.h(), hr.w()) {
            return Err(Error::Shape("stack/HR pair dims differ".into()));
        }
    }
    let arch = GenArch::new(methods.len(), cfg.width);
    let chash = order_hash(&methods);

    let mut st = if out.join("meta.json").exists() {
        let ck = checkpoint::load(out)?;
        let saved: String = ck.extra["channel_hash"].as_str().unwrap_or("").to_string();
        if saved != chash {
            return Err(Error::Config(format!(
                "checkpoint channel order {} does not match training stacks",
                ck.extra["channel_order"]
            )));
        }
        let epoch = ck.extra["epoch"].as_u64().unwrap_or(0) as usize;
        let history: Vec<MaeRow> = serde_json::from_value(ck.extra["history"].clone())?;
        IntState {
            params: ck.params,
            adam: ck.adam.unwrap_or_else(|| Adam::new(cfg.lr, 0.9, 0.999)),
            epoch,
            history,
        }
    } else {
        IntState {
            params: build_integrator(methods.len(), cfg.width, derive_seed(cfg.seed, &[6])),
            adam: Adam::new(cfg.lr, 0.9, 0.999),
            epoch: 0,
            history: Vec::new(),
        }
    };

    let order_list: Vec<&str> = methods.iter().map(|m| m.key()).collect();
    let save = |st: &IntState| -> Result<()> {
        let extra = json!({
            "kind": "integrator",
            "arch": serde_json::to_value(&arch)?,
            "channel_order": order_list.join(","),
            "channel_hash": chash,
            "epoch": st.epoch,
            "config": config_hash,
            "history": serde_json::to_value(&st.history)?,
        });
        checkpoint::save(out, &st.params, Some(&st.adam), &extra)?;
        write_mae_csv(&out.join("losses.csv"), &st.history)
    };

    while st.epoch < cfg.epochs {
        let epoch = st.epoch;
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[7, epoch as u64]));
        order.shuffle(&mut rng);

        let mut sum = 0.0;
        let mut steps = 0usize;
        for idx in order.chunks(cfg.batch) {
            let stacks: Vec<&PredictionStack> = idx.iter().map(|&i| &pairs[i].0).collect();
            let hrs: Vec<&Image> = idx.iter().map(|&i| &pairs[i].1).collect();
            let t = Tape::new();
            let vars = st.params.bind(&t);
            let x = t.leaf(stack_batch(&stacks));
            let y = t.leaf(target_batch(&hrs));
            let pred = generator_forward(&t, &vars, x);
            let loss = mae_loss(&t, pred, y);
            let loss_v = t.value(loss).item();
            if !loss_v.is_finite() {
                return Err(Error::Numeric(format!(
                    "integrator loss became non-finite at epoch {}; last epoch checkpoint preserved",
                    epoch
                )));
            }
            let grads = t.backward(loss);
            let gmap: BTreeMap<String, Tensor> = vars
                .iter()
                .filter_map(|(k, &v)| grads.wrt(v).map(|g| (k.clone(), t.value(g))))
                .collect();
            st.adam.step(&mut st.params, &gmap);
            sum += loss_v;
            steps += 1;
        }
        st.history.push(MaeRow {
            epoch: epoch + 1,
            mae: sum / steps.max(1) as f64,
        });
        st.epoch = epoch + 1;
        save(&st)?;
    }
    Ok(st.params)
}

fn validate_stack(ck: &Checkpoint, stack: &PredictionStack) -> Result<()> {
    let expect = ck.extra["channel_hash"].as_str().unwrap_or("");
    let got = order_hash(stack.methods());
    if expect != got {
        return Err(Error::Config(format!(
            "stack channel order {:?} does not match checkpoint order {}",
            stack.methods().iter().map(|m| m.key()).collect::<Vec<_>>(),
            ck.extra["channel_order"]
        )));
    }
    let in_ch = ck.params.get("b1.c1.w").shape()[1];
    if in_ch != stack.len() {
        return Err(Error::Shape(format!(
            "integrator consumes {} channels, stack has {}",
            in_ch,
            stack.len()
        )));
    }
    Ok(())
}

/// Whole-image integrator inference with the channel-order guard.
pub fn integrate(ck: &Checkpoint, stack: &PredictionStack) -> Result<Image> {
    validate_stack(ck, stack)?;
    let t = Tape::new();
    let vars = ck.params.bind(&t);
    let x = t.leaf(stack.to_tensor());
    let y = t.value(generator_forward(&t, &vars, x));
    let (h, w) = stack.dims();
    Image::new(h, w, y.into_data())
}

/// Patch-and-stitch integrator inference; the grid must tile exactly.
pub fn integrate_tiled(
    ck: &Checkpoint,
    stack: &PredictionStack,
    patch: usize,
    stride: usize,
) -> Result<Image> {
    validate_stack(ck, stack)?;
    let tiles = stack.patchify(patch, stride)?;
    let mut outs = Vec::with_capacity(tiles.len());
    for chunk in tiles.chunks(16) {
        let t = Tape::new();
        let vars = ck.params.bind(&t);
        let refs: Vec<&PredictionStack> = chunk.iter().collect();
        let x = t.leaf(stack_batch(&refs));
        let y = t.value(generator_forward(&t, &vars, x));
        let hw = patch * patch;
        for i in 0..chunk.len() {
            outs.push(Image::new(
                patch,
                patch,
                y.data()[i * hw..(i + 1) * hw].to_vec(),
            )?);
        }
    }
    let (h, w) = stack.dims();
    unpatchify(&outs, h, w, patch, stride)
}
