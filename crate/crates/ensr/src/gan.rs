//! The per-prior super-resolution GAN: a seven-block skip generator, a
//! five-block critic with gradient penalty, the four-term generator
//! objective, and a deterministic training loop with per-epoch
//! checkpoints and loss curves.

use crate::config::derive_seed;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::checkpoint;
use crate::nn::layers::{
    conv2d, gap, grad_diff_loss, he_uniform, layer_norm_c, layer_norm_chw, mean_all, mse_loss,
};
use crate::nn::{Adam, ParamStore, Tape, Tensor, Var, VarMap};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::Path;

const LRELU_SLOPE: f64 = 0.2;
const LN_EPS: f64 = 1e-5;
/// Keeps the penalty's sqrt differentiable at exactly zero gradient
/// norm; far below every tolerance used against it.
const GP_NORM_EPS: f64 = 1e-12;

// ---------------------------------------------------------------- arch

/// Generator channel plan (Table-like seven blocks, two convs each,
/// skips 1->7, 2->6, 3->5). `width` scales interior channels; input
/// and the single output channel are fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenArch {
    pub in_ch: usize,
    pub width: f64,
}

fn scaled(base: usize, width: f64) -> usize {
    ((base as f64 * width).round() as usize).max(1)
}

impl GenArch {
    pub fn new(in_ch: usize, width: f64) -> GenArch {
        assert!(in_ch >= 1 && width > 0.0 && width <= 1.0);
        GenArch { in_ch, width }
    }

    /// (name, c_in, c_out, normalized+activated) for the 14 convs in
    /// forward order. The last conv is linear.
    pub fn convs(&self) -> Vec<(String, usize, usize, bool)> {
        let c = |b: usize| scaled(b, self.width);
        let (c32, c64, c128, c256) = (c(32), c(64), c(128), c(256));
        let plan = [
            ("b1.c1", self.in_ch, c32, true),
            ("b1.c2", c32, c32, true),
            ("b2.c1", c32, c64, true),
            ("b2.c2", c64, c64, true),
            ("b3.c1", c64, c128, true),
            ("b3.c2", c128, c128, true),
            ("b4.c1", c128, c256, true),
            ("b4.c2", c256, c256, true),
            ("b5.c1", c256 + c128, c128, true), // concat with block 3
            ("b5.c2", c128, c128, true),
            ("b6.c1", c128 + c64, c64, true), // concat with block 2
            ("b6.c2", c64, c64, true),
            ("b7.c1", c64 + c32, c32, true), // concat with block 1
            ("b7.c2", c32, 1, false),
        ];
        plan.iter()
            .map(|&(n, ci, co, a)| (n.to_string(), ci, co, a))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.convs()
            .iter()
            .map(|(_, ci, co, act)| ci * co * 9 + co + if *act { 2 * co } else { 0 })
            .sum()
    }
}

/// Critic plan: n64s2, n128s2, n256s2, n512s1, then a linear n1s1 conv
/// and global average pooling to one score per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticArch {
    pub in_ch: usize,
    pub width: f64,
}

impl CriticArch {
    pub fn new(in_ch: usize, width: f64) -> CriticArch {
        assert!(in_ch >= 1 && width > 0.0 && width <= 1.0);
        CriticArch { in_ch, width }
    }

    pub fn convs(&self) -> Vec<(String, usize, usize, usize, bool)> {
        let c = |b: usize| scaled(b, self.width);
        let plan = [
            ("b1", self.in_ch, c(64), 2, true),
            ("b2", c(64), c(128), 2, true),
            ("b3", c(128), c(256), 2, true),
            ("b4", c(256), c(512), 1, true),
            ("b5", c(512), 1, 1, false),
        ];
        plan.iter()
            .map(|&(n, ci, co, s, a)| (n.to_string(), ci, co, s, a))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.convs()
            .iter()
            .map(|(_, ci, co, _, act)| ci * co * 9 + co + if *act { 2 * co } else { 0 })
            .sum()
    }
}

fn init_conv(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    ci: usize,
    co: usize,
    normed: bool,
) {
    store.insert(&format!("{}.w", name), he_uniform(&[co, ci, 3, 3], ci * 9, rng));
    store.insert(&format!("{}.b", name), Tensor::zeros(&[co]));
    if normed {
        store.insert(&format!("{}.g", name), Tensor::full(&[co], 1.0));
        store.insert(&format!("{}.n", name), Tensor::zeros(&[co]));
    }
}

pub fn build_generator(arch: &GenArch, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, ci, co, act) in arch.convs() {
        init_conv(&mut store, &mut rng, &name, ci, co, act);
    }
    store
}

pub fn build_critic(arch: &CriticArch, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, ci, co, _, act) in arch.convs() {
        init_conv(&mut store, &mut rng, &name, ci, co, act);
    }
    store
}

// ------------------------------------------------------------- forward

fn gen_block(t: &Tape, vars: &VarMap, x: Var, name: &str, linear_tail: bool) -> Var {
    let y = conv2d(
        t,
        x,
        vars[&format!("{}.w", name)],
        Some(vars[&format!("{}.b", name)]),
        1,
        1,
    );
    if linear_tail {
        return y;
    }
    // channel-only layer norm keeps every statistic local to a pixel,
    // so stitched-patch inference matches whole-image inference
    let y = layer_norm_c(
        t,
        y,
        vars[&format!("{}.g", name)],
        vars[&format!("{}.n", name)],
        LN_EPS,
    );
    t.lrelu(y, 0.0) // plain ReLU in the generator
}

/// Fully-convolutional generator forward; input (B, in_ch, H, W),
/// output (B, 1, H, W).
pub fn generator_forward(t: &Tape, vars: &VarMap, x: Var) -> Var {
    let b1 = gen_block(t, vars, gen_block(t, vars, x, "b1.c1", false), "b1.c2", false);
    let b2 = gen_block(t, vars, gen_block(t, vars, b1, "b2.c1", false), "b2.c2", false);
    let b3 = gen_block(t, vars, gen_block(t, vars, b2, "b3.c1", false), "b3.c2", false);
    let b4 = gen_block(t, vars, gen_block(t, vars, b3, "b4.c1", false), "b4.c2", false);
    let b5_in = t.concat_c(&[b4, b3]);
    let b5 = gen_block(t, vars, gen_block(t, vars, b5_in, "b5.c1", false), "b5.c2", false);
    let b6_in = t.concat_c(&[b5, b2]);
    let b6 = gen_block(t, vars, gen_block(t, vars, b6_in, "b6.c1", false), "b6.c2", false);
    let b7_in = t.concat_c(&[b6, b1]);
    let b7 = gen_block(t, vars, b7_in, "b7.c1", false);
    gen_block(t, vars, b7, "b7.c2", true)
}

/// Critic forward; (B, C, H, W) -> (B, 1) scores.
pub fn critic_forward(t: &Tape, vars: &VarMap, x: Var) -> Var {
    let mut h = x;
    let strides = [2usize, 2, 2, 1, 1];
    for (i, &s) in strides.iter().enumerate() {
        let name = format!("b{}", i + 1);
        h = conv2d(
            t,
            h,
            vars[&format!("{}.w", name)],
            Some(vars[&format!("{}.b", name)]),
            s,
            1,
        );
        if i < 4 {
            h = layer_norm_chw(
                t,
                h,
                vars[&format!("{}.g", name)],
                vars[&format!("{}.n", name)],
                LN_EPS,
            );
            h = t.lrelu(h, LRELU_SLOPE);
        }
    }
    gap(t, h) // (B, 1)
}

// ---------------------------------------------------- feature extractor

/// Fixed, seeded feature extractor standing in for a pretrained
/// perceptual network: five 3x3 convs (16-32-64-64-64 channels,
/// strides 1,2,1,2,1), ReLU; layer-5 activations are the features.
pub fn build_phi(in_ch: usize, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let plan = [(in_ch, 16), (16, 32), (32, 64), (64, 64), (64, 64)];
    for (i, (ci, co)) in plan.iter().enumerate() {
        store.insert(&format!("l{}.w", i + 1), he_uniform(&[*co, *ci, 3, 3], ci * 9, &mut rng));
        store.insert(&format!("l{}.b", i + 1), Tensor::zeros(&[*co]));
    }
    store
}

pub fn phi_forward(t: &Tape, vars: &VarMap, x: Var) -> Var {
    let mut h = x;
    for (i, s) in [1usize, 2, 1, 2, 1].iter().enumerate() {
        h = conv2d(
            t,
            h,
            vars[&format!("l{}.w", i + 1)],
            Some(vars[&format!("l{}.b", i + 1)]),
            *s,
            1,
        );
        h = t.lrelu(h, 0.0);
    }
    h
}

// -------------------------------------------------------------- losses

/// L_adv = -E[D(G(x))].
pub fn adv_loss(t: &Tape, d_fake: Var) -> Var {
    t.neg(mean_all(t, d_fake))
}

/// Mean squared feature difference under any extractor.
pub fn perceptual_loss(t: &Tape, phi: impl Fn(&Tape, Var) -> Var, fake: Var, real: Var) -> Var {
    mse_loss(t, phi(t, fake), phi(t, real))
}

/// Per-sample convex mixes eps*real + (1-eps)*fake, eps ~ U(0,1).
pub fn mix_batches(real: &Tensor, fake: &Tensor, seed: u64) -> Tensor {
    assert_eq!(real.shape(), fake.shape(), "mix shape mismatch");
    let (b, c, h, w) = real.dims4().expect("mix batches");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Tensor::zeros(real.shape());
    let n = c * h * w;
    for bi in 0..b {
        let eps: f64 = rng.gen();
        for i in bi * n..(bi + 1) * n {
            out.data_mut()[i] = eps * real.data()[i] + (1.0 - eps) * fake.data()[i];
        }
    }
    out
}

/// WGAN-GP penalty: mean over the batch of (||grad_xhat D(xhat)|| - 1)^2.
/// The per-sample gradient comes from a backward pass that itself emits
/// tape nodes, so the result stays differentiable w.r.t. D's parameters.
pub fn gradient_penalty(
    t: &Tape,
    d: impl Fn(&Tape, Var) -> Var,
    real: &Tensor,
    fake: &Tensor,
    seed: u64,
) -> Var {
    let b = real.shape()[0];
    let xhat = t.leaf(mix_batches(real, fake, seed));
    let scores = d(t, xhat); // (B, 1)
    let total = t.sum_all(scores); // gradient of the sum = per-sample gradients
    let g = t
        .backward(total)
        .wrt(xhat)
        .expect("critic ignores its input");
    let sq = t.mul(g, g);
    let norm2 = t.sum_hw(t.sum_c(sq)); // (B,1,1,1)
    let norm = t.sqrt(t.add_scalar(norm2, GP_NORM_EPS));
    let excess = t.add_scalar(norm, -1.0);
    t.scale(t.sum_all(t.mul(excess, excess)), 1.0 / b as f64)
}

// ------------------------------------------------------------ training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gra: f64,
    pub mse: f64,
    pub per: f64,
    pub gp: f64,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights {
            gra: 0.1,
            mse: 0.1,
            per: 1.0,
            gp: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanCfg {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub n_critic: usize,
    pub width: f64,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for GanCfg {
    fn default() -> GanCfg {
        GanCfg {
            epochs: 50,
            lr: 2e-5,
            batch: 64,
            n_critic: 5,
            width: 1.0,
            weights: LossWeights::default(),
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub l_adv: f64,
    pub l_gra: f64,
    pub l_mse: f64,
    pub l_per: f64,
    pub l_d: f64,
}

pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut s = String::from("epoch,l_adv,l_gra,l_mse,l_per,l_d\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            r.epoch, r.l_adv, r.l_gra, r.l_mse, r.l_per, r.l_d
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn stack_images(imgs: &[&Image]) -> Tensor {
    assert!(!imgs.is_empty());
    let (h, w) = (imgs[0].h(), imgs[0].w());
    let mut data = Vec::with_capacity(imgs.len() * h * w);
    for im in imgs {
        assert_eq!((im.h(), im.w()), (h, w), "batch dims mismatch");
        data.extend_from_slice(im.data());
    }
    Tensor::new(vec![imgs.len(), 1, h, w], data).unwrap()
}

/// Extracts one (b, c) plane of a 4-d tensor as an image.
pub fn plane_to_image(t: &Tensor, b: usize, c: usize) -> Image {
    let (bs, cs, h, w) = t.dims4().expect("plane source");
    assert!(b < bs && c < cs);
    let base = (b * cs + c) * h * w;
    Image::new(h, w, t.data()[base..base + h * w].to_vec()).unwrap()
}

fn collect_grads(t: &Tape, grads: &crate::nn::Grads, vars: &VarMap) -> BTreeMap<String, Tensor> {
    vars.iter()
        .filter_map(|(k, &v)| grads.wrt(v).map(|g| (k.clone(), t.value(g))))
        .collect()
}

fn finite_or_err(value: f64, what: &str, epoch: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric(format!(
            "{} became non-finite at epoch {}; last epoch checkpoint preserved",
            what, epoch
        )))
    }
}

struct GanState {
    g: ParamStore,
    d: ParamStore,
    adam_g: Adam,
    adam_d: Adam,
    epoch: usize,
    history: Vec<LossRow>,
}

fn load_state(out: &Path, arch: &GenArch, critic_arch: &CriticArch, cfg: &GanCfg) -> Result<GanState> {
    let g_dir = out.join("g");
    let d_dir = out.join("d");
    if g_dir.join("meta.json").exists() && d_dir.join("meta.json").exists() {
        let g_ck = checkpoint::load(&g_dir)?;
        let d_ck = checkpoint::load(&d_dir)?;
        let saved_arch: GenArch = serde_json::from_value(g_ck.extra["arch"].clone())?;
        if saved_arch != *arch {
            return Err(Error::Checkpoint(format!(
                "checkpoint architecture {:?} does not match requested {:?}",
                saved_arch, arch
            )));
        }
        let epoch = g_ck.extra["epoch"].as_u64().unwrap_or(0) as usize;
        let history: Vec<LossRow> = serde_json::from_value(g_ck.extra["history"].clone())?;
        return Ok(GanState {
            g: g_ck.params,
            d: d_ck.params,
            adam_g: g_ck.adam.unwrap_or_else(|| Adam::new(cfg.lr, 0.0, 0.9)),
            adam_d: d_ck.adam.unwrap_or_else(|| Adam::new(cfg.lr, 0.0, 0.9)),
            epoch,
            history,
        });
    }
    Ok(GanState {
        g: build_generator(arch, derive_seed(cfg.seed, &[1])),
        d: build_critic(critic_arch, derive_seed(cfg.seed, &[2])),
        adam_g: Adam::new(cfg.lr, 0.0, 0.9),
        adam_d: Adam::new(cfg.lr, 0.0, 0.9),
        epoch: 0,
        history: Vec::new(),
    })
}

fn save_state(out: &Path, st: &GanState, arch: &GenArch, label: &str, config_hash: &str) -> Result<()> {
    let g_extra = json!({
        "kind": "generator",
        "arch": serde_json::to_value(arch)?,
        "label": label,
        "epoch": st.epoch,
        "config": config_hash,
        "history": serde_json::to_value(&st.history)?,
    });
    checkpoint::save(&out.join("g"), &st.g, Some(&st.adam_g), &g_extra)?;
    let d_extra = json!({ "kind": "critic", "epoch": st.epoch });
    checkpoint::save(&out.join("d"), &st.d, Some(&st.adam_d), &d_extra)?;
    write_loss_csv(&out.join("losses.csv"), &st.history)
}

/// Trains one per-prior GAN on (PLR, HR) patch pairs. Resumes from the
/// newest epoch checkpoint under `out`; a finished run is a no-op.
/// Returns the trained generator.
pub fn train_gan(
    pairs: &[(Image, Image)],
    label: &str,
    cfg: &GanCfg,
    out: &Path,
    config_hash: &str,
) -> Result<ParamStore> {
    if pairs.is_empty() {
        return Err(Error::Config("no training pairs supplied".into()));
    }
    for (plr, hr) in pairs {
        if plr.h() != hr.h() || plr.w() != hr.w() {
            return Err(Error::Shape("PLR/HR pair dims differ".into()));
        }
    }
    let arch = GenArch::new(1, cfg.width);
    let critic_arch = CriticArch::new(1, cfg.width);
    let phi = build_phi(1, derive_seed(cfg.seed, &[3]));
    let mut st = load_state(out, &arch, &critic_arch, cfg)?;
    if st.epoch >= cfg.epochs {
        return Ok(st.g);
    }

    while st.epoch < cfg.epochs {
        let epoch = st.epoch;
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[4, epoch as u64]));
        order.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch).collect();

        let mut sums = [0.0f64; 5]; // adv, gra, mse, per, d
        let mut counts = [0usize; 2]; // g steps, d steps
        for (it, idx) in batches.iter().enumerate() {
            let plr: Vec<&Image> = idx.iter().map(|&i| &pairs[i].0).collect();
            let hr: Vec<&Image> = idx.iter().map(|&i| &pairs[i].1).collect();
            let plr_t = stack_images(&plr);
            let hr_t = stack_images(&hr);
            let d_turn = it % (cfg.n_critic + 1) != cfg.n_critic;

            if d_turn {
                // G runs inference-only on its own tape
                let fake_t = {
                    let t = Tape::new();
                    let gv = st.g.bind(&t);
                    let x = t.leaf(plr_t.clone());
                    t.value(generator_forward(&t, &gv, x))
                };
                let t = Tape::new();
                let dv = st.d.bind(&t);
                let d_real = critic_forward(&t, &dv, t.leaf(hr_t.clone()));
                let d_fake = critic_forward(&t, &dv, t.leaf(fake_t.clone()));
                let gp_seed = derive_seed(cfg.seed, &[5, epoch as u64, it as u64]);
                let gp = gradient_penalty(
                    &t,
                    |t, x| critic_forward(t, &dv, x),
                    &hr_t,
                    &fake_t,
                    gp_seed,
                );
                let wasserstein = t.sub(mean_all(&t, d_fake), mean_all(&t, d_real));
                let loss = t.add(wasserstein, t.scale(gp, cfg.weights.gp));
                let loss_v = finite_or_err(t.value(loss).item(), "critic loss", epoch)?;
                let grads = t.backward(loss);
                let gmap = collect_grads(&t, &grads, &dv);
                st.adam_d.step(&mut st.d, &gmap);
                sums[4] += loss_v;
                counts[1] += 1;
            } else {
                let t = Tape::new();
                let gv = st.g.bind(&t);
                let dv = st.d.bind(&t);
                let pv = phi.bind(&t);
                let x = t.leaf(plr_t);
                let y = t.leaf(hr_t);
                let fake = generator_forward(&t, &gv, x);
                let d_fake = critic_forward(&t, &dv, fake);
                let l_adv = adv_loss(&t, d_fake);
                let l_gra = grad_diff_loss(&t, fake, y);
                let l_mse = mse_loss(&t, fake, y);
                let l_per = perceptual_loss(&t, |t, v| phi_forward(t, &pv, v), fake, y);
                let mut loss = l_adv;
                loss = t.add(loss, t.scale(l_gra, cfg.weights.gra));
                loss = t.add(loss, t.scale(l_mse, cfg.weights.mse));
                loss = t.add(loss, t.scale(l_per, cfg.weights.per));
                for (var, name) in [
                    (l_adv, "adversarial loss"),
                    (l_gra, "gradient loss"),
                    (l_mse, "mse loss"),
                    (l_per, "perceptual loss"),
                ] {
                    finite_or_err(t.value(var).item(), name, epoch)?;
                }
                let grads = t.backward(loss);
                let gmap = collect_grads(&t, &grads, &gv); // G params only
                st.adam_g.step(&mut st.g, &gmap);
                sums[0] += t.value(l_adv).item();
                sums[1] += t.value(l_gra).item();
                sums[2] += t.value(l_mse).item();
                sums[3] += t.value(l_per).item();
                counts[0] += 1;
            }
        }

        let gd = counts[0].max(1) as f64;
        let dd = counts[1].max(1) as f64;
        st.history.push(LossRow {
            epoch: epoch + 1,
            l_adv: sums[0] / gd,
            l_gra: sums[1] / gd,
            l_mse: sums[2] / gd,
            l_per: sums[3] / gd,
            l_d: sums[4] / dd,
        });
        st.epoch = epoch + 1;
        save_state(out, &st, &arch, label, config_hash)?;
    }
    Ok(st.g)
}

// ----------------------------------------------------------- inference

fn input_channels(g: &ParamStore) -> usize {
    g.get("b1.c1.w").shape()[1]
}

/// Whole-image generator inference on a single-channel image.
pub fn predict(g: &ParamStore, img: &Image) -> Result<Image> {
    let chans = input_channels(g);
    if chans != 1 {
        return Err(Error::Shape(format!(
            "generator expects {} input channels, got a single image",
            chans
        )));
    }
    let t = Tape::new();
    let gv = g.bind(&t);
    let x = t.leaf(stack_images(&[img]));
    let y = t.value(generator_forward(&t, &gv, x));
    Ok(plane_to_image(&y, 0, 0))
}

/// Patch-and-stitch inference: predicts on the regular patch grid and
/// overlap-averages. Requires the grid to tile the image exactly.
pub fn predict_tiled(g: &ParamStore, img: &Image, patch: usize, stride: usize) -> Result<Image> {
    let patches = crate::image::patchify(img, patch, stride)?;
    let t_all: Vec<Image> = patches
        .chunks(16)
        .flat_map(|chunk| {
            let t = Tape::new();
            let gv = g.bind(&t);
            let refs: Vec<&Image> = chunk.iter().collect();
            let x = t.leaf(stack_images(&refs));
            let y = t.value(generator_forward(&t, &gv, x));
            (0..chunk.len()).map(move |i| plane_to_image(&y, i, 0)).collect::<Vec<_>>()
        })
        .collect();
    crate::image::unpatchify(&t_all, img.h(), img.w(), patch, stride)
}
