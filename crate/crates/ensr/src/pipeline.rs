//! End-to-end orchestration: corpus → five GANs → per-method SR →
//! ensemble → evaluation, every stage resumable from its artifacts.
//!
//! Stages are plain functions over a [`RunConfig`] plus explicit roots,
//! so the CLI can run any slice of the pipeline; [`run_all`] chains
//! them and labels failures with the stage that produced them. All
//! rasters written here carry the config tag word, and evaluation
//! refuses artifacts whose tag or corpus hash disagrees with the
//! config it was handed.

use crate::config::{derive_seed, EnsembleMode, RunConfig};
use crate::corpus::{self, CorpusCfg, CorpusManifest, ImageRecord, Role, Split};
use crate::ensemble::{
    ablation_grid, average_ensemble, inputs_subset, integrate_tiled, train_integrator,
    IntegratorCfg, PredictionStack,
};
use crate::error::{Error, Result};
use crate::gan::{predict_tiled, train_gan, GanCfg, LossWeights};
use crate::image::{patchify, quantize, Image, SrMethod};
use crate::io::{read_real, write_real};
use crate::metrics::{diff_histogram, mean_std, pooled_accuracy, psnr, ssim, MeanStd};
use crate::nn::checkpoint;
use crate::phantom::PhantomConfig;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Seed-derivation tags: dictionary, per-method GANs, integrator.
const SEED_DICT: u64 = 0xD1;
const SEED_GAN: u64 = 0x6A;
const SEED_INTEGRATOR: u64 = 0xE5;

pub fn corpus_cfg(run: &RunConfig) -> CorpusCfg {
    CorpusCfg {
        phantom: PhantomConfig {
            dims: run.corpus_dims,
            ellipses_min: run.corpus_ellipses_min,
            ellipses_max: run.corpus_ellipses_max,
            texture_amp: run.corpus_texture_amp,
            noise_sigma: run.corpus_noise_sigma,
        },
        n_train: run.corpus_n_train,
        n_test: run.corpus_n_test,
        n_dict: 3,
        dict: crate::classical::DictCfg {
            atoms: run.dict_atoms,
            sparsity: run.dict_sparsity,
            ksvd_iters: run.dict_iters,
            max_samples: run.dict_max_samples,
            seed: derive_seed(run.seed, &[SEED_DICT]),
            ..crate::classical::DictCfg::default()
        },
        hr_dir: None,
        seed: run.seed,
    }
}

pub fn gan_cfg(run: &RunConfig, method: SrMethod) -> GanCfg {
    GanCfg {
        epochs: run.gan_epochs,
        lr: run.gan_lr,
        batch: run.gan_batch,
        n_critic: run.gan_n_critic,
        width: run.gan_width,
        weights: LossWeights {
            gra: run.gan_lambda_gra,
            mse: run.gan_lambda_mse,
            per: run.gan_lambda_per,
            gp: run.gan_gp_coef,
        },
        seed: derive_seed(run.seed, &[SEED_GAN, method.index() as u64]),
    }
}

pub fn integrator_cfg(run: &RunConfig, inputs: usize) -> IntegratorCfg {
    IntegratorCfg {
        epochs: run.ensemble_epochs,
        lr: run.ensemble_lr,
        batch: run.ensemble_batch,
        width: run.gan_width,
        seed: derive_seed(run.seed, &[SEED_INTEGRATOR, inputs as u64]),
    }
}

pub fn gan_dir(out: &Path, method: SrMethod) -> PathBuf {
    out.join("gan").join(method.key())
}

pub fn prediction_path(out: &Path, split: Split, id: &str, method: SrMethod) -> PathBuf {
    out.join("predictions")
        .join(split.as_str())
        .join(id)
        .join(format!("{}.raw", method.key()))
}

pub fn ens_tag(inputs: usize, mode: &EnsembleMode) -> String {
    format!("{}{}", inputs, mode.as_str())
}

pub fn ensemble_ck_dir(out: &Path, tag: &str) -> PathBuf {
    out.join("ensemble").join(tag).join("ck")
}

pub fn ensemble_sr_path(out: &Path, tag: &str, split: Split, id: &str) -> PathBuf {
    out.join("ensemble")
        .join(tag)
        .join("sr")
        .join(split.as_str())
        .join(format!("{}.raw", id))
}

pub fn report_dir(out: &Path) -> PathBuf {
    out.join("report")
}

/// A pipeline failure tied to the stage that raised it; the partial
/// artifacts of earlier stages stay on disk for the next attempt.
#[derive(Debug)]
pub struct StageError {
    pub stage: String,
    pub source: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.source.exit_code()
    }
}

fn at_stage<T>(stage: &str, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|source| StageError {
        stage: stage.to_string(),
        source,
    })
}

pub fn stage_corpus(run: &RunConfig, corpus_root: &Path) -> Result<CorpusManifest> {
    corpus::build_corpus(corpus_root, &corpus_cfg(run))
}

fn gan_pairs(
    run: &RunConfig,
    corpus_root: &Path,
    manifest: &CorpusManifest,
    method: SrMethod,
) -> Result<Vec<(Image, Image)>> {
    let mut pairs = Vec::new();
    for rec in manifest.records(Split::Train) {
        let plr = corpus::load_image(corpus_root, rec, Role::Plr(method))?;
        let hr = corpus::load_image(corpus_root, rec, Role::Hr)?;
        let ps = patchify(&plr, run.gan_patch, run.gan_stride)?;
        let hs = patchify(&hr, run.gan_patch, run.gan_stride)?;
        pairs.extend(ps.into_iter().zip(hs));
    }
    Ok(pairs)
}

/// Trains one method's GAN, resuming from its checkpoints.
pub fn stage_train_gan(
    run: &RunConfig,
    corpus_root: &Path,
    out: &Path,
    method: SrMethod,
) -> Result<()> {
    let manifest = corpus::load_manifest(corpus_root)?;
    let pairs = gan_pairs(run, corpus_root, &manifest, method)?;
    train_gan(
        &pairs,
        method.key(),
        &gan_cfg(run, method),
        &gan_dir(out, method),
        &run.hash_hex(),
    )?;
    Ok(())
}

/// Trains the five per-method GANs, up to `jobs` of them concurrently
/// (capped at five).
pub fn stage_train_gans(
    run: &RunConfig,
    corpus_root: &Path,
    out: &Path,
    jobs: usize,
) -> Result<()> {
    let jobs = jobs.clamp(1, SrMethod::ALL.len());
    for wave in SrMethod::ALL.chunks(jobs) {
        let mut results: Vec<Result<()>> = Vec::new();
        std::thread::scope(|s| {
            let handles: Vec<_> = wave
                .iter()
                .map(|&m| s.spawn(move || stage_train_gan(run, corpus_root, out, m)))
                .collect();
            results = handles.into_iter().map(|h| h.join().unwrap()).collect();
        });
        for r in results {
            r?;
        }
    }
    Ok(())
}

/// Runs every trained generator over the PLR images of all splits and
/// stores the SR outputs, stamped with the config tag.
pub fn stage_predict(run: &RunConfig, corpus_root: &Path, out: &Path) -> Result<()> {
    let manifest = corpus::load_manifest(corpus_root)?;
    let tag = run.tag();
    for m in SrMethod::ALL {
        let dir = gan_dir(out, m).join("g");
        let ck = checkpoint::load(&dir)?;
        if ck.extra.get("kind").and_then(|v| v.as_str()) != Some("generator") {
            return Err(Error::Checkpoint(format!(
                "{}: not a generator checkpoint",
                dir.display()
            )));
        }
        for rec in &manifest.records {
            let plr = corpus::load_image(corpus_root, rec, Role::Plr(m))?;
            let sr = predict_tiled(&ck.params, &plr, run.gan_patch, run.gan_stride)?;
            let path = prediction_path(out, rec.split, &rec.id, m);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_real(&path, &sr, tag)?;
        }
    }
    Ok(())
}

fn sr_image(out: &Path, run: &RunConfig, rec: &ImageRecord, method: SrMethod) -> Result<Image> {
    let path = prediction_path(out, rec.split, &rec.id, method);
    let (img, tag) = read_real(&path).map_err(|e| {
        Error::Corpus(format!(
            "entry {} method {}: SR output missing or unreadable (run predict first): {}",
            rec.id,
            method.key(),
            e
        ))
    })?;
    if tag != run.tag() {
        return Err(Error::Config(format!(
            "{}: written under a different config (tag {:08x}, expected {:08x})",
            path.display(),
            tag,
            run.tag()
        )));
    }
    Ok(img)
}

fn ens_sr_image(out: &Path, run: &RunConfig, tag: &str, rec: &ImageRecord) -> Result<Image> {
    let path = ensemble_sr_path(out, tag, rec.split, &rec.id);
    let (img, t) = read_real(&path).map_err(|e| {
        Error::Corpus(format!(
            "entry {} ensemble {}: output missing or unreadable (run predict-ensemble first): {}",
            rec.id, tag, e
        ))
    })?;
    if t != run.tag() {
        return Err(Error::Config(format!(
            "{}: written under a different config (tag {:08x}, expected {:08x})",
            path.display(),
            t,
            run.tag()
        )));
    }
    Ok(img)
}

/// The stored per-method SR outputs of one entry as a channel stack.
pub fn load_sr_stack(
    out: &Path,
    run: &RunConfig,
    rec: &ImageRecord,
    methods: &[SrMethod],
) -> Result<PredictionStack> {
    let mut layers = Vec::with_capacity(methods.len());
    for &m in methods {
        layers.push((m, sr_image(out, run, rec, m)?));
    }
    PredictionStack::new(layers)
}

/// Fits the integrator CNN on the training split's SR stacks; a no-op
/// for the averaging ensemble, which has nothing to learn.
pub fn stage_train_ensemble(
    run: &RunConfig,
    corpus_root: &Path,
    out: &Path,
    inputs: usize,
    mode: &EnsembleMode,
) -> Result<()> {
    if matches!(mode, EnsembleMode::Avg) {
        return Ok(());
    }
    let manifest = corpus::load_manifest(corpus_root)?;
    let subset = inputs_subset(inputs)?;
    let mut pairs = Vec::new();
    for rec in manifest.records(Split::Train) {
        let stack = load_sr_stack(out, run, rec, subset)?;
        let hr = corpus::load_image(corpus_root, rec, Role::Hr)?;
        let tiles = stack.patchify(run.gan_patch, run.gan_stride)?;
        let hrs = patchify(&hr, run.gan_patch, run.gan_stride)?;
        pairs.extend(tiles.into_iter().zip(hrs));
    }
    let dir = ensemble_ck_dir(out, &ens_tag(inputs, mode));
    train_integrator(&pairs, &integrator_cfg(run, inputs), &dir, &run.hash_hex())?;
    Ok(())
}

/// Produces the fused SR image for every corpus entry.
pub fn stage_predict_ensemble(
    run: &RunConfig,
    corpus_root: &Path,
    out: &Path,
    inputs: usize,
    mode: &EnsembleMode,
) -> Result<()> {
    let manifest = corpus::load_manifest(corpus_root)?;
    let subset = inputs_subset(inputs)?;
    let tag = ens_tag(inputs, mode);
    let ck = match mode {
        EnsembleMode::Cnn => Some(checkpoint::load(&ensemble_ck_dir(out, &tag))?),
        EnsembleMode::Avg => None,
    };
    for rec in &manifest.records {
        let stack = load_sr_stack(out, run, rec, subset)?;
        let sr = match &ck {
            Some(ck) => integrate_tiled(ck, &stack, run.gan_patch, run.gan_stride)?,
            None => average_ensemble(&stack),
        };
        let path = ensemble_sr_path(out, &tag, rec.split, &rec.id);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_real(&path, &sr, run.tag())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub method: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: String,
    pub psnr: MeanStd,
    pub ssim: MeanStd,
    /// Accuracy curve over all test pixels pooled.
    pub pooled: Vec<f64>,
    /// Mean of the per-image accuracy curves.
    pub mean_curve: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub rows: Vec<EvalRow>,
    pub summaries: Vec<MethodSummary>,
}

fn u8_image(h: usize, w: usize, q: &[u8]) -> Result<Image> {
    Image::new(h, w, q.iter().map(|&v| v as f64).collect())
}

/// Scores every test entry: each image pair is quantized to 0..255 on
/// its own range, then PSNR, SSIM and the accuracy histogram are taken
/// on the quantized values (peak 255).
pub fn stage_evaluate(
    run: &RunConfig,
    corpus_root: &Path,
    out: &Path,
    inputs: usize,
    mode: &EnsembleMode,
    rdir: &Path,
) -> Result<Report> {
    let manifest = corpus::load_manifest(corpus_root)?;
    let want = corpus_cfg(run).hash_hex();
    if manifest.config != want {
        return Err(Error::Config(format!(
            "{}: corpus was built from a different config (hash {} vs {})",
            corpus_root.display(),
            manifest.config,
            want
        )));
    }
    let records = manifest.records(Split::Test);
    if records.is_empty() {
        return Err(Error::Config("corpus has no test split to evaluate".into()));
    }
    let etag = ens_tag(inputs, mode);
    let mut methods: Vec<String> = SrMethod::ALL.iter().map(|m| m.key().to_string()).collect();
    methods.push("ensemble".to_string());

    let mut rows = Vec::new();
    let mut psnrs = vec![Vec::new(); methods.len()];
    let mut ssims = vec![Vec::new(); methods.len()];
    let mut hists: Vec<Vec<[u64; 256]>> = vec![Vec::new(); methods.len()];
    for rec in &records {
        let hr = corpus::load_image(corpus_root, rec, Role::Hr)?;
        let (hq, _) = quantize(&hr);
        let hq_img = u8_image(hr.h(), hr.w(), &hq)?;
        for (mi, name) in methods.iter().enumerate() {
            let sr = if mi < SrMethod::ALL.len() {
                sr_image(out, run, rec, SrMethod::ALL[mi])?
            } else {
                ens_sr_image(out, run, &etag, rec)?
            };
            if sr.h() != hr.h() || sr.w() != hr.w() {
                return Err(Error::Shape(format!(
                    "entry {} method {}: SR is {}x{}, HR is {}x{}",
                    rec.id,
                    name,
                    sr.h(),
                    sr.w(),
                    hr.h(),
                    hr.w()
                )));
            }
            let (sq, _) = quantize(&sr);
            let sq_img = u8_image(sr.h(), sr.w(), &sq)?;
            let p = psnr(&sq_img, &hq_img, 255.0)?;
            let s = ssim(&sq_img, &hq_img, 255.0)?;
            rows.push(EvalRow {
                id: rec.id.clone(),
                method: name.clone(),
                psnr: p,
                ssim: s,
            });
            psnrs[mi].push(p);
            ssims[mi].push(s);
            hists[mi].push(diff_histogram(&sq, &hq)?);
        }
    }

    let mut summaries = Vec::with_capacity(methods.len());
    for (mi, name) in methods.iter().enumerate() {
        let pooled = pooled_accuracy(&hists[mi])?;
        let mut mean_curve = vec![0.0; 256];
        for h in &hists[mi] {
            let c = pooled_accuracy(std::slice::from_ref(h))?;
            for (m, v) in mean_curve.iter_mut().zip(c) {
                *m += v;
            }
        }
        for v in &mut mean_curve {
            *v /= hists[mi].len() as f64;
        }
        summaries.push(MethodSummary {
            method: name.clone(),
            psnr: mean_std(&psnrs[mi])?,
            ssim: mean_std(&ssims[mi])?,
            pooled,
            mean_curve,
        });
    }
    let report = Report { rows, summaries };
    write_report(rdir, &report)?;
    Ok(report)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Emits metrics.csv (per-image rows plus mean/std aggregate rows) and
/// the pooled and per-image-mean accuracy curves.
pub fn write_report(dir: &Path, report: &Report) -> Result<()> {
    let mut m = String::from("id,method,psnr_db,ssim\n");
    for r in &report.rows {
        writeln!(m, "{},{},{:.6},{:.6}", r.id, r.method, r.psnr, r.ssim).unwrap();
    }
    for s in &report.summaries {
        writeln!(
            m,
            "mean,{},{:.6},{:.6}",
            s.method, s.psnr.mean, s.ssim.mean
        )
        .unwrap();
        writeln!(m, "std,{},{:.6},{:.6}", s.method, s.psnr.std, s.ssim.std).unwrap();
    }
    write_text(&dir.join("metrics.csv"), &m)?;

    for (file, pick) in [
        ("accuracy_pooled.csv", true),
        ("accuracy_mean.csv", false),
    ] {
        let mut c = String::from("threshold");
        for s in &report.summaries {
            write!(c, ",{}", s.method).unwrap();
        }
        c.push('\n');
        for t in 0..256 {
            write!(c, "{}", t).unwrap();
            for s in &report.summaries {
                let curve = if pick { &s.pooled } else { &s.mean_curve };
                write!(c, ",{:.9}", curve[t]).unwrap();
            }
            c.push('\n');
        }
        write_text(&dir.join(file), &c)?;
    }
    Ok(())
}

fn write_ablation_csv(dir: &Path, cells: &[(usize, EnsembleMode, &Report)]) -> Result<()> {
    let mut s = String::from("inputs,mode,psnr_mean,psnr_std,ssim_mean,ssim_std\n");
    for (inputs, mode, report) in cells {
        let ens = report
            .summaries
            .iter()
            .find(|x| x.method == "ensemble")
            .ok_or_else(|| Error::Config("report lacks an ensemble summary".into()))?;
        writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            inputs,
            mode.as_str(),
            ens.psnr.mean,
            ens.psnr.std,
            ens.ssim.mean,
            ens.ssim.std
        )
        .unwrap();
    }
    write_text(&dir.join("ablation.csv"), &s)
}

/// The whole workflow. With `ablation` set, the ensemble stages run for
/// all four Table-IV cells (3/5 inputs × avg/cnn) and an ablation.csv
/// summary lands next to the per-cell reports.
pub fn run_all(
    run: &RunConfig,
    corpus_root: &Path,
    out: &Path,
    jobs: usize,
    ablation: bool,
    progress: &mut dyn FnMut(&str),
) -> std::result::Result<Vec<(String, Report)>, StageError> {
    at_stage(
        "setup",
        fs::create_dir_all(out)
            .map_err(|e| Error::io(out, e))
            .and_then(|_| write_text(&out.join("config.txt"), &run.echo())),
    )?;
    progress("make-corpus");
    at_stage("make-corpus", stage_corpus(run, corpus_root))?;
    progress("train-gan");
    at_stage("train-gan", stage_train_gans(run, corpus_root, out, jobs))?;
    progress("predict");
    at_stage("predict", stage_predict(run, corpus_root, out))?;

    let cells: Vec<(usize, EnsembleMode)> = if ablation {
        ablation_grid().to_vec()
    } else {
        vec![(run.ensemble_inputs, run.ensemble_mode.clone())]
    };
    let mut reports: Vec<(String, Report)> = Vec::new();
    for (inputs, mode) in &cells {
        let tag = ens_tag(*inputs, mode);
        progress(&format!("train-ensemble {}", tag));
        at_stage(
            &format!("train-ensemble {}", tag),
            stage_train_ensemble(run, corpus_root, out, *inputs, mode),
        )?;
        progress(&format!("predict-ensemble {}", tag));
        at_stage(
            &format!("predict-ensemble {}", tag),
            stage_predict_ensemble(run, corpus_root, out, *inputs, mode),
        )?;
        progress(&format!("evaluate {}", tag));
        let rdir = if ablation {
            report_dir(out).join(&tag)
        } else {
            report_dir(out)
        };
        let rep = at_stage(
            &format!("evaluate {}", tag),
            stage_evaluate(run, corpus_root, out, *inputs, mode, &rdir),
        )?;
        reports.push((tag, rep));
    }
    if ablation {
        let cells_ref: Vec<(usize, EnsembleMode, &Report)> = cells
            .iter()
            .zip(&reports)
            .map(|((i, m), (_, r))| (*i, m.clone(), r))
            .collect();
        at_stage("evaluate", write_ablation_csv(&report_dir(out), &cells_ref))?;
    }
    Ok(reports)
}

const PLOT_PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

/// Renders an accuracy-curve CSV (threshold column plus one column per
/// method) as a self-contained SVG line chart.
pub fn plot_accuracy_svg(csv: &Path, svg: &Path) -> Result<()> {
    let text = fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty file", csv.display())))?;
    let cols: Vec<&str> = header.split(',').map(|c| c.trim()).collect();
    if cols.len() < 2 {
        return Err(Error::Config(format!(
            "{}: expected a threshold column plus at least one series",
            csv.display()
        )));
    }
    let parse = |cell: &str, ln: usize| -> Result<f64> {
        cell.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("{}: line {}: bad number {:?}", csv.display(), ln, cell)))
    };
    let mut xs: Vec<f64> = Vec::new();
    let mut series: Vec<Vec<f64>> = vec![Vec::new(); cols.len() - 1];
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != cols.len() {
            return Err(Error::Config(format!(
                "{}: line {}: {} fields, header has {}",
                csv.display(),
                i + 2,
                parts.len(),
                cols.len()
            )));
        }
        xs.push(parse(parts[0], i + 2)?);
        for (k, cell) in parts[1..].iter().enumerate() {
            series[k].push(parse(cell, i + 2)?);
        }
    }
    if xs.is_empty() {
        return Err(Error::Config(format!("{}: no data rows", csv.display())));
    }

    let (w, h) = (720.0, 520.0);
    let (left, right, top, bottom) = (70.0, 30.0, 25.0, 65.0);
    let x0 = xs[0];
    let x1 = *xs.last().unwrap();
    let xspan = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |x: f64| left + (x - x0) / xspan * (w - left - right);
    let py = |y: f64| h - bottom - y.clamp(0.0, 1.0) * (h - top - bottom);

    let mut s = String::new();
    write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" font-family=\"sans-serif\" font-size=\"12\">\n",
        w, h
    )
    .unwrap();
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // gridlines and y labels
    for i in 0..=5 {
        let v = i as f64 * 0.2;
        let y = py(v);
        writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>",
            px(x0),
            y,
            px(x1),
            y
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.1}</text>",
            left - 8.0,
            y + 4.0,
            v
        )
        .unwrap();
    }
    // x ticks every 50 units (or units if the span is tiny)
    let step = if xspan >= 100.0 { 50.0 } else { (xspan / 5.0).max(1.0).round() };
    let mut t = x0;
    while t <= x1 + 1e-9 {
        let x = px(t);
        writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#999\"/>",
            x,
            h - bottom,
            x,
            h - bottom + 5.0
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            x,
            h - bottom + 20.0,
            t as i64
        )
        .unwrap();
        t += step;
    }
    writeln!(
        s,
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        left,
        h - bottom,
        w - right,
        h - bottom
    )
    .unwrap();
    writeln!(
        s,
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        left,
        top,
        left,
        h - bottom
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">threshold t</text>",
        (left + w - right) / 2.0,
        h - 18.0
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">accuracy</text>",
        (top + h - bottom) / 2.0,
        (top + h - bottom) / 2.0
    )
    .unwrap();
    for (k, ys) in series.iter().enumerate() {
        let color = PLOT_PALETTE[k % PLOT_PALETTE.len()];
        let mut pts = String::new();
        for (x, y) in xs.iter().zip(ys) {
            write!(pts, "{:.1},{:.1} ", px(*x), py(*y)).unwrap();
        }
        writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>",
            pts.trim_end(),
            color
        )
        .unwrap();
    }
    // legend, bottom-right of the plot area
    let lx = w - right - 150.0;
    let mut ly = h - bottom - 16.0 * series.len() as f64 - 12.0;
    for (k, name) in cols[1..].iter().enumerate() {
        let color = PLOT_PALETTE[k % PLOT_PALETTE.len()];
        writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{}\" stroke-width=\"2\"/>",
            lx,
            ly,
            lx + 24.0,
            ly,
            color
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            lx + 30.0,
            ly + 4.0,
            name
        )
        .unwrap();
        ly += 16.0;
    }
    s.push_str("</svg>\n");
    write_text(svg, &s)
}
