// scratch timing probe — not part of the crate
use ensr::config::{EnsembleMode, RunConfig};
use ensr::corpus::{self, Split};
use ensr::gan::{self, GanCfg, LossWeights};
use ensr::image::patchify;
use ensr::pipeline;
use std::time::Instant;

fn main() {
    let root = std::path::PathBuf::from("/tmp/probe_desk");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();

    let mut run = RunConfig::default();
    run.seed = 101;
    run.corpus_dims = 96;
    run.corpus_n_train = 8;
    run.corpus_n_test = 3;
    run.dict_atoms = 128;
    run.dict_sparsity = 3;
    run.dict_iters = 5;
    run.dict_max_samples = 4000;
    run.gan_epochs = 1;
    run.gan_lr = 1e-4;
    run.gan_batch = 6;
    run.gan_patch = 32;
    run.gan_stride = 32;
    run.gan_n_critic = 2;
    run.gan_width = 0.25;
    run.ensemble_epochs = 1;
    run.ensemble_batch = 4;
    run.ensemble_inputs = 5;
    run.ensemble_mode = EnsembleMode::Cnn;
    run.validate().unwrap();

    let corpus_root = root.join("corpus");
    let t0 = Instant::now();
    let cfg = pipeline::corpus_cfg(&run);
    let manifest = corpus::build_corpus(&corpus_root, &cfg).unwrap();
    println!("corpus: {:.1}s", t0.elapsed().as_secs_f64());

    // one GAN epoch, zip method
    let pairs: Vec<_> = {
        let mut v = Vec::new();
        for rec in manifest.records(Split::Train) {
            let hr = corpus::load_image(&corpus_root, rec, corpus::Role::Hr).unwrap();
            let plr =
                corpus::load_image(&corpus_root, rec, corpus::Role::Plr(ensr::image::SrMethod::Zip))
                    .unwrap();
            let hp = patchify(&hr, 32, 32).unwrap();
            let pp = patchify(&plr, 32, 32).unwrap();
            v.extend(pp.into_iter().zip(hp));
        }
        v
    };
    println!("pairs: {}", pairs.len());
    let gcfg = GanCfg {
        epochs: 1,
        lr: 1e-4,
        batch: 6,
        n_critic: 2,
        width: 0.25,
        weights: LossWeights { gra: 0.1, mse: 1.0, per: 0.1, gp: 10.0 },
        seed: 7,
    };
    let t0 = Instant::now();
    let g = gan::train_gan(&pairs, "zip", &gcfg, &root.join("gan"), "x").unwrap();
    println!("gan 1 epoch (3 G + 6 D steps): {:.1}s", t0.elapsed().as_secs_f64());

    // whole-image predict on one 48x48 LR -> wait, generator runs at HR size; PLR is 96x96
    let rec = &manifest.records(Split::Test)[0];
    let plr = corpus::load_image(&corpus_root, rec, corpus::Role::Plr(ensr::image::SrMethod::Zip))
        .unwrap();
    let t0 = Instant::now();
    let sr = gan::predict_tiled(&g, &plr, 32, 32).unwrap();
    println!("predict_tiled 96x96: {:.2}s ({}x{})", t0.elapsed().as_secs_f64(), sr.h(), sr.w());

    // one integrator epoch on PLR stacks (stand-in for SR stacks, same shapes)
    let mut ipairs = Vec::new();
    for rec in manifest.records(Split::Train) {
        let hr = corpus::load_image(&corpus_root, rec, corpus::Role::Hr).unwrap();
        let stack = corpus::load_stack(&corpus_root, rec).unwrap();
        let sp = stack.patchify(32, 32).unwrap();
        let hp = patchify(&hr, 32, 32).unwrap();
        ipairs.extend(sp.into_iter().zip(hp));
    }
    let icfg = ensr::ensemble::IntegratorCfg { epochs: 1, lr: 1e-4, batch: 4, width: 0.25, seed: 5 };
    let t0 = Instant::now();
    let _ck = ensr::ensemble::train_integrator(&ipairs, &icfg, &root.join("ens"), "x").unwrap();
    println!("integrator 1 epoch ({} pairs, 14 iters): {:.1}s", ipairs.len(), t0.elapsed().as_secs_f64());

    let stack = corpus::load_stack(&corpus_root, rec).unwrap();
    let t0 = Instant::now();
    let ck = ensr::nn::checkpoint::load(&root.join("ens")).unwrap();
    let _sr = ensr::ensemble::integrate_tiled(&ck, &stack, 32, 32).unwrap();
    println!("integrate_tiled 96x96: {:.2}s", t0.elapsed().as_secs_f64());
}
