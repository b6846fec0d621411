//! `ensr` — the pipeline's subcommands, one per stage, plus single-image
//! utilities. Configuration comes from an optional key=value file with
//! `--set` overrides on top; the resolved echo is written next to the
//! artifacts each command produces.

use clap::{Parser, Subcommand};
use ensr::config::{EnsembleMode, RunConfig};
use ensr::corpus;
use ensr::error::Error;
use ensr::image::SrMethod;
use ensr::io::{read_real, write_real};
use ensr::pipeline::{self, StageError};
use ensr::{kspace, Result};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "ensr",
    version,
    about = "Super-resolution of bandwidth-limited MR images by an ensemble of complementary upscalers"
)]
struct Cli {
    /// Config file (flat `key = value` lines; missing keys take defaults)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set gan.epochs=3 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the corpus: HR phantoms fanned out to LR and five PLR each
    MakeCorpus {
        /// Corpus root directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        dims: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use the sorted .raw images in this directory as HR instead of phantoms
        #[arg(long, value_name = "DIR")]
        hr_dir: Option<PathBuf>,
    },
    /// Halve a raster's resolution through the k-space model
    Downsample {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Upscale one LR raster with all five classical methods
    Preprocess {
        /// LR image in the container format
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Corpus root holding the trained SC/A+ dictionaries
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        /// Directory for the five plr_*.raw outputs
        #[arg(long)]
        out: PathBuf,
    },
    /// Train per-method GAN(s) on the corpus train split
    TrainGan {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        /// Run root for checkpoints and loss curves
        #[arg(long)]
        out: PathBuf,
        /// zip|bi|nedi|sc|aplus, or all
        #[arg(long, default_value = "all")]
        method: String,
        /// Concurrent trainings (default: available cores, capped at 5)
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run every trained generator over all corpus entries
    Predict {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the integrator CNN on the training split's SR stacks
    TrainEnsemble {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// 3 or 5 (overrides ensemble.inputs)
        #[arg(long)]
        inputs: Option<usize>,
        /// cnn or avg (overrides ensemble.mode)
        #[arg(long)]
        mode: Option<String>,
    },
    /// Fuse the per-method SR outputs for every corpus entry
    PredictEnsemble {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        inputs: Option<usize>,
        #[arg(long)]
        mode: Option<String>,
    },
    /// Score the test split and write the report CSVs
    Evaluate {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        inputs: Option<usize>,
        #[arg(long)]
        mode: Option<String>,
    },
    /// Render an accuracy-curve CSV as an SVG chart
    PlotAccuracy {
        #[arg(long, value_name = "FILE")]
        csv: PathBuf,
        /// Output path (default: the CSV with an .svg extension)
        #[arg(long, value_name = "FILE")]
        svg: Option<PathBuf>,
    },
    /// The whole workflow: corpus, five GANs, SR, ensemble, report
    RunAll {
        #[arg(long)]
        out: PathBuf,
        /// Corpus root (default: <out>/corpus)
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Run all four {3,5} x {avg,cnn} ensemble variants
        #[arg(long)]
        ablation: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(match dispatch(cli) {
        Ok(()) => 0,
        Err((msg, code)) => {
            eprintln!("error: {}", msg);
            code
        }
    });
}

type Failure = (String, i32);

fn fail(e: Error) -> Failure {
    (e.to_string(), e.exit_code())
}

fn fail_stage(e: StageError) -> Failure {
    (e.to_string(), e.exit_code())
}

fn resolve(config: &Option<PathBuf>, sets: &[String]) -> Result<RunConfig> {
    let mut run = match config {
        Some(p) => RunConfig::parse(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => RunConfig::default(),
    };
    for s in sets {
        let (k, v) = s.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects KEY=VALUE, got {:?}", s))
        })?;
        run.set(k, v)?;
    }
    run.validate()?;
    Ok(run)
}

fn apply_ensemble_flags(
    run: &mut RunConfig,
    inputs: Option<usize>,
    mode: Option<String>,
) -> Result<()> {
    if let Some(i) = inputs {
        run.set("ensemble.inputs", &i.to_string())?;
    }
    if let Some(m) = mode {
        run.set("ensemble.mode", &m)?;
    }
    run.validate()
}

fn write_echo(dir: &Path, run: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("config.txt");
    fs::write(&path, run.echo()).map_err(|e| Error::io(&path, e))
}

fn default_jobs() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(5)
}

fn parse_methods(s: &str) -> Result<Vec<SrMethod>> {
    if s == "all" {
        return Ok(SrMethod::ALL.to_vec());
    }
    SrMethod::from_key(s)
        .map(|m| vec![m])
        .ok_or_else(|| Error::Config(format!("unknown method {:?} (zip|bi|nedi|sc|aplus|all)", s)))
}

fn dispatch(cli: Cli) -> std::result::Result<(), Failure> {
    let mut run = resolve(&cli.config, &cli.sets).map_err(fail)?;
    match cli.cmd {
        Cmd::MakeCorpus {
            out,
            n_train,
            n_test,
            dims,
            seed,
            hr_dir,
        } => {
            let flags = [
                ("corpus.n_train", n_train.map(|v| v.to_string())),
                ("corpus.n_test", n_test.map(|v| v.to_string())),
                ("corpus.dims", dims.map(|v| v.to_string())),
                ("seed", seed.map(|v| v.to_string())),
            ];
            for (k, v) in flags {
                if let Some(v) = v {
                    run.set(k, &v).map_err(fail)?;
                }
            }
            // only the corpus-facing keys matter here; build_corpus
            // validates them, so a small-dims corpus doesn't trip over
            // unrelated GAN defaults sized for 320px
            let mut cfg = pipeline::corpus_cfg(&run);
            cfg.hr_dir = hr_dir;
            let manifest = corpus::build_corpus(&out, &cfg).map_err(fail)?;
            write_echo(&out, &run).map_err(fail)?;
            println!(
                "corpus at {}: {} train / {} valid / {} test, {}x{} px",
                out.display(),
                manifest.records(corpus::Split::Train).len(),
                manifest.records(corpus::Split::Valid).len(),
                manifest.records(corpus::Split::Test).len(),
                cfg.phantom.dims,
                cfg.phantom.dims,
            );
            Ok(())
        }
        Cmd::Downsample { input, out } => {
            let (img, tag) = read_real(&input).map_err(fail)?;
            let lr = kspace::downsample(&img).map_err(fail)?;
            write_real(&out, &lr, tag).map_err(fail)?;
            println!("wrote {} ({}x{})", out.display(), lr.h(), lr.w());
            Ok(())
        }
        Cmd::Preprocess { input, corpus, out } => {
            let (lr, tag) = read_real(&input).map_err(fail)?;
            let (sc, ap) = corpus::load_dictionaries(&corpus).map_err(fail)?;
            let plr = corpus::fan_out(&lr, &sc, &ap).map_err(fail)?;
            fs::create_dir_all(&out)
                .map_err(|e| Error::io(&out, e))
                .map_err(fail)?;
            for (m, img) in &plr {
                let path = out.join(format!("plr_{}.raw", m.key()));
                write_real(&path, img, tag).map_err(fail)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Cmd::TrainGan {
            corpus,
            out,
            method,
            jobs,
        } => {
            let methods = parse_methods(&method).map_err(fail)?;
            write_echo(&out, &run).map_err(fail)?;
            if methods.len() == SrMethod::ALL.len() {
                let jobs = jobs.unwrap_or_else(default_jobs);
                println!("training 5 GANs ({} concurrent)...", jobs.clamp(1, 5));
                pipeline::stage_train_gans(&run, &corpus, &out, jobs).map_err(fail)?;
            } else {
                for m in methods {
                    println!("training {} GAN...", m.key());
                    pipeline::stage_train_gan(&run, &corpus, &out, m).map_err(fail)?;
                }
            }
            Ok(())
        }
        Cmd::Predict { corpus, out } => {
            write_echo(&out, &run).map_err(fail)?;
            pipeline::stage_predict(&run, &corpus, &out).map_err(fail)?;
            println!("SR outputs under {}", out.join("predictions").display());
            Ok(())
        }
        Cmd::TrainEnsemble {
            corpus,
            out,
            inputs,
            mode,
        } => {
            apply_ensemble_flags(&mut run, inputs, mode).map_err(fail)?;
            write_echo(&out, &run).map_err(fail)?;
            let tag = pipeline::ens_tag(run.ensemble_inputs, &run.ensemble_mode);
            if matches!(run.ensemble_mode, EnsembleMode::Avg) {
                println!("ensemble {} has no parameters; nothing to train", tag);
            } else {
                println!("training integrator {}...", tag);
            }
            pipeline::stage_train_ensemble(
                &run,
                &corpus,
                &out,
                run.ensemble_inputs,
                &run.ensemble_mode.clone(),
            )
            .map_err(fail)?;
            Ok(())
        }
        Cmd::PredictEnsemble {
            corpus,
            out,
            inputs,
            mode,
        } => {
            apply_ensemble_flags(&mut run, inputs, mode).map_err(fail)?;
            let tag = pipeline::ens_tag(run.ensemble_inputs, &run.ensemble_mode);
            pipeline::stage_predict_ensemble(
                &run,
                &corpus,
                &out,
                run.ensemble_inputs,
                &run.ensemble_mode.clone(),
            )
            .map_err(fail)?;
            println!(
                "fused outputs under {}",
                out.join("ensemble").join(&tag).join("sr").display()
            );
            Ok(())
        }
        Cmd::Evaluate {
            corpus,
            out,
            inputs,
            mode,
        } => {
            apply_ensemble_flags(&mut run, inputs, mode).map_err(fail)?;
            let rdir = pipeline::report_dir(&out);
            let report = pipeline::stage_evaluate(
                &run,
                &corpus,
                &out,
                run.ensemble_inputs,
                &run.ensemble_mode.clone(),
                &rdir,
            )
            .map_err(fail)?;
            print_summary(&report);
            println!("report written to {}", rdir.display());
            Ok(())
        }
        Cmd::PlotAccuracy { csv, svg } => {
            let svg = svg.unwrap_or_else(|| csv.with_extension("svg"));
            pipeline::plot_accuracy_svg(&csv, &svg).map_err(fail)?;
            println!("wrote {}", svg.display());
            Ok(())
        }
        Cmd::RunAll {
            out,
            corpus,
            jobs,
            ablation,
        } => {
            let corpus_root = corpus.unwrap_or_else(|| out.join("corpus"));
            let jobs = jobs.unwrap_or_else(default_jobs);
            let reports = pipeline::run_all(&run, &corpus_root, &out, jobs, ablation, &mut |s| {
                println!("stage: {}", s)
            })
            .map_err(fail_stage)?;
            for (tag, report) in &reports {
                println!("--- ensemble {} ---", tag);
                print_summary(report);
            }
            println!("reports under {}", pipeline::report_dir(&out).display());
            Ok(())
        }
    }
}

fn print_summary(report: &pipeline::Report) {
    println!("{:<10} {:>18} {:>19}", "method", "psnr (dB)", "ssim");
    for s in &report.summaries {
        println!(
            "{:<10} {:>9.3} ± {:<6.3} {:>10.4} ± {:<6.4}",
            s.method, s.psnr.mean, s.psnr.std, s.ssim.mean, s.ssim.std
        );
    }
}
