//! Command-line front end: scene generation, training, rendering, evaluation
//! and the gradient check.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use deferred_splat::dataset::Split;
use deferred_splat::eval::{env_psnr, evaluate};
use deferred_splat::gradcheck::{self, GradcheckConfig};
use deferred_splat::image::ImageRGB;
use deferred_splat::io::{checkpoint, pfm, png, transforms};
use deferred_splat::metrics::{mae_degrees, psnr, ssim};
use deferred_splat::render::render;
use deferred_splat::scenegen::{self, EnvKind, SceneKind, SceneSpec};
use deferred_splat::trainer::{render_settings_for, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "dsplat", version, about = "Gaussian splatting with deferred reflections")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ray-trace a reference sphere scene and write it as a dataset.
    MakeScene {
        #[arg(long, value_parser = parse_kind)]
        kind: SceneKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training views; a fifth as many test views are interleaved.
        #[arg(long, default_value_t = 50)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        res: usize,
        #[arg(long, default_value = "sinusoid", value_parser = parse_env)]
        env: EnvKind,
    },
    /// Optimize a scene from a dataset and write `model.ply` (+ sidecars) to --out.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        deferred: Option<OnOff>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render one camera of the training dataset from a checkpoint.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        camera_index: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dump_gbuffer: Option<PathBuf>,
        /// Camera file; defaults to the one saved next to the checkpoint.
        #[arg(long)]
        cameras: Option<PathBuf>,
    },
    /// Held-out metrics of a checkpoint on a dataset's test views.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also report mean angular normal error where ground truth exists.
        #[arg(long)]
        normals: bool,
    },
    /// Finite-difference check of every analytic gradient; exit 0 iff all pass.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        gaussians: usize,
        #[arg(long, default_value_t = 24)]
        res: usize,
        #[arg(long)]
        forward: bool,
    },
}

fn parse_kind(s: &str) -> Result<SceneKind, String> {
    s.parse().map_err(|e: deferred_splat::Error| e.to_string())
}

fn parse_env(s: &str) -> Result<EnvKind, String> {
    s.parse().map_err(|e: deferred_splat::Error| e.to_string())
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    match threads {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
        None => Ok(f()),
    }
}

fn model_path(ckpt: &Path) -> PathBuf {
    if ckpt.is_dir() {
        ckpt.join("model.ply")
    } else {
        ckpt.to_path_buf()
    }
}

fn make_scene(spec: SceneSpec, out: &Path) -> anyhow::Result<()> {
    let t0 = Instant::now();
    let ds = scenegen::make_dataset(&spec, out)?;
    println!(
        "wrote {} train + {} test views ({}x{}) to {} in {:.1}s",
        ds.train().len(),
        ds.test().len(),
        spec.resolution,
        spec.resolution,
        out.display(),
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

fn train(data: &Path, out: &Path, mut cfg: TrainConfig, threads: Option<usize>) -> anyhow::Result<()> {
    let ds = transforms::load_dataset(data)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let cam_src = data.join(transforms::CAMERA_FILE);
    std::fs::copy(&cam_src, out.join(transforms::CAMERA_FILE)).with_context(|| format!("copying {}", cam_src.display()))?;
    if cfg.log_interval == 0 {
        cfg.log_interval = u64::MAX;
    }
    let log_every = cfg.log_interval;
    let t0 = Instant::now();
    let ck = with_threads(threads, || -> anyhow::Result<_> {
        let mut trainer = Trainer::new(cfg, &ds)?;
        println!(
            "training {} iterations on {} views, {} initial Gaussians",
            trainer.cfg.total_iters,
            ds.train().len(),
            trainer.cloud.len()
        );
        while !trainer.is_done() {
            let (stats, ev) = trainer.train_step()?;
            if stats.iteration % log_every == 0 {
                println!("{stats} [{:.0}s]", t0.elapsed().as_secs_f64());
            }
            if ev.terminated {
                println!("specular termination at iteration {}", stats.iteration);
            }
        }
        Ok(trainer.checkpoint())
    })??;
    let path = out.join("model.ply");
    checkpoint::save(&path, &ck)?;
    println!("saved {} ({} Gaussians) after {:.1}s", path.display(), ck.cloud.len(), t0.elapsed().as_secs_f64());
    Ok(())
}

fn save_map(dir: &Path, name: &str, w: usize, h: usize, data: Vec<[f64; 3]>) -> anyhow::Result<()> {
    let img = ImageRGB { width: w, height: h, data };
    png::write_rgb(&dir.join(format!("{name}.png")), &img)?;
    pfm::write(&dir.join(format!("{name}.pfm")), &pfm::from_f64(w, h, &img.data))?;
    Ok(())
}

fn render_cmd(ckpt: &Path, index: usize, out: &Path, dump: Option<&Path>, cameras: Option<&Path>) -> anyhow::Result<()> {
    let model = model_path(ckpt);
    let ck = checkpoint::load(&model)?;
    let cam_file = match cameras {
        Some(p) if p.is_dir() => p.join(transforms::CAMERA_FILE),
        Some(p) => p.to_path_buf(),
        None => model.parent().unwrap_or(Path::new(".")).join(transforms::CAMERA_FILE),
    };
    let (cams, background) = transforms::load_cameras(&cam_file)?;
    let Some(entry) = cams.get(index) else {
        bail!("camera index {index} out of range ({} cameras in {})", cams.len(), cam_file.display());
    };
    let settings = render_settings_for(&ck.config, &ck.state, background);
    let r = render(&ck.cloud, &ck.env, &entry.camera, &settings)?;
    png::write_rgb(out, r.image())?;
    println!("rendered camera {index} ({}) to {}", entry.file_path, out.display());
    if let Some(dir) = dump {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let g = &r.gbuffer;
        let (w, h) = (g.width, g.height);
        save_map(dir, "base_color", w, h, g.color.clone())?;
        let normals = g
            .normal
            .iter()
            .map(|n| {
                let l = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                if l > 1e-6 {
                    n.map(|c| 0.5 + 0.5 * c / l)
                } else {
                    [0.0; 3]
                }
            })
            .collect();
        save_map(dir, "normal", w, h, normals)?;
        save_map(dir, "reflection_strength", w, h, g.refl.iter().map(|&r| [r; 3]).collect())?;
        save_map(dir, "final", w, h, r.image().data.clone())?;
        println!("G-buffer maps written to {}", dir.display());
    }
    Ok(())
}

fn eval_cmd(ckpt: &Path, data: &Path, normals: bool) -> anyhow::Result<()> {
    let ck = checkpoint::load(&model_path(ckpt))?;
    let ds = transforms::load_dataset(data)?;
    let settings = render_settings_for(&ck.config, &ck.state, ds.background);
    println!("{:<16} {:>9} {:>8} {:>9}", "view", "PSNR", "SSIM", "MAE°");
    for view in ds.test() {
        let r = render(&ck.cloud, &ck.env, &view.camera, &settings)?;
        let mae = match (normals, &view.normals, &view.mask) {
            (true, Some(n), Some(m)) => mae_degrees(&r.gbuffer.normal, n, m)?,
            _ => None,
        };
        println!(
            "{:<16} {:>9.3} {:>8.4} {:>9}",
            view.file_path,
            psnr(r.image(), &view.image)?,
            ssim(r.image(), &view.image)?,
            mae.map_or("-".into(), |m| format!("{m:.3}"))
        );
    }
    let rep = evaluate(&ck.cloud, &ck.env, &ds, Split::Test, &settings, ck.config.reflective_threshold)?;
    let mae = if normals { rep.metrics.mae_deg } else { None };
    println!(
        "{:<16} {:>9.3} {:>8.4} {:>9}",
        "mean",
        rep.metrics.psnr,
        rep.metrics.ssim,
        mae.map_or("-".into(), |m| format!("{m:.3}"))
    );
    println!("mean reflection strength {:.5}", rep.mean_reflection);
    println!("reflective Gaussians {} of {}", rep.n_reflective, rep.n_gaussians);
    if let Some(spec) = scenegen::load_scene_spec(data)? {
        if spec.kind == SceneKind::Mirror {
            let scene = spec.build()?;
            let cams: Vec<_> = ds.test().into_iter().map(|v| &v.camera).collect();
            let dirs = scene.reflection_directions(&cams);
            println!("env map PSNR over test reflections {:.3} dB", env_psnr(&ck.env, &scene.env, &dirs)?);
        }
    }
    Ok(())
}

fn gradcheck_cmd(cfg: GradcheckConfig) -> anyhow::Result<bool> {
    let rep = gradcheck::run(&cfg)?;
    println!("{rep}");
    println!("{}", if rep.passed() { "PASS" } else { "FAIL" });
    Ok(rep.passed())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.cmd {
        Cmd::MakeScene { kind, out, seed, views, res, env } => {
            let spec = SceneSpec {
                kind,
                env,
                seed,
                resolution: res,
                n_train: views,
                n_test: (views / 5).max(1),
                ..Default::default()
            };
            make_scene(spec, &out)?;
        }
        Cmd::Train { data, out, config, deferred, seed, threads } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(d) = deferred {
                cfg.deferred_mode = matches!(d, OnOff::On);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            train(&data, &out, cfg, threads)?;
        }
        Cmd::Render { ckpt, camera_index, out, dump_gbuffer, cameras } => {
            render_cmd(&ckpt, camera_index, &out, dump_gbuffer.as_deref(), cameras.as_deref())?;
        }
        Cmd::Eval { ckpt, data, normals } => eval_cmd(&ckpt, &data, normals)?,
        Cmd::Gradcheck { seed, gaussians, res, forward } => {
            let cfg = GradcheckConfig {
                seed,
                gaussians,
                res,
                mode: if forward {
                    deferred_splat::render::ShadingMode::Forward
                } else {
                    deferred_splat::render::ShadingMode::Deferred
                },
                ..Default::default()
            };
            return gradcheck_cmd(cfg);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors exit with status 2 inside clap.
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
