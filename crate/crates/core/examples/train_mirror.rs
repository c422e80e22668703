//! Trains on the generated mirror sphere and reports held-out metrics.
//!
//! cargo run --release --example train_mirror -- [iters] [key=value ...] [dump=DIR]
//!
//! `dump=DIR` writes 4x upscaled G-buffer maps of the first test view.

use std::time::Instant;

use deferred_splat::dataset::Split;
use deferred_splat::eval::{env_psnr, evaluate};
use deferred_splat::scenegen::SceneSpec;
use deferred_splat::trainer::{TrainConfig, Trainer};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(30_000);
    let mut cfg = TrainConfig::default();
    cfg.total_iters = iters;
    let mut dump_dir = None;
    for kv in args {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow::anyhow!("expected key=value, got {kv}"))?;
        if k == "dump" {
            dump_dir = Some(std::path::PathBuf::from(v));
        } else {
            cfg.set(k, v)?;
        }
    }
    cfg.validate()?;
    let spec = SceneSpec::default();
    let scene = spec.build()?;
    let ds = scene.make_views(spec.n_train, spec.n_test)?;
    let cams = spec.test_cameras()?;
    let dirs = scene.reflection_directions(&cams.iter().collect::<Vec<_>>());
    let t0 = Instant::now();
    let mut trainer = Trainer::new(cfg.clone(), &ds)?;
    while !trainer.is_done() {
        let (stats, ev) = trainer.train_step()?;
        if (cfg.log_interval > 0 && stats.iteration % cfg.log_interval == 0) || ev.terminated {
            let settings = trainer.render_settings();
            let rep = evaluate(&trainer.cloud, &trainer.env, &ds, Split::Test, &settings, cfg.reflective_threshold)?;
            println!("{stats}  [{:.0}s]", t0.elapsed().as_secs_f64());
            println!("    test: {rep}; env {:.2} dB", env_psnr(&trainer.env, &scene.env, &dirs)?);
        }
    }
    let settings = trainer.render_settings();
    let rep = evaluate(&trainer.cloud, &trainer.env, &ds, Split::Test, &settings, cfg.reflective_threshold)?;
    println!("test: {rep}");
    println!("env psnr over test reflections: {:.3} dB", env_psnr(&trainer.env, &scene.env, &dirs)?);
    if let Some(dir) = dump_dir {
        dump(&dir, &trainer, &ds)?;
    }
    println!("terminated at {:?}, elapsed {:.1}s", trainer.state.terminated_at, t0.elapsed().as_secs_f64());
    Ok(())
}

/// Writes upscaled G-buffer maps of the first test view next to the reference.
fn dump(dir: &std::path::Path, t: &Trainer, ds: &deferred_splat::dataset::Dataset) -> anyhow::Result<()> {
    use deferred_splat::image::ImageRGB;
    use deferred_splat::io::png::write_rgb;
    std::fs::create_dir_all(dir)?;
    let v = ds.test()[0];
    let out = t.render_view(v)?;
    let g = &out.gbuffer;
    let k = 4;
    let up = |data: &[[f64; 3]]| ImageRGB::from_fn(g.width * k, g.height * k, |x, y| data[(y / k) * g.width + x / k]);
    let unit = |n: &[f64; 3]| {
        let l = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if l > 1e-9 { n.map(|c| 0.5 + 0.5 * c / l) } else { [0.0; 3] }
    };
    let gt_n: Vec<[f64; 3]> = v.normals.as_ref().unwrap().iter().map(unit).collect();
    let n: Vec<[f64; 3]> = g.normal.iter().map(unit).collect();
    let panels = [
        ("target", v.image.data.clone()),
        ("final", out.image().data.clone()),
        ("base", g.color.clone()),
        ("refl", g.refl.iter().map(|&r| [r; 3]).collect()),
        ("alpha", g.alpha.iter().map(|&r| [r; 3]).collect()),
        ("normal", n),
        ("normal_gt", gt_n),
    ];
    for (name, data) in panels {
        write_rgb(&dir.join(format!("{name}.png")), &up(&data))?;
    }
    Ok(())
}
