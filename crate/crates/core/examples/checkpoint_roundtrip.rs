//! Trains briefly on a tiny scene, saves a checkpoint, reloads it and checks
//! that continuing from memory and from disk gives identical results.

use deferred_splat::io::checkpoint;
use deferred_splat::scenegen::SceneSpec;
use deferred_splat::trainer::{TrainConfig, Trainer};

fn main() -> anyhow::Result<()> {
    let spec = SceneSpec {
        resolution: 24,
        n_train: 8,
        n_test: 2,
        ..Default::default()
    };
    let ds = spec.build()?.make_views(spec.n_train, spec.n_test)?;
    let cfg = TrainConfig::parse(
        "total_iters = 60\nbootstrap_iters = 30\npropagation_period = 10\npropagation_offset = 5\nclamp_period = 20\n\
         densify_from = 10\ndensify_until = 40\ndensify_interval = 10\ninit_points = 300\nlog_interval = 0\n",
    )?;
    let mut a = Trainer::new(cfg, &ds)?;
    for _ in 0..35 {
        a.train_step()?;
    }
    let dir = tempfile_dir()?;
    let path = dir.join("model.ply");
    checkpoint::save(&path, &a.checkpoint())?;
    let ck = checkpoint::load(&path)?;
    let mut b = Trainer::resume(ck.config, &ds, ck.cloud, ck.env, ck.state);
    a.run()?;
    b.run()?;
    let same = a.cloud == b.cloud && a.env == b.env;
    println!("checkpoint at {}; resumed run identical: {same}", path.display());
    std::fs::remove_dir_all(&dir)?;
    anyhow::ensure!(same, "resumed run diverged");
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let d = std::env::temp_dir().join(format!("dsplat-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&d)?;
    Ok(d)
}
