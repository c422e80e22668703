use deferred_splat::dataset::Dataset;
use deferred_splat::io::checkpoint;
use deferred_splat::render::render;
use deferred_splat::scenegen::{EnvKind, SceneKind, SceneSpec};
use deferred_splat::trainer::{render_settings_for, TrainConfig, Trainer};

fn dataset() -> Dataset {
    let spec = SceneSpec {
        kind: SceneKind::Mirror,
        env: EnvKind::Sinusoid,
        env_height: 8,
        resolution: 20,
        n_train: 8,
        n_test: 2,
        ..Default::default()
    };
    spec.build().unwrap().make_views(spec.n_train, spec.n_test).unwrap()
}

fn config() -> TrainConfig {
    TrainConfig {
        seed: 11,
        total_iters: 90,
        bootstrap_iters: 30,
        propagation_period: 20,
        propagation_offset: 10,
        clamp_period: 40,
        termination_patience_iters: 20,
        densify_from: 10,
        densify_until: 60,
        densify_interval: 10,
        init_points: 200,
        env_height: 8,
        log_interval: 0,
        ..Default::default()
    }
}

fn train_with(threads: usize, ds: &Dataset) -> checkpoint::Checkpoint {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let mut tr = Trainer::new(config(), ds).unwrap();
        tr.run().unwrap();
        tr.checkpoint()
    })
}

fn saved_bytes(ck: &checkpoint::Checkpoint) -> Vec<Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ply");
    checkpoint::save(&path, ck).unwrap();
    let (a, b, c) = checkpoint::checkpoint_paths(&path);
    [a, b, c].iter().map(|p| std::fs::read(p).unwrap()).collect()
}

#[test]
fn single_thread_runs_are_bit_identical_and_multi_thread_runs_agree() {
    let ds = dataset();
    let a = train_with(1, &ds);
    let b = train_with(1, &ds);
    assert_eq!(saved_bytes(&a), saved_bytes(&b));

    let c = train_with(8, &ds);
    let settings = render_settings_for(&a.config, &a.state, ds.background);
    let mut worst: f64 = 0.0;
    for view in &ds.views {
        let ia = render(&a.cloud, &a.env, &view.camera, &settings).unwrap();
        let ic = render(&c.cloud, &c.env, &view.camera, &settings).unwrap();
        worst = worst.max(ia.image().max_abs_diff(ic.image()));
    }
    assert!(worst <= 1e-5, "max per-pixel difference {worst}");
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let ds = dataset();
    let full = train_with(1, &ds);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ply");
    let mut tr = Trainer::new(config(), &ds).unwrap();
    for _ in 0..45 {
        tr.train_step().unwrap();
    }
    checkpoint::save(&path, &tr.checkpoint()).unwrap();
    drop(tr);
    let ck = checkpoint::load(&path).unwrap();
    let mut tr = Trainer::resume(ck.config, &ds, ck.cloud, ck.env, ck.state);
    tr.run().unwrap();
    let resumed = tr.checkpoint();
    assert_eq!(resumed.cloud.gaussians, full.cloud.gaussians);
    assert_eq!(resumed.env, full.env);
    assert_eq!(resumed.state, full.state);
}
