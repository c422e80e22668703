use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dsplat");

const TINY_CONFIG: &str = "\
# small enough for a test run
total_iters = 60
bootstrap_iters = 20
propagation_period = 20
propagation_offset = 10
clamp_period = 40
termination_patience_iters = 20
densify_from = 10
densify_until = 40
densify_interval = 10
init_points = 150
env_height = 8
log_interval = 20
";

fn dsplat(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn dsplat")
}

fn ok(args: &[&str]) -> String {
    let out = dsplat(args);
    assert!(
        out.status.success(),
        "dsplat {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = dsplat(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = dsplat(&["make-scene", "--kind", "glass", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dsplat(&["eval", "--ckpt", s(&dir.path().join("missing.ply")), "--data", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ply"));
}

#[test]
fn gradcheck_subcommand_passes() {
    let stdout = ok(&["gradcheck", "--gaussians", "4", "--res", "16"]);
    assert!(stdout.trim_end().ends_with("PASS"), "{stdout}");
}

#[test]
fn make_scene_train_eval_render() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();

    ok(&["make-scene", "--kind", "mirror", "--out", s(&data), "--views", "5", "--res", "16"]);
    assert!(data.join("transforms.json").exists());

    let log = ok(&["train", "--data", s(&data), "--out", s(&run), "--config", s(&cfg), "--threads", "1"]);
    assert!(log.contains("iter 20"), "{log}");
    assert!(run.join("model.ply").exists());

    let first = ok(&["eval", "--ckpt", s(&run), "--data", s(&data), "--normals"]);
    let second = ok(&["eval", "--ckpt", s(&run), "--data", s(&data), "--normals"]);
    assert_eq!(first, second);
    assert!(first.contains("mean") && first.contains("env map PSNR"), "{first}");

    let img = dir.path().join("view.png");
    let dump = dir.path().join("gbuf");
    ok(&["render", "--ckpt", s(&run), "--camera-index", "0", "--out", s(&img), "--dump-gbuffer", s(&dump)]);
    assert!(img.exists());
    for name in ["base_color", "normal", "reflection_strength", "final"] {
        assert!(dump.join(format!("{name}.png")).exists(), "{name}.png");
        assert!(dump.join(format!("{name}.pfm")).exists(), "{name}.pfm");
    }
    let out = dsplat(&["render", "--ckpt", s(&run), "--camera-index", "99", "--out", s(&img)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_with_same_seed_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    ok(&["make-scene", "--kind", "diffuse", "--out", s(&data), "--views", "5", "--res", "16"]);
    let mut plys = Vec::new();
    for k in 0..2 {
        let run = dir.path().join(format!("run{k}"));
        ok(&["train", "--data", s(&data), "--out", s(&run), "--config", s(&cfg), "--threads", "1", "--seed", "3"]);
        plys.push(std::fs::read(run.join("model.ply")).unwrap());
    }
    assert_eq!(plys[0], plys[1]);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "cfg") {
            deferred_splat::trainer::TrainConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
