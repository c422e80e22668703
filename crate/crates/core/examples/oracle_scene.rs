//! Generates the reference mirror sphere dataset on disk and reloads it.
//!
//! cargo run --release --example oracle_scene -- [out_dir] [mirror|diffuse]

use std::path::PathBuf;

use deferred_splat::io::transforms::load_dataset;
use deferred_splat::scenegen::{make_dataset, SceneSpec};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "mirror_scene".into()));
    let kind = args.next().as_deref().unwrap_or("mirror").parse()?;
    let spec = SceneSpec { kind, ..Default::default() };
    let ds = make_dataset(&spec, &out)?;
    let back = load_dataset(&out)?;
    let worst = ds
        .views
        .iter()
        .zip(&back.views)
        .map(|(a, b)| (a.camera.rotation - b.camera.rotation).abs().max())
        .fold(0.0, f64::max);
    let hits: usize = ds.views.iter().map(|v| v.mask.as_ref().map_or(0, |m| m.iter().filter(|&&h| h).count())).sum();
    println!(
        "{} views written to {} ({} train / {} test), {} sphere pixels, max camera round-trip error {:e}",
        back.views.len(),
        out.display(),
        back.train().len(),
        back.test().len(),
        hits,
        worst
    );
    Ok(())
}
