//! Bilinear environment lookups: mirror reflection of a few view/normal pairs
//! and continuity across the azimuth seam.

use deferred_splat::envmap::direction_from_uv;
use deferred_splat::scenegen::{gen_envmap, EnvKind};
use deferred_splat::shade::reflect_dir;

fn main() -> anyhow::Result<()> {
    let env = gen_envmap(EnvKind::Sinusoid, 16, 32, 7)?;
    let v = [0.0, -1.0, 0.0];
    for n in [[0.0, -1.0, 0.0], [0.0, -1.0, 1.0], [1.0, -1.0, 0.5]] {
        let d = reflect_dir(n, v).expect("non-degenerate normal");
        let c = env.query(d);
        println!("n {n:?} -> dir [{:+.3} {:+.3} {:+.3}] -> rgb [{:.4} {:.4} {:.4}]", d[0], d[1], d[2], c[0], c[1], c[2]);
    }
    println!("degenerate normal: {:?}", reflect_dir([0.0; 3], v));
    for eps in [1e-3, 1e-6, 1e-9] {
        let a = env.query(direction_from_uv(1.0 - eps, 0.4));
        let b = env.query(direction_from_uv(eps, 0.4));
        let gap = (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max);
        println!("seam gap at eps {eps:e}: {gap:.3e}");
    }
    Ok(())
}
