//! Finite-difference check of the full pipeline on a random 8-Gaussian scene.
//!
//! cargo run --release --example gradcheck -- [seed] [forward]

use deferred_splat::gradcheck::{run, GradcheckConfig};
use deferred_splat::render::ShadingMode;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let mode = match args.next().as_deref() {
        Some("forward") => ShadingMode::Forward,
        _ => ShadingMode::Deferred,
    };
    let mut cfg = GradcheckConfig {
        seed,
        mode,
        ..Default::default()
    };
    if let Some(h) = std::env::var("GRADCHECK_H").ok().and_then(|s| s.parse().ok()) {
        cfg.h = h;
    }
    let rep = run(&cfg)?;
    println!("{rep}");
    if std::env::var_os("GRADCHECK_VERBOSE").is_some() {
        for e in rep.entries.iter().filter(|e| e.class != "env") {
            println!(
                "{:<10} g{:<2} k{:<2} analytic {:+.6e} numeric {:+.6e} h {:?}",
                e.class, e.owner, e.slot, e.analytic, e.numeric, e.step
            );
        }
    }
    println!("{}", if rep.passed() { "PASS" } else { "FAIL" });
    Ok(())
}
