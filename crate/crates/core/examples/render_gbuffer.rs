//! Renders a small hand-built cloud and writes its G-buffer maps as PNGs.
//!
//! cargo run --release --example render_gbuffer -- [out_dir]

use std::path::PathBuf;

use deferred_splat::camera::Camera;
use deferred_splat::gaussian::{logit, Gaussian, GaussianCloud};
use deferred_splat::image::ImageRGB;
use deferred_splat::io::png;
use deferred_splat::render::{render, RenderSettings, ShadingMode};
use deferred_splat::scenegen::{gen_envmap, EnvKind};
use deferred_splat::sh::SH_C0;

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "gbuffer_out".into()));
    std::fs::create_dir_all(&out)?;
    // A flat reflective disc above a rough diffuse one.
    let disc = |z: f64, color: [f64; 3], r: f64| Gaussian {
        position: [0.0, 0.0, z],
        log_scale: [-0.4, -0.4, -4.0],
        opacity_raw: logit(0.95),
        sh: {
            let mut sh = [[0.0; 3]; 16];
            sh[0] = color.map(|c| (c - 0.5) / SH_C0);
            sh
        },
        reflection_strength: r,
        ..Default::default()
    };
    let cloud = GaussianCloud::new(vec![disc(0.3, [0.2, 0.2, 0.25], 0.9), disc(-0.3, [0.8, 0.4, 0.2], 0.0)]);
    let env = gen_envmap(EnvKind::HdrBlobs, 32, 64, 3)?;
    let cam = Camera::look_at(96, 96, 0.9, [2.2, -1.2, 2.0], [0.0; 3], [0.0, 0.0, 1.0])?;
    let settings = RenderSettings {
        sh_degree: 0,
        background: [0.1; 3],
        mode: ShadingMode::Deferred,
    };
    let r = render(&cloud, &env, &cam, &settings)?;
    let g = &r.gbuffer;
    let save = |name: &str, data: Vec<[f64; 3]>| -> anyhow::Result<()> {
        let img = ImageRGB { width: g.width, height: g.height, data };
        png::write_rgb(&out.join(name), &img)?;
        Ok(())
    };
    save("base_color.png", g.color.clone())?;
    save(
        "normal.png",
        g.normal
            .iter()
            .map(|n| {
                let l = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt().max(1e-12);
                n.map(|c| 0.5 + 0.5 * c / l)
            })
            .collect(),
    )?;
    save("reflection_strength.png", g.refl.iter().map(|&v| [v; 3]).collect())?;
    save("alpha.png", g.alpha.iter().map(|&v| [v; 3]).collect())?;
    save("final.png", r.image().data.clone())?;
    let covered = g.alpha.iter().filter(|&&a| a > 0.5).count();
    println!("{} of {} pixels covered; maps in {}", covered, g.alpha.len(), out.display());
    Ok(())
}
