//! Shades the same cloud per pixel (deferred) and per Gaussian (forward).
//! Where normals of overlapping Gaussians disagree the two differ; with no
//! reflection they agree.

use deferred_splat::camera::Camera;
use deferred_splat::gaussian::{logit, Gaussian, GaussianCloud};
use deferred_splat::render::{render, RenderSettings, ShadingMode};
use deferred_splat::scenegen::{gen_envmap, EnvKind};

fn main() -> anyhow::Result<()> {
    let tilted = |angle: f64, x: f64, r: f64| Gaussian {
        position: [x, 0.0, 0.0],
        rotation: [(angle / 2.0).cos(), (angle / 2.0).sin(), 0.0, 0.0],
        log_scale: [-0.8, -0.8, -4.0],
        opacity_raw: logit(0.6),
        reflection_strength: r,
        ..Default::default()
    };
    let env = gen_envmap(EnvKind::Sinusoid, 32, 64, 1)?;
    let cam = Camera::look_at(64, 64, 0.8, [0.0, -3.0, 0.5], [0.0; 3], [0.0, 0.0, 1.0])?;
    for r in [0.0, 0.8] {
        let cloud = GaussianCloud::new(vec![tilted(1.2, -0.1, r), tilted(-0.9, 0.1, r)]);
        let shade = |mode| {
            render(&cloud, &env, &cam, &RenderSettings { sh_degree: 0, background: [0.1; 3], mode })
        };
        let d = shade(ShadingMode::Deferred)?;
        let f = shade(ShadingMode::Forward)?;
        println!("reflection {r}: max |deferred - forward| = {:.4e}", d.image().max_abs_diff(f.image()));
    }
    Ok(())
}
