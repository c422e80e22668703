//! Invariant checks shared by the property tests and the acceptance runner.
#![allow(dead_code)]

use deferred_splat::camera::Camera;
use deferred_splat::envmap::{direction_from_uv, EnvironmentMap};
use deferred_splat::gaussian::{param, Gaussian, GaussianCloud};
use deferred_splat::image::ImageRGB;
use deferred_splat::io::checkpoint;
use deferred_splat::loss::{combined_loss, ssim};
use deferred_splat::raster::{prepare, rasterize, SplatItem, ALPHA_MAX, ALPHA_MIN, TRANSMITTANCE_MIN};
use deferred_splat::scenegen::{gen_envmap, EnvKind, OracleScene};
use deferred_splat::shade::reflect_dir;
use deferred_splat::trainer::{TrainConfig, TrainState};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(), TestCaseError>;

pub fn random_cloud(seed: u64, n: usize) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gs = (0..n)
        .map(|_| {
            let mut g = Gaussian {
                position: std::array::from_fn(|_| rng.gen_range(-0.8..0.8)),
                rotation: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
                log_scale: std::array::from_fn(|_| rng.gen_range(-2.5..-0.8)),
                opacity_raw: rng.gen_range(-2.0..4.0),
                reflection_strength: rng.gen_range(0.0..1.0),
                ..Default::default()
            };
            g.normalize_rotation();
            for k in 0..4 {
                g.sh[k] = std::array::from_fn(|_| rng.gen_range(-0.6..0.6));
            }
            g
        })
        .collect();
    GaussianCloud::new(gs)
}

pub fn random_camera(seed: u64, w: usize, h: usize) -> Camera {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xca);
    let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let el: f64 = rng.gen_range(-0.6..0.6);
    let eye = [3.5 * el.cos() * az.cos(), 3.5 * el.cos() * az.sin(), 3.5 * el.sin()];
    Camera::look_at(w, h, 0.8, eye, [0.0; 3], [0.0, 0.0, 1.0]).unwrap()
}

/// Direct front-to-back compositing over every projected item, no tiling or culling.
fn scalar_composite(items: &[SplatItem], x: usize, y: usize) -> ([f64; 3], [f64; 3], f64, f64) {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let (mut col, mut nrm, mut r, mut t) = ([0.0; 3], [0.0; 3], 0.0, 1.0);
    for it in items {
        let dx = px - it.mean[0];
        let dy = py - it.mean[1];
        let [a, b, c] = it.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        let raw = it.opacity * power.exp();
        if raw < ALPHA_MIN {
            continue;
        }
        let alpha = raw.min(ALPHA_MAX);
        let w = alpha * t;
        for k in 0..3 {
            col[k] += it.color[k] * w;
            nrm[k] += it.normal[k] * w;
        }
        r += it.refl * w;
        t *= 1.0 - alpha;
        if t < TRANSMITTANCE_MIN {
            break;
        }
    }
    (col, nrm, r, 1.0 - t)
}

pub fn blend_matches_scalar_oracle(seed: u64, n: usize) -> Check {
    let (w, h) = (40, 32);
    let cloud = random_cloud(seed, n);
    let cam = random_camera(seed, w, h);
    let prepared = prepare(&cloud, &cam, 3);
    let items = prepared.items.clone();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (gb, _) = pool.install(|| rasterize(prepared, w, h));
    prop_assert!(gb.alpha.iter().any(|&a| a > 0.0));
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (col, nrm, r, a) = scalar_composite(&items, x, y);
            prop_assert_eq!(gb.color[p], col);
            prop_assert_eq!(gb.normal[p], nrm);
            prop_assert_eq!(gb.refl[p], r);
            prop_assert_eq!(gb.alpha[p], a);
        }
    }
    Ok(())
}

pub fn weights_partition_alpha(seed: u64, n: usize) -> Check {
    let cloud = random_cloud(seed, n);
    let cam = random_camera(seed, 32, 32);
    let (gb, tape) = rasterize(prepare(&cloud, &cam, 0), 32, 32);
    for y in 0..32 {
        for x in 0..32 {
            let w: f64 = tape.contributors(x, y).iter().map(|(_, a, t)| a * t).sum();
            prop_assert!((w - gb.alpha[y * 32 + x]).abs() <= 1e-12);
            prop_assert!(gb.alpha[y * 32 + x] <= 1.0);
        }
    }
    Ok(())
}

pub fn oracle_obeys_mirror_law(k: usize, seed: u64) -> Check {
    let env = gen_envmap(EnvKind::Sinusoid, 8, 16, seed).unwrap();
    let mut scene = OracleScene::mirror(env);
    scene.ring.resolution = 24;
    let cam = scene.ring_camera(k, 60).unwrap();
    let r = scene.render_oracle(&cam);
    let dirs = scene.reflection_directions(&[&cam]);
    let mut hit = 0;
    for y in 0..24 {
        for x in 0..24 {
            let i = y * 24 + x;
            if !r.mask[i] {
                continue;
            }
            let n = r.normals[i];
            let v = cam.pixel_ray(x, y).map(|c| -c);
            let vn = v[0] * n[0] + v[1] * n[1] + v[2] * n[2];
            let expect: [f64; 3] = std::array::from_fn(|a| 2.0 * vn * n[a] - v[a]);
            let d = dirs[hit];
            let via_shader = reflect_dir(n, v).unwrap();
            for a in 0..3 {
                prop_assert!((d[a] - expect[a]).abs() <= 1e-9);
                prop_assert!((via_shader[a] - expect[a]).abs() <= 1e-9);
            }
            prop_assert_eq!(r.image.data[i], scene.env.query(d));
            hit += 1;
        }
    }
    prop_assert!(hit > 0);
    prop_assert_eq!(hit, dirs.len());
    Ok(())
}

pub fn seam_is_continuous(v: f64, seed: u64, eps: f64) -> Check {
    let env = gen_envmap(EnvKind::HdrBlobs, 8, 16, seed).unwrap();
    let a = env.query(direction_from_uv(1.0 - eps, v));
    let b = env.query(direction_from_uv(eps, v));
    let max_texel = env.texels.iter().flatten().fold(0.0f64, |m, &c| m.max(c));
    // Bilinear in u with slope at most (max texel) * width.
    let bound = 2.0 * eps * env.width as f64 * max_texel + 1e-12;
    for c in 0..3 {
        prop_assert!((a[c] - b[c]).abs() <= bound, "gap {} bound {}", (a[c] - b[c]).abs(), bound);
    }
    Ok(())
}

pub fn loss_identities(seed: u64, w: usize, h: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = ImageRGB::from_fn(w, h, |_, _| std::array::from_fn(|_| rng.gen_range(0.0..1.0)));
    let l = combined_loss(&img, &img, 0.2).unwrap();
    prop_assert_eq!(l.l1, 0.0);
    prop_assert!(l.total.abs() <= 1e-12);
    prop_assert!((ssim(&img, &img).unwrap() - 1.0).abs() <= 1e-12);
    Ok(())
}

pub fn schedules_disjoint(pp: u64, cp: u64, off: u64) -> Check {
    let cfg = TrainConfig {
        propagation_period: pp,
        clamp_period: cp,
        propagation_offset: off,
        bootstrap_iters: 0,
        total_iters: 3000,
        densify_until: 3000,
        ..Default::default()
    };
    if cfg.validate().is_ok() {
        for it in 1..=3000 {
            prop_assert!(!(cfg.propagation_fires(it) && cfg.clamp_fires(it)), "collision at {}", it);
        }
    }
    Ok(())
}

pub fn checkpoint_roundtrip(seed: u64, n: usize, env_h: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gs = (0..n)
        .map(|_| {
            let mut p = [0.0; param::COUNT];
            p.iter_mut().for_each(|x| *x = rng.gen::<f64>() * 1e3 - 5e2);
            Gaussian::from_params(&p)
        })
        .collect();
    let cloud = GaussianCloud::new(gs);
    let texels = (0..2 * env_h * env_h).map(|_| std::array::from_fn(|_| rng.gen())).collect();
    let env = EnvironmentMap::new(env_h, 2 * env_h, texels).unwrap();
    let mut state = TrainState::new(n, env.texels.len(), seed);
    state.moments.m.iter_mut().for_each(|m| *m = rng.gen());
    state.env_moments.v.iter_mut().for_each(|v| *v = rng.gen());
    state.iteration = rng.gen_range(0..100_000);
    let ck = checkpoint::Checkpoint {
        config: TrainConfig { seed, ..Default::default() },
        cloud,
        env,
        state,
        reflective_history: vec![(1, 2)],
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ply");
    checkpoint::save(&path, &ck).unwrap();
    let back = checkpoint::load(&path).unwrap();
    prop_assert_eq!(back.cloud.len(), n);
    for (a, b) in ck.cloud.gaussians.iter().zip(&back.cloud.gaussians) {
        let (pa, pb) = (a.to_params(), b.to_params());
        prop_assert!(pa.iter().zip(&pb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let bits = |e: &EnvironmentMap| e.texels.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    prop_assert_eq!(bits(&back.env), bits(&ck.env));
    prop_assert_eq!(&back.state, &ck.state);
    prop_assert_eq!(&back.config, &ck.config);
    Ok(())
}

/// Strategies for each check, as used by both harnesses.
pub fn blend_args() -> impl Strategy<Value = (u64, usize)> {
    (any::<u64>(), 1usize..24)
}

pub fn mirror_args() -> impl Strategy<Value = (usize, u64)> {
    (0usize..60, 0u64..4)
}

pub fn seam_args() -> impl Strategy<Value = (f64, u64, f64)> {
    (0.02f64..0.98, any::<u64>(), 1e-9f64..1e-3)
}

pub fn loss_args() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 11usize..30, 11usize..30)
}

pub fn schedule_args() -> impl Strategy<Value = (u64, u64, u64)> {
    (1u64..300, 1u64..300, 0u64..300)
}

pub fn checkpoint_args() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 0usize..120, 1usize..6)
}
