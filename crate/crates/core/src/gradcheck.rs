//! Central finite-difference check of the full analytic backward pass
//! (splatting, deferred or forward shading, combined loss).

use std::hash::Hasher;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::envmap::EnvironmentMap;
use crate::error::Result;
use crate::gaussian::{param, Gaussian, GaussianCloud, ParamClass};
use crate::image::ImageRGB;
use crate::loss::{combined_loss, DEFAULT_LAMBDA};
use crate::render::{render, render_backward, RenderSettings, ShadingMode};
use crate::sh::{dc_from_color, NUM_COEFFS};

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub gaussians: usize,
    pub res: usize,
    pub env_height: usize,
    pub sh_degree: usize,
    pub mode: ShadingMode,
    pub h: f64,
    /// Smallest step tried when the perturbed forward pass takes a different branch.
    pub h_min: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub lambda: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gaussians: 8,
            res: 24,
            env_height: 16,
            sh_degree: 3,
            mode: ShadingMode::Deferred,
            h: 1e-3,
            h_min: 1e-7,
            rel_tol: 1e-3,
            abs_tol: 1e-6,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

/// Random scene for the check: all Gaussians in front of the camera, unit
/// quaternions, colors away from the SH clamp, opacities away from the alpha cap.
#[derive(Debug, Clone)]
pub struct GradcheckScene {
    pub cloud: GaussianCloud,
    pub env: EnvironmentMap,
    pub camera: Camera,
    pub target: ImageRGB,
    pub background: [f64; 3],
}

pub fn random_scene(cfg: &GradcheckConfig) -> Result<GradcheckScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let camera = Camera::look_at(cfg.res, cfg.res, 0.7, [0.3, -0.4, -4.0], [0.0; 3], [0.0, -1.0, 0.0])?;
    let gaussians = (0..cfg.gaussians)
        .map(|_| {
            let mut g = Gaussian {
                position: std::array::from_fn(|_| rng.gen_range(-0.6..0.6)),
                rotation: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
                log_scale: std::array::from_fn(|_| rng.gen_range(-2.2..-1.0)),
                reflection_strength: rng.gen_range(0.2..0.8),
                ..Default::default()
            };
            g.normalize_rotation();
            g.set_opacity(rng.gen_range(0.3..0.8));
            for c in 0..3 {
                g.sh[0][c] = dc_from_color(rng.gen_range(0.3..0.7));
                for k in 1..NUM_COEFFS {
                    g.sh[k][c] = rng.gen_range(-0.05..0.05);
                }
            }
            g
        })
        .collect();
    let eh = cfg.env_height;
    let env = EnvironmentMap::new(
        eh,
        2 * eh,
        (0..2 * eh * eh)
            .map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0)))
            .collect(),
    )?;
    let target = ImageRGB::from_fn(cfg.res, cfg.res, |_, _| std::array::from_fn(|_| rng.gen_range(0.0..1.0)));
    Ok(GradcheckScene {
        cloud: GaussianCloud::new(gaussians),
        env,
        camera,
        target,
        background: [0.1; 3],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub name: &'static str,
    pub checked: usize,
    pub failures: usize,
    /// Entries whose step had to shrink below `h` to stay on one branch.
    pub reduced_step: usize,
    /// Entries compared against a Richardson-refined difference.
    pub refined: usize,
    /// Entries sitting on a branch boundary at every step size (not compared).
    pub skipped: usize,
    /// Largest relative error among entries with absolute error above `abs_tol`.
    pub worst_rel: f64,
    pub worst_abs: f64,
}

impl ClassReport {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checked: 0,
            failures: 0,
            reduced_step: 0,
            refined: 0,
            skipped: 0,
            worst_rel: 0.0,
            worst_abs: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// One compared derivative. `step` is `None` when every step hit a branch change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub class: &'static str,
    /// Gaussian index, or texel index for the environment map.
    pub owner: usize,
    /// Parameter offset within the Gaussian, or channel for texels.
    pub slot: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub step: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub classes: Vec<ClassReport>,
    pub entries: Vec<Entry>,
    pub loss: f64,
    pub elapsed: Duration,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.classes.iter().all(ClassReport::passed)
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:<20} {:>7} {:>6} {:>8} {:>8} {:>7} {:>10} {:>10}",
            "class", "checked", "fail", "reduced", "refined", "skipped", "worst_rel", "worst_abs"
        )?;
        for c in &self.classes {
            writeln!(
                f,
                "{:<20} {:>7} {:>6} {:>8} {:>8} {:>7} {:>10.3e} {:>10.3e}",
                c.name, c.checked, c.failures, c.reduced_step, c.refined, c.skipped, c.worst_rel, c.worst_abs
            )?;
        }
        write!(f, "loss {:.6}  elapsed {:.2}s", self.loss, self.elapsed.as_secs_f64())
    }
}

struct Evaluator<'a> {
    scene: &'a GradcheckScene,
    settings: RenderSettings,
    lambda: f64,
}

impl Evaluator<'_> {
    /// Loss and a hash of every discrete branch (including the L1 residual signs).
    fn eval(&self, cloud: &GaussianCloud, env: &EnvironmentMap) -> Result<(f64, u64)> {
        let out = render(cloud, env, &self.scene.camera, &self.settings)?;
        let rep = combined_loss(out.image(), &self.scene.target, self.lambda)?;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        h.write_u64(out.signature());
        for (a, b) in out.image().data.iter().zip(&self.scene.target.data) {
            for c in 0..3 {
                h.write_u8((a[c] > b[c]) as u8);
            }
        }
        Ok((rep.total, h.finish()))
    }
}

enum Estimate {
    Value { fd: f64, h: f64, reduced: bool, refined: bool },
    Kink,
}

fn passes(cfg: &GradcheckConfig, analytic: f64, fd: f64) -> bool {
    let abs = (analytic - fd).abs();
    abs <= cfg.abs_tol || abs <= cfg.rel_tol * analytic.abs().max(fd.abs())
}

/// Central difference at `h`, shrunk by 10 while the perturbed forward pass
/// takes a different branch. If the difference disagrees with `analytic`, one
/// Richardson step with `h / 2` removes the leading truncation term.
fn estimate(
    cfg: &GradcheckConfig,
    base_sig: u64,
    analytic: f64,
    mut f: impl FnMut(f64) -> Result<(f64, u64)>,
) -> Result<Estimate> {
    let mut central = |h: f64| -> Result<Option<f64>> {
        let (lp, sp) = f(h)?;
        let (lm, sm) = f(-h)?;
        Ok((sp == base_sig && sm == base_sig).then(|| (lp - lm) / (2.0 * h)))
    };
    let mut h = cfg.h;
    while h >= cfg.h_min * (1.0 - 1e-9) {
        if let Some(fd) = central(h)? {
            let reduced = h < cfg.h;
            if !passes(cfg, analytic, fd) {
                if let Some(half) = central(h / 2.0)? {
                    return Ok(Estimate::Value {
                        fd: (4.0 * half - fd) / 3.0,
                        h,
                        reduced,
                        refined: true,
                    });
                }
            }
            return Ok(Estimate::Value {
                fd,
                h,
                reduced,
                refined: false,
            });
        }
        h /= 10.0;
    }
    Ok(Estimate::Kink)
}

fn record(rep: &mut ClassReport, cfg: &GradcheckConfig, analytic: f64, est: Estimate) -> (f64, Option<f64>) {
    rep.checked += 1;
    match est {
        Estimate::Kink => {
            rep.skipped += 1;
            (f64::NAN, None)
        }
        Estimate::Value { fd, h, reduced, refined } => {
            if reduced {
                rep.reduced_step += 1;
            }
            if refined {
                rep.refined += 1;
            }
            let abs = (analytic - fd).abs();
            let rel = abs / analytic.abs().max(fd.abs()).max(f64::MIN_POSITIVE);
            rep.worst_abs = rep.worst_abs.max(abs);
            if abs > cfg.abs_tol {
                rep.worst_rel = rep.worst_rel.max(rel);
            }
            if !passes(cfg, analytic, fd) {
                rep.failures += 1;
            }
            (fd, Some(h))
        }
    }
}

pub fn run_on(scene: &GradcheckScene, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let start = Instant::now();
    let ev = Evaluator {
        scene,
        settings: RenderSettings {
            sh_degree: cfg.sh_degree,
            background: scene.background,
            mode: cfg.mode,
        },
        lambda: cfg.lambda,
    };
    let out = render(&scene.cloud, &scene.env, &scene.camera, &ev.settings)?;
    let loss = combined_loss(out.image(), &scene.target, cfg.lambda)?;
    let grads = render_backward(&scene.cloud, &scene.env, &scene.camera, &out, &loss.grad)?;
    let (_, base_sig) = ev.eval(&scene.cloud, &scene.env)?;

    let mut classes: Vec<ClassReport> = ParamClass::ALL.iter().map(|c| ClassReport::new(c.name())).collect();
    let mut entries = Vec::new();
    let mut cloud = scene.cloud.clone();
    for i in 0..cloud.len() {
        let base = cloud.gaussians[i].to_params();
        for k in 0..param::COUNT {
            let analytic = grads.gaussians[i][k];
            let est = estimate(cfg, base_sig, analytic, |d| {
                let mut p = base;
                p[k] += d;
                cloud.gaussians[i].set_params(&p);
                let r = ev.eval(&cloud, &scene.env);
                cloud.gaussians[i].set_params(&base);
                r
            })?;
            let class = ParamClass::of_index(k) as usize;
            let (numeric, step) = record(&mut classes[class], cfg, analytic, est);
            entries.push(Entry {
                class: classes[class].name,
                owner: i,
                slot: k,
                analytic,
                numeric,
                step,
            });
        }
    }

    let mut env_rep = ClassReport::new("env");
    let mut env = scene.env.clone();
    for t in 0..env.texels.len() {
        for c in 0..3 {
            let base = env.texels[t][c];
            let analytic = grads.env[t][c];
            let est = estimate(cfg, base_sig, analytic, |d| {
                env.texels[t][c] = base + d;
                let r = ev.eval(&scene.cloud, &env);
                env.texels[t][c] = base;
                r
            })?;
            let (numeric, step) = record(&mut env_rep, cfg, analytic, est);
            entries.push(Entry {
                class: "env",
                owner: t,
                slot: c,
                analytic,
                numeric,
                step,
            });
        }
    }
    classes.push(env_rep);
    Ok(GradcheckReport {
        classes,
        entries,
        loss: loss.total,
        elapsed: start.elapsed(),
    })
}

pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    run_on(&random_scene(cfg)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_scene_passes_in_both_modes() {
        for mode in [ShadingMode::Deferred, ShadingMode::Forward] {
            let cfg = GradcheckConfig {
                gaussians: 3,
                res: 12,
                env_height: 4,
                mode,
                seed: 11,
                ..Default::default()
            };
            let rep = run(&cfg).unwrap();
            assert!(rep.passed(), "{mode:?}\n{rep}");
        }
    }

    #[test]
    fn detects_a_corrupted_gradient() {
        let cfg = GradcheckConfig {
            gaussians: 2,
            res: 12,
            env_height: 4,
            ..Default::default()
        };
        let scene = random_scene(&cfg).unwrap();
        let mut rep = ClassReport::new("x");
        record(&mut rep, &cfg, 1.0, Estimate::Value { fd: 1.01, h: 1e-3, reduced: false, refined: false });
        assert_eq!(rep.failures, 1);
        record(&mut rep, &cfg, 1e-7, Estimate::Value { fd: 5e-7, h: 1e-3, reduced: false, refined: false });
        assert_eq!(rep.failures, 1);
        assert_eq!(scene.cloud.len(), 2);
    }

    #[test]
    fn refinement_removes_truncation_but_not_real_errors() {
        let cfg = GradcheckConfig {
            h: 0.1,
            ..Default::default()
        };
        let f = |d: f64| Ok(((1.0 + d).powi(3), 0u64));
        let mut rep = ClassReport::new("cube");
        // Plain central difference at h = 0.1 gives 3.01.
        let est = estimate(&cfg, 0, 3.0, f).unwrap();
        let (fd, _) = record(&mut rep, &cfg, 3.0, est);
        assert!((fd - 3.0).abs() < 1e-12);
        assert_eq!((rep.refined, rep.failures), (1, 0));
        let est = estimate(&cfg, 0, 3.02, f).unwrap();
        record(&mut rep, &cfg, 3.02, est);
        assert_eq!(rep.failures, 1);
    }
}
