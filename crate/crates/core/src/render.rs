//! End-to-end differentiable image formation: splatting followed by either
//! the deferred per-pixel reflection pass or the per-Gaussian (forward)
//! shading variant.

use std::hash::Hasher;

use crate::camera::Camera;
use crate::envmap::{EnvironmentMap, Lookup};
use crate::error::Result;
use crate::gaussian::{param, GaussianCloud, ParamVec};
use crate::image::ImageRGB;
use crate::raster::{self, GBuffer, ItemGrad, SplatTape};
use crate::shade::{self, ShadedImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShadingMode {
    /// Reflection looked up per pixel from the blended G-buffer.
    Deferred,
    /// Reflection looked up per Gaussian, then splatted as color.
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub sh_degree: usize,
    pub background: [f64; 3],
    pub mode: ShadingMode,
}

#[derive(Debug, Clone)]
struct ForwardShade {
    base: [f64; 3],
    refl: f64,
    normal: [f64; 3],
    view: [f64; 3],
    view_len: f64,
    lookup: Option<Lookup>,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub gbuffer: GBuffer,
    pub shaded: ShadedImage,
    pub tape: SplatTape,
    forward: Option<Vec<ForwardShade>>,
}

impl RenderOutput {
    pub fn image(&self) -> &ImageRGB {
        &self.shaded.image
    }

    /// Hash of every discrete branch taken while rendering.
    pub fn signature(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.tape.signature(&mut h);
        self.shaded.signature(&mut h);
        if let Some(fw) = &self.forward {
            for f in fw {
                match &f.lookup {
                    None => h.write_u8(0),
                    Some(l) => {
                        h.write_i64(l.cell.0);
                        h.write_i64(l.cell.1);
                    }
                }
            }
        }
        h.finish()
    }
}

pub fn render(
    cloud: &GaussianCloud,
    env: &EnvironmentMap,
    cam: &Camera,
    settings: &RenderSettings,
) -> Result<RenderOutput> {
    let mut prepared = raster::prepare(cloud, cam, settings.sh_degree);
    let forward = match settings.mode {
        ShadingMode::Deferred => None,
        ShadingMode::Forward => {
            let mut cache = Vec::with_capacity(prepared.items.len());
            for (it, c) in prepared.items.iter_mut().zip(&prepared.caches) {
                let view = c.view.map(|v| -v / c.view_len);
                let lookup = shade::reflect_dir(it.normal, view).map(|d| env.lookup(d));
                let e = lookup.map_or([0.0; 3], |l| l.value);
                let base = it.color;
                let r = it.refl;
                it.color = std::array::from_fn(|k| (1.0 - r) * base[k] + r * e[k]);
                cache.push(ForwardShade {
                    base,
                    refl: r,
                    normal: it.normal,
                    view,
                    view_len: c.view_len,
                    lookup,
                });
                it.refl = 0.0;
            }
            Some(cache)
        }
    };
    let (gbuffer, tape) = raster::rasterize(prepared, cam.width, cam.height);
    let shaded = shade::shade_forward(&gbuffer, env, cam, settings.background)?;
    Ok(RenderOutput {
        gbuffer,
        shaded,
        tape,
        forward,
    })
}

#[derive(Debug, Clone)]
pub struct SceneGrad {
    pub gaussians: Vec<ParamVec>,
    pub env: Vec<[f64; 3]>,
    /// Screen-space mean gradient norm per Gaussian (`None` when not visible).
    pub mean2d_norm: Vec<Option<f64>>,
}

pub fn render_backward(
    cloud: &GaussianCloud,
    env: &EnvironmentMap,
    cam: &Camera,
    out: &RenderOutput,
    d_image: &ImageRGB,
) -> Result<SceneGrad> {
    let sg = shade::shade_backward(&out.gbuffer, env, cam, &out.shaded, d_image)?;
    let mut item_grads = raster::rasterize_backward(&out.tape, &sg.gbuffer)?;
    let mut env_grad = sg.env;
    let mut extra_pos: Vec<[f64; 3]> = Vec::new();
    if let Some(fw) = &out.forward {
        extra_pos = vec![[0.0; 3]; item_grads.len()];
        for ((ig, f), xp) in item_grads.iter_mut().zip(fw).zip(extra_pos.iter_mut()) {
            chain_forward_shading(ig, f, &mut env_grad, xp);
        }
    }
    let mut gaussians = raster::items_to_params(cloud, cam, &out.tape, &item_grads)?;
    for (it, xp) in out.tape.prepared.items.iter().zip(&extra_pos) {
        for a in 0..3 {
            gaussians[it.index][param::POSITION + a] += xp[a];
        }
    }
    let mean2d_norm = raster::mean2d_grad_norms(&out.tape, &item_grads, cloud.len());
    Ok(SceneGrad {
        gaussians,
        env: env_grad,
        mean2d_norm,
    })
}

/// Per-Gaussian shading `c' = (1 - r) c + r E(reflect(n, v))`, backward.
fn chain_forward_shading(
    ig: &mut ItemGrad,
    f: &ForwardShade,
    env_grad: &mut [[f64; 3]],
    d_position: &mut [f64; 3],
) {
    let d_shaded = ig.color;
    let e = f.lookup.map_or([0.0; 3], |l| l.value);
    ig.color = d_shaded.map(|v| (1.0 - f.refl) * v);
    // The splatted reflection channel is identically zero in this mode.
    ig.refl = (0..3).map(|k| d_shaded[k] * (e[k] - f.base[k])).sum();
    let Some(l) = &f.lookup else { return };
    let d_e = d_shaded.map(|v| f.refl * v);
    if d_e.iter().all(|v| *v == 0.0) {
        return;
    }
    for k in 0..4 {
        for c in 0..3 {
            env_grad[l.texels[k]][c] += d_e[c] * l.weights[k];
        }
    }
    let mut d_dir = [0.0; 3];
    for c in 0..3 {
        for a in 0..3 {
            d_dir[a] += d_e[c] * l.d_dir[c][a];
        }
    }
    let d_n = shade::reflect_dir_vjp(f.normal, f.view, d_dir);
    for a in 0..3 {
        ig.normal[a] += d_n[a];
    }
    // v = (cam - p) / |cam - p|.
    let d_v = shade::reflect_dir_vjp_view(f.normal, d_dir);
    let v = f.view;
    let dot: f64 = (0..3).map(|a| d_v[a] * v[a]).sum();
    for a in 0..3 {
        d_position[a] -= (d_v[a] - v[a] * dot) / f.view_len;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;
    use crate::sh::dc_from_color;

    fn two_gaussian_scene() -> (GaussianCloud, EnvironmentMap, Camera) {
        let cam = Camera::look_at(9, 9, 0.5, [0.0, 0.0, -4.0], [0.0; 3], [0.0, -1.0, 0.0]).unwrap();
        let mut a = Gaussian {
            position: [0.0, 0.0, -0.2],
            log_scale: [-1.0, -1.0, -4.0],
            reflection_strength: 0.8,
            ..Default::default()
        };
        a.set_opacity(0.6);
        a.sh[0] = [dc_from_color(0.2); 3];
        // Tilted: shortest axis along x.
        let mut b = Gaussian {
            position: [0.0, 0.0, 0.2],
            log_scale: [-4.0, -1.0, -1.0],
            reflection_strength: 0.8,
            ..Default::default()
        };
        b.set_opacity(0.6);
        b.sh[0] = [dc_from_color(0.2); 3];
        let env = EnvironmentMap::new(
            8,
            16,
            (0..128).map(|i| [(i % 16) as f64 / 16.0, (i / 16) as f64 / 8.0, 0.5]).collect(),
        )
        .unwrap();
        (GaussianCloud::new(vec![a, b]), env, cam)
    }

    #[test]
    fn deferred_and_forward_differ_when_normals_blend() {
        let (cloud, env, cam) = two_gaussian_scene();
        let mut s = RenderSettings {
            sh_degree: 0,
            background: [0.0; 3],
            mode: ShadingMode::Deferred,
        };
        let d = render(&cloud, &env, &cam, &s).unwrap();
        s.mode = ShadingMode::Forward;
        let f = render(&cloud, &env, &cam, &s).unwrap();
        assert!(d.image().max_abs_diff(f.image()) > 1e-3);
    }

    #[test]
    fn modes_agree_for_single_gaussian_pixel_with_zero_reflection() {
        let (mut cloud, env, cam) = two_gaussian_scene();
        for g in &mut cloud.gaussians {
            g.reflection_strength = 0.0;
        }
        let mut s = RenderSettings {
            sh_degree: 0,
            background: [0.1; 3],
            mode: ShadingMode::Deferred,
        };
        let d = render(&cloud, &env, &cam, &s).unwrap();
        s.mode = ShadingMode::Forward;
        let f = render(&cloud, &env, &cam, &s).unwrap();
        assert!(d.image().max_abs_diff(f.image()) < 1e-14);
    }
}
