//! Deferred reflection pass: per-pixel mirror lookup into the environment
//! map, composition with the splatted base color, and its backward pass.

use rayon::prelude::*;

use crate::camera::Camera;
use crate::envmap::{EnvironmentMap, Lookup};
use crate::error::{Error, Result};
use crate::image::ImageRGB;
use crate::raster::{GBuffer, GBufferGrad};

/// Blended normals at or below this length are treated as non-reflective.
pub const NORMAL_EPS: f64 = 1e-6;

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Mirror `v` (unit, pointing toward the viewer) about the normalized blend normal.
pub fn reflect_dir(n_blend: [f64; 3], v: [f64; 3]) -> Option<[f64; 3]> {
    let len = norm(n_blend);
    if !(len > NORMAL_EPS) {
        return None;
    }
    let n = n_blend.map(|c| c / len);
    let vn = dot(v, n);
    Some([2.0 * vn * n[0] - v[0], 2.0 * vn * n[1] - v[1], 2.0 * vn * n[2] - v[2]])
}

/// Backward of [`reflect_dir`] with respect to the unnormalized normal.
pub fn reflect_dir_vjp(n_blend: [f64; 3], v: [f64; 3], d_out: [f64; 3]) -> [f64; 3] {
    let len = norm(n_blend);
    let n = n_blend.map(|c| c / len);
    let vn = dot(v, n);
    let don = dot(d_out, n);
    let d_n: [f64; 3] = std::array::from_fn(|j| 2.0 * v[j] * don + 2.0 * vn * d_out[j]);
    let proj = dot(d_n, n);
    std::array::from_fn(|j| (d_n[j] - n[j] * proj) / len)
}

/// Backward of [`reflect_dir`] with respect to the view vector.
pub fn reflect_dir_vjp_view(n_blend: [f64; 3], d_out: [f64; 3]) -> [f64; 3] {
    let len = norm(n_blend);
    let n = n_blend.map(|c| c / len);
    let don = dot(d_out, n);
    std::array::from_fn(|j| 2.0 * n[j] * don - d_out[j])
}

/// `(1 - R) C + R refl`.
pub fn compose(c: [f64; 3], r: f64, refl: [f64; 3]) -> Result<[f64; 3]> {
    if !(-1e-6..=1.0 + 1e-6).contains(&r) {
        return Err(Error::Contract(format!("reflection strength {r} outside [0, 1]")));
    }
    Ok(compose_unchecked(c, r, refl))
}

#[inline]
fn compose_unchecked(c: [f64; 3], r: f64, refl: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|k| (1.0 - r) * c[k] + r * refl[k])
}

/// Final image plus the per-pixel lookups needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ShadedImage {
    pub image: ImageRGB,
    /// Reflection direction per pixel; `None` where the pixel is non-reflective.
    pub refl_dir: Vec<Option<[f64; 3]>>,
    /// Environment color fetched per pixel (zero where non-reflective).
    pub refl_color: Vec<[f64; 3]>,
    pub(crate) lookups: Vec<Option<Lookup>>,
    pub background: [f64; 3],
}

impl ShadedImage {
    pub fn signature(&self, hasher: &mut impl std::hash::Hasher) {
        for l in &self.lookups {
            match l {
                None => hasher.write_u8(0),
                Some(l) => {
                    hasher.write_u8(1);
                    hasher.write_i64(l.cell.0);
                    hasher.write_i64(l.cell.1);
                }
            }
        }
    }
}

/// Unit direction from the surface toward the camera for pixel `(x, y)`.
#[inline]
pub fn view_vector(cam: &Camera, x: usize, y: usize) -> [f64; 3] {
    cam.pixel_ray(x, y).map(|c| -c)
}

fn shade_pixel(
    gb: &GBuffer,
    env: &EnvironmentMap,
    cam: &Camera,
    background: [f64; 3],
    x: usize,
    y: usize,
) -> ([f64; 3], Option<[f64; 3]>, [f64; 3], Option<Lookup>) {
    let p = y * gb.width + x;
    let v = view_vector(cam, x, y);
    let dir = reflect_dir(gb.normal[p], v);
    let lookup = dir.map(|d| env.lookup(d));
    let refl = lookup.map_or([0.0; 3], |l| l.value);
    let base = compose_unchecked(gb.color[p], gb.refl[p], refl);
    let t = 1.0 - gb.alpha[p];
    let out = std::array::from_fn(|k| base[k] + background[k] * t);
    (out, dir, refl, lookup)
}

pub fn shade_forward(
    gbuffer: &GBuffer,
    env: &EnvironmentMap,
    cam: &Camera,
    background: [f64; 3],
) -> Result<ShadedImage> {
    if gbuffer.width != cam.width || gbuffer.height != cam.height {
        return Err(Error::Dimension("G-buffer and camera sizes differ".into()));
    }
    let (w, h) = (gbuffer.width, gbuffer.height);
    let rows: Vec<Vec<_>> = (0..h)
        .into_par_iter()
        .map(|y| (0..w).map(|x| shade_pixel(gbuffer, env, cam, background, x, y)).collect())
        .collect();
    let mut image = ImageRGB::new(w, h);
    let mut refl_dir = Vec::with_capacity(w * h);
    let mut refl_color = Vec::with_capacity(w * h);
    let mut lookups = Vec::with_capacity(w * h);
    for (i, (out, dir, refl, lookup)) in rows.into_iter().flatten().enumerate() {
        image.data[i] = out;
        refl_dir.push(dir);
        refl_color.push(refl);
        lookups.push(lookup);
    }
    Ok(ShadedImage {
        image,
        refl_dir,
        refl_color,
        lookups,
        background,
    })
}

/// Gradients produced by [`shade_backward`].
#[derive(Debug, Clone)]
pub struct ShadeGrads {
    pub gbuffer: GBufferGrad,
    pub env: Vec<[f64; 3]>,
}

pub fn shade_backward(
    gbuffer: &GBuffer,
    env: &EnvironmentMap,
    cam: &Camera,
    shaded: &ShadedImage,
    upstream: &ImageRGB,
) -> Result<ShadeGrads> {
    let (w, h) = (gbuffer.width, gbuffer.height);
    if upstream.width != w || upstream.height != h || shaded.image.width != w || shaded.image.height != h {
        return Err(Error::Dimension("upstream gradient does not match the shaded image".into()));
    }
    let bg = shaded.background;
    // Per row: G-buffer gradients plus sparse texel contributions; rows are
    // merged in order so texel sums do not depend on scheduling.
    let rows: Vec<(Vec<([f64; 3], [f64; 3], f64, f64)>, Vec<(usize, [f64; 3])>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut px_out = Vec::with_capacity(w);
            let mut texel_out = Vec::new();
            for x in 0..w {
                let p = y * w + x;
                let g = upstream.data[p];
                let r = gbuffer.refl[p];
                let c = gbuffer.color[p];
                let refl = shaded.refl_color[p];
                let d_c = g.map(|v| (1.0 - r) * v);
                let d_r: f64 = (0..3).map(|k| g[k] * (refl[k] - c[k])).sum();
                let d_a = -(0..3).map(|k| g[k] * bg[k]).sum::<f64>();
                let mut d_n = [0.0; 3];
                if let Some(l) = &shaded.lookups[p] {
                    let d_refl = g.map(|v| r * v);
                    if d_refl.iter().any(|v| *v != 0.0) {
                        for k in 0..4 {
                            texel_out.push((l.texels[k], d_refl.map(|v| v * l.weights[k])));
                        }
                        let mut d_dir = [0.0; 3];
                        for ch in 0..3 {
                            for a in 0..3 {
                                d_dir[a] += d_refl[ch] * l.d_dir[ch][a];
                            }
                        }
                        d_n = reflect_dir_vjp(gbuffer.normal[p], view_vector(cam, x, y), d_dir);
                    }
                }
                px_out.push((d_c, d_n, d_r, d_a));
            }
            (px_out, texel_out)
        })
        .collect();
    let mut gb = GBufferGrad::zeros(w, h);
    let mut env_grad = vec![[0.0; 3]; env.texels.len()];
    for (y, (px, tex)) in rows.into_iter().enumerate() {
        for (x, (d_c, d_n, d_r, d_a)) in px.into_iter().enumerate() {
            let p = y * w + x;
            gb.color[p] = d_c;
            gb.normal[p] = d_n;
            gb.refl[p] = d_r;
            gb.alpha[p] = d_a;
        }
        for (i, v) in tex {
            for c in 0..3 {
                env_grad[i][c] += v[c];
            }
        }
    }
    Ok(ShadeGrads {
        gbuffer: gb,
        env: env_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};
    use proptest::prelude::*;

    fn unit() -> impl Strategy<Value = [f64; 3]> {
        prop::array::uniform3(-1.0f64..1.0)
            .prop_filter("nonzero", |v| norm(*v) > 0.1)
            .prop_map(|v| {
                let n = norm(v);
                v.map(|c| c / n)
            })
    }

    #[test]
    fn reflect_examples() {
        let r = reflect_dir([0.0, 0.0, 1.0], [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(r, [0.0, 0.0, 1.0]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let r = reflect_dir([0.0, 0.0, 1.0], [s, 0.0, s]).unwrap();
        assert!((r[0] + s).abs() < 1e-15 && r[1].abs() < 1e-15 && (r[2] - s).abs() < 1e-15);
        assert!(reflect_dir([0.0, 0.0, 1e-7], [0.0, 0.0, 1.0]).is_none());
    }

    #[test]
    fn compose_examples() {
        let c = [0.2, 0.3, 0.4];
        let e = [0.9, 0.8, 0.7];
        assert_eq!(compose(c, 0.0, e).unwrap(), c);
        assert_eq!(compose(c, 1.0, e).unwrap(), e);
        let m = compose([0.2; 3], 0.5, [0.6; 3]).unwrap();
        for v in m {
            assert!((v - 0.4).abs() < 1e-15);
        }
        assert!(compose(c, 1.1, e).is_err());
        assert!(compose(c, -0.01, e).is_err());
    }

    proptest! {
        #[test]
        fn reflect_matches_householder(n in unit(), v in unit(), scale in 0.01f64..3.0) {
            let out = reflect_dir(n.map(|c| c * scale), v).unwrap();
            let nv = Vector3::from(n);
            let house = 2.0 * nv * nv.transpose() - Matrix3::identity();
            let want = house * Vector3::from(v);
            for k in 0..3 {
                prop_assert!((out[k] - want[k]).abs() < 1e-12);
            }
            prop_assert!((norm(out) - 1.0).abs() < 1e-9);
            prop_assert!((dot(out, n) - dot(v, n)).abs() < 1e-12);
        }

        #[test]
        fn compose_is_affine_in_r(c in prop::array::uniform3(0.0f64..1.0),
                                  e in prop::array::uniform3(0.0f64..1.0),
                                  r in 0.01f64..0.99) {
            let h = 1e-3;
            let a = compose(c, r + h, e).unwrap();
            let b = compose(c, r - h, e).unwrap();
            for k in 0..3 {
                prop_assert!(((a[k] - b[k]) / (2.0 * h) - (e[k] - c[k])).abs() < 1e-9);
            }
        }
    }
}
