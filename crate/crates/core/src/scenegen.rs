//! Analytic ground truth: procedural environment maps and a ray-traced
//! mirror or Lambertian sphere seen from a ring of cameras.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::dataset::{Dataset, Split, View};
use crate::envmap::{direction_from_uv, EnvironmentMap};
use crate::error::{Error, Result};
use crate::image::ImageRGB;
use crate::io::{pfm, transforms};
use crate::shade::reflect_dir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    Grid,
    Sinusoid,
    HdrBlobs,
}

impl std::str::FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(EnvKind::Grid),
            "sinusoid" => Ok(EnvKind::Sinusoid),
            "hdr-blobs" => Ok(EnvKind::HdrBlobs),
            _ => Err(Error::InvalidArgument(format!("unknown env kind {s:?}"))),
        }
    }
}

/// Grid cells per axis (rows, columns).
pub const GRID_CELLS: (usize, usize) = (4, 8);

/// Parameters of the sinusoid kind, per channel:
/// `f(u, v) = a + b sin(pi v) (1 + cos(2 pi k u + phase))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub k: [f64; 3],
    pub phase: [f64; 3],
}

impl Sinusoid {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
        Self {
            a: std::array::from_fn(|_| rng.gen_range(0.05..0.2)),
            b: std::array::from_fn(|_| rng.gen_range(0.2..0.4)),
            k: std::array::from_fn(|c| (2 + c) as f64),
            phase: std::array::from_fn(|_| rng.gen_range(0.0..2.0 * PI)),
        }
    }

    pub fn eval(&self, u: f64, v: f64) -> [f64; 3] {
        std::array::from_fn(|c| self.a[c] + self.b[c] * (PI * v).sin() * (1.0 + (2.0 * PI * self.k[c] * u + self.phase[c]).cos()))
    }

    /// Mean over the sphere (solid-angle weighted): `a + b pi / 4` for integer `k`.
    pub fn sphere_mean(&self) -> [f64; 3] {
        std::array::from_fn(|c| self.a[c] + self.b[c] * PI / 4.0)
    }
}

/// Designated color of grid cell `(row, col)` for a seed.
pub fn grid_cell_color(seed: u64, row: usize, col: usize) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((row * GRID_CELLS.1 + col) as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    std::array::from_fn(|_| rng.gen_range(0.05..0.95))
}

/// Texel grid for a procedural environment. Deterministic per seed.
pub fn gen_envmap(kind: EnvKind, height: usize, width: usize, seed: u64) -> Result<EnvironmentMap> {
    if width != 2 * height || height == 0 {
        return Err(Error::InvalidArgument(format!("environment map must be H x 2H, got {height} x {width}")));
    }
    let texels = match kind {
        EnvKind::Grid => {
            let (gr, gc) = GRID_CELLS;
            if height % gr != 0 || width % gc != 0 {
                return Err(Error::InvalidArgument(format!("grid env needs H divisible by {gr}")));
            }
            (0..height * width)
                .map(|i| grid_cell_color(seed, (i / width) * gr / height, (i % width) * gc / width))
                .collect()
        }
        EnvKind::Sinusoid => {
            let s = Sinusoid::from_seed(seed);
            (0..height * width)
                .map(|i| {
                    let u = ((i % width) as f64 + 0.5) / width as f64;
                    let v = ((i / width) as f64 + 0.5) / height as f64;
                    s.eval(u, v)
                })
                .collect()
        }
        EnvKind::HdrBlobs => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
            let blobs: Vec<([f64; 3], f64, [f64; 3])> = (0..6)
                .map(|_| {
                    let d = direction_from_uv(rng.gen(), rng.gen_range(0.15..0.85));
                    let sharp = rng.gen_range(8.0..30.0);
                    let col = std::array::from_fn(|_| rng.gen_range(0.5..3.0));
                    (d, sharp, col)
                })
                .collect();
            (0..height * width)
                .map(|i| {
                    let u = ((i % width) as f64 + 0.5) / width as f64;
                    let v = ((i / width) as f64 + 0.5) / height as f64;
                    let d = direction_from_uv(u, v);
                    let mut c = [0.05 + 0.1 * (1.0 - v), 0.06 + 0.12 * (1.0 - v), 0.08 + 0.2 * (1.0 - v)];
                    for (bd, sharp, col) in &blobs {
                        let cos = d[0] * bd[0] + d[1] * bd[1] + d[2] * bd[2];
                        let w = (sharp * (cos - 1.0)).exp();
                        for k in 0..3 {
                            c[k] += w * col[k];
                        }
                    }
                    c
                })
                .collect()
        }
    };
    EnvironmentMap::new(height, width, texels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    Mirror,
    Lambertian { albedo: [f64; 3], light_dir: [f64; 3], ambient: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRing {
    pub radius: f64,
    /// Elevation range in radians (above the xy plane).
    pub elevation: (f64, f64),
    pub fov_x: f64,
    pub resolution: usize,
}

impl Default for CameraRing {
    fn default() -> Self {
        Self {
            radius: 4.0,
            elevation: (-0.35, 0.75),
            fov_x: 0.7,
            resolution: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleScene {
    pub center: [f64; 3],
    pub radius: f64,
    pub surface: Surface,
    pub env: EnvironmentMap,
    pub background: [f64; 3],
    pub ring: CameraRing,
}

pub const DEFAULT_BACKGROUND: [f64; 3] = [0.1; 3];
/// World up used by every oracle camera (rows of the env map start at +z).
pub const WORLD_UP: [f64; 3] = [0.0, 0.0, 1.0];

impl OracleScene {
    pub fn mirror(env: EnvironmentMap) -> Self {
        Self {
            center: [0.0; 3],
            radius: 1.0,
            surface: Surface::Mirror,
            env,
            background: DEFAULT_BACKGROUND,
            ring: CameraRing::default(),
        }
    }

    pub fn lambertian(env: EnvironmentMap, albedo: [f64; 3]) -> Self {
        let l: [f64; 3] = [0.4, -0.3, 0.866];
        let n = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
        Self {
            surface: Surface::Lambertian {
                albedo,
                light_dir: l.map(|c| c / n),
                ambient: 0.25,
            },
            ..Self::mirror(env)
        }
    }

    /// Camera `k` of `n`, evenly spaced in azimuth with elevations spread by
    /// a golden-ratio sequence.
    pub fn ring_camera(&self, k: usize, n: usize) -> Result<Camera> {
        let az = 2.0 * PI * k as f64 / n as f64;
        let t = (k as f64 * 0.618_033_988_749_895).fract();
        let (e0, e1) = self.ring.elevation;
        let el = e0 + (e1 - e0) * t;
        let r = self.ring.radius;
        let c = self.center;
        let eye = [c[0] + r * el.cos() * az.cos(), c[1] + r * el.cos() * az.sin(), c[2] + r * el.sin()];
        let res = self.ring.resolution;
        Camera::look_at(res, res, self.ring.fov_x, eye, c, WORLD_UP)
    }

    /// Shading of a hit with unit normal `n` seen along unit `ray`.
    fn shade_hit(&self, n: [f64; 3], ray: [f64; 3]) -> [f64; 3] {
        match self.surface {
            Surface::Mirror => {
                let d = reflect_dir(n, ray.map(|c| -c)).expect("unit normal");
                self.env.query(d)
            }
            Surface::Lambertian { albedo, light_dir, ambient } => {
                let ndl = (n[0] * light_dir[0] + n[1] * light_dir[1] + n[2] * light_dir[2]).max(0.0);
                albedo.map(|a| a * (ambient + ndl))
            }
        }
    }

    /// Nearest hit distance along a unit ray, if any.
    fn intersect(&self, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
        let oc = [o[0] - self.center[0], o[1] - self.center[1], o[2] - self.center[2]];
        let b = oc[0] * d[0] + oc[1] * d[1] + oc[2] * d[2];
        let c = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - self.radius * self.radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let t0 = -b - s;
        let t1 = -b + s;
        if t0 > 0.0 {
            Some(t0)
        } else if t1 > 0.0 {
            Some(t1)
        } else {
            None
        }
    }

    pub fn render_oracle(&self, cam: &Camera) -> OracleRender {
        let (w, h) = (cam.width, cam.height);
        let px: Vec<([f64; 3], Option<[f64; 3]>)> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let (x, y) = (i % w, i / w);
                let d = cam.pixel_ray(x, y);
                match self.intersect(cam.center, d) {
                    None => (self.background, None),
                    Some(t) => {
                        let p: [f64; 3] = std::array::from_fn(|a| cam.center[a] + t * d[a]);
                        let n: [f64; 3] = std::array::from_fn(|a| (p[a] - self.center[a]) / self.radius);
                        (self.shade_hit(n, d), Some(n))
                    }
                }
            })
            .collect();
        let image = ImageRGB {
            width: w,
            height: h,
            data: px.iter().map(|p| p.0).collect(),
        };
        OracleRender {
            image,
            normals: px.iter().map(|p| p.1.unwrap_or([0.0; 3])).collect(),
            mask: px.iter().map(|p| p.1.is_some()).collect(),
        }
    }

    /// Env-map directions seen in the mirror by the given cameras, one per hit pixel.
    pub fn reflection_directions(&self, cams: &[&Camera]) -> Vec<[f64; 3]> {
        let mut out = Vec::new();
        for cam in cams {
            for y in 0..cam.height {
                for x in 0..cam.width {
                    let d = cam.pixel_ray(x, y);
                    if let Some(t) = self.intersect(cam.center, d) {
                        let n: [f64; 3] =
                            std::array::from_fn(|a| (cam.center[a] + t * d[a] - self.center[a]) / self.radius);
                        out.extend(reflect_dir(n, d.map(|c| -c)));
                    }
                }
            }
        }
        out
    }

    /// Train and test views on one azimuth ring; every `(n_train + n_test) / n_test`-th
    /// position is a test view so the two sets interleave.
    pub fn make_views(&self, n_train: usize, n_test: usize) -> Result<Dataset> {
        if n_train == 0 {
            return Err(Error::InvalidArgument("n_train must be at least 1".into()));
        }
        let n = n_train + n_test;
        let test_slots = test_slots(n_train, n_test);
        let mut views = Vec::with_capacity(n);
        let (mut tr, mut te) = (0, 0);
        for k in 0..n {
            let camera = self.ring_camera(k, n)?;
            let r = self.render_oracle(&camera);
            let split = if test_slots.contains(&k) { Split::Test } else { Split::Train };
            let file_path = match split {
                Split::Train => {
                    tr += 1;
                    format!("train/r_{:03}", tr - 1)
                }
                Split::Test => {
                    te += 1;
                    format!("test/r_{:03}", te - 1)
                }
            };
            views.push(View {
                camera,
                image: r.image,
                normals: Some(r.normals),
                mask: Some(r.mask),
                split,
                file_path,
            });
        }
        Dataset::new(views, self.background)
    }
}

#[derive(Debug, Clone)]
pub struct OracleRender {
    pub image: ImageRGB,
    /// Geometric world-space normals (zero where the mask is false).
    pub normals: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
}

/// Which reference object a generated scene shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Mirror,
    Diffuse,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mirror" => Ok(SceneKind::Mirror),
            "diffuse" | "lambertian" => Ok(SceneKind::Diffuse),
            _ => Err(Error::InvalidArgument(format!("unknown scene kind {s:?}"))),
        }
    }
}

pub const DEFAULT_ENV_HEIGHT: usize = 32;
pub const DEFAULT_ALBEDO: [f64; 3] = [0.7, 0.5, 0.3];
pub const SCENE_FILE: &str = "scene.json";

/// Everything needed to regenerate a scene; stored next to the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub env: EnvKind,
    pub env_height: usize,
    pub seed: u64,
    pub resolution: usize,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::Mirror,
            env: EnvKind::Sinusoid,
            env_height: DEFAULT_ENV_HEIGHT,
            seed: 0,
            resolution: 64,
            n_train: 50,
            n_test: 10,
        }
    }
}

impl SceneSpec {
    pub fn build(&self) -> Result<OracleScene> {
        let env = gen_envmap(self.env, self.env_height, 2 * self.env_height, self.seed)?;
        let mut scene = match self.kind {
            SceneKind::Mirror => OracleScene::mirror(env),
            SceneKind::Diffuse => OracleScene::lambertian(env, DEFAULT_ALBEDO),
        };
        scene.ring.resolution = self.resolution;
        Ok(scene)
    }

    /// Test cameras of the generated dataset, in order.
    pub fn test_cameras(&self) -> Result<Vec<Camera>> {
        let scene = self.build()?;
        let n = self.n_train + self.n_test;
        test_slots(self.n_train, self.n_test)
            .into_iter()
            .map(|k| scene.ring_camera(k, n))
            .collect()
    }
}

fn test_slots(n_train: usize, n_test: usize) -> Vec<usize> {
    let n = n_train + n_test;
    (0..n_test).map(|j| (j * n + n / 2) / n_test.max(1)).collect()
}

/// Generates the scene described by `spec` and writes it under `out`: images,
/// normal maps, masks, the camera file, the ground-truth environment map and
/// the scene description.
pub fn make_dataset(spec: &SceneSpec, out: &Path) -> Result<Dataset> {
    let scene = spec.build()?;
    let ds = scene.make_views(spec.n_train, spec.n_test)?;
    transforms::save_dataset(&ds, out)?;
    let env = &scene.env;
    pfm::write(&out.join(transforms::ENV_GT_FILE), &pfm::from_f64(env.width, env.height, &env.texels))?;
    let p = out.join(SCENE_FILE);
    let text = serde_json::to_string_pretty(spec).expect("serializable") + "\n";
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    Ok(ds)
}

pub fn load_scene_spec(dir: &Path) -> Result<Option<SceneSpec>> {
    let p = dir.join(SCENE_FILE);
    if !p.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| Error::parse(&p, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent tracer: closest-approach intersection and an explicit
    /// mirror formula, pixel by pixel.
    fn scalar_trace(scene: &OracleScene, cam: &Camera, x: usize, y: usize) -> ([f64; 3], bool) {
        let xc = (x as f64 + 0.5 - cam.cx) / cam.fx;
        let yc = (y as f64 + 0.5 - cam.cy) / cam.fy;
        let rt = cam.rotation.transpose();
        let mut d = [0.0; 3];
        for a in 0..3 {
            d[a] = rt[(a, 0)] * xc + rt[(a, 1)] * yc + rt[(a, 2)];
        }
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let d = d.map(|c| c / len);
        let to_c: [f64; 3] = std::array::from_fn(|a| scene.center[a] - cam.center[a]);
        let along = to_c[0] * d[0] + to_c[1] * d[1] + to_c[2] * d[2];
        let perp2 = to_c.iter().map(|c| c * c).sum::<f64>() - along * along;
        let r2 = scene.radius * scene.radius;
        if along <= 0.0 || perp2 >= r2 {
            return (scene.background, false);
        }
        let t = along - (r2 - perp2).sqrt();
        let n: [f64; 3] = std::array::from_fn(|a| (cam.center[a] + t * d[a] - scene.center[a]) / scene.radius);
        let c = match scene.surface {
            Surface::Mirror => {
                let dn = d[0] * n[0] + d[1] * n[1] + d[2] * n[2];
                let refl: [f64; 3] = std::array::from_fn(|a| d[a] - 2.0 * dn * n[a]);
                scene.env.query(refl)
            }
            Surface::Lambertian { albedo, light_dir, ambient } => {
                let ndl: f64 = (0..3).map(|a| n[a] * light_dir[a]).sum();
                albedo.map(|a| a * (ambient + ndl.max(0.0)))
            }
        };
        (c, true)
    }

    fn scenes() -> Vec<OracleScene> {
        let env = gen_envmap(EnvKind::Sinusoid, 16, 32, 3).unwrap();
        vec![OracleScene::mirror(env.clone()), OracleScene::lambertian(env, [0.7, 0.5, 0.3])]
    }

    #[test]
    fn grid_cell_centers_return_designated_color() {
        let env = gen_envmap(EnvKind::Grid, 16, 32, 9).unwrap();
        let (gr, gc) = GRID_CELLS;
        for row in 0..gr {
            for col in 0..gc {
                let u = (col as f64 + 0.5) / gc as f64;
                let v = (row as f64 + 0.5) / gr as f64;
                let got = env.query(direction_from_uv(u, v));
                let want = grid_cell_color(9, row, col);
                for c in 0..3 {
                    assert!((got[c] - want[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_map() {
        for kind in [EnvKind::Grid, EnvKind::Sinusoid, EnvKind::HdrBlobs] {
            assert_eq!(gen_envmap(kind, 8, 16, 5).unwrap(), gen_envmap(kind, 8, 16, 5).unwrap());
        }
        assert_ne!(
            gen_envmap(EnvKind::Grid, 8, 16, 5).unwrap(),
            gen_envmap(EnvKind::Grid, 8, 16, 6).unwrap()
        );
        assert!(gen_envmap(EnvKind::Grid, 8, 8, 5).is_err());
    }

    #[test]
    fn sinusoid_mean_matches_closed_form() {
        let env = gen_envmap(EnvKind::Sinusoid, 32, 64, 1).unwrap();
        let s = Sinusoid::from_seed(1);
        // Uniform directions on the sphere (z uniform, azimuth uniform).
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 200_000;
        let mut mean = [0.0; 3];
        for _ in 0..n {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let phi: f64 = rng.gen_range(-PI..PI);
            let r = (1.0 - z * z).sqrt();
            let v = env.query([r * phi.cos(), r * phi.sin(), z]);
            for c in 0..3 {
                mean[c] += v[c] / n as f64;
            }
        }
        let want = s.sphere_mean();
        for c in 0..3 {
            assert!((mean[c] - want[c]).abs() < 0.01 * want[c], "{mean:?} vs {want:?}");
        }
    }

    #[test]
    fn oracle_matches_independent_tracer() {
        for scene in scenes() {
            for k in [0, 7, 23] {
                let cam = scene.ring_camera(k, 60).unwrap();
                let r = scene.render_oracle(&cam);
                for y in 0..cam.height {
                    for x in 0..cam.width {
                        let (c, hit) = scalar_trace(&scene, &cam, x, y);
                        let i = y * cam.width + x;
                        assert_eq!(hit, r.mask[i]);
                        for ch in 0..3 {
                            assert!((c[ch] - r.image.data[i][ch]).abs() <= 1e-6);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn miss_is_background_and_center_faces_camera() {
        let scene = &scenes()[0];
        let cam = Camera::look_at(9, 9, 0.7, [0.0, 0.0, 4.0], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
        let r = scene.render_oracle(&cam);
        assert_eq!(r.image.get(0, 0), scene.background);
        assert!(!r.mask[0]);
        let c = 4 * 9 + 4;
        assert!(r.mask[c]);
        let n = r.normals[c];
        assert!(n[0].abs() < 1e-12 && n[1].abs() < 1e-12 && (n[2] - 1.0).abs() < 1e-12);
        // Normal incidence: the reflection points back at the camera (+z).
        let d = reflect_dir(n, cam.pixel_ray(4, 4).map(|v| -v)).unwrap();
        assert!((d[2] - 1.0).abs() < 1e-12);
        let want = scene.env.query([0.0, 0.0, 1.0]);
        for ch in 0..3 {
            assert!((r.image.get(4, 4)[ch] - want[ch]).abs() < 1e-12);
        }
    }

    #[test]
    fn mirror_law_and_mask_geometry() {
        let scene = &scenes()[0];
        let cam = scene.ring_camera(3, 60).unwrap();
        let r = scene.render_oracle(&cam);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let i = y * cam.width + x;
                let d = cam.pixel_ray(x, y);
                let oc: [f64; 3] = std::array::from_fn(|a| cam.center[a] - scene.center[a]);
                let b: f64 = (0..3).map(|a| oc[a] * d[a]).sum();
                let c: f64 = oc.iter().map(|v| v * v).sum::<f64>() - scene.radius * scene.radius;
                if b * b - c > 0.0 {
                    assert!(r.mask[i]);
                }
                if r.mask[i] {
                    let n = r.normals[i];
                    let v = d.map(|c| -c);
                    let vn: f64 = (0..3).map(|a| v[a] * n[a]).sum();
                    let want: [f64; 3] = std::array::from_fn(|a| 2.0 * vn * n[a] - v[a]);
                    let got = reflect_dir(n, v).unwrap();
                    for a in 0..3 {
                        assert!((got[a] - want[a]).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn sphere_inside_every_frustum_and_views_interleave() {
        let scene = &scenes()[0];
        let ds = scene.make_views(50, 10).unwrap();
        assert_eq!(ds.views.len(), 60);
        assert_eq!(ds.test().len(), 10);
        for v in &ds.views {
            let m = v.mask.as_ref().unwrap();
            let w = v.camera.width;
            // No hit on the image border.
            for i in 0..w {
                assert!(!m[i] && !m[(w - 1) * w + i] && !m[i * w] && !m[i * w + w - 1]);
            }
            assert!(m.iter().any(|b| *b));
        }
        let kinds: Vec<bool> = ds.views.iter().map(|v| v.split == Split::Test).collect();
        let idx: Vec<usize> = kinds.iter().enumerate().filter(|(_, t)| **t).map(|(i, _)| i).collect();
        for w in idx.windows(2) {
            assert_eq!(w[1] - w[0], 6);
        }
    }
}
