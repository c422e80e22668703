//! Depth-sorted alpha splatting of per-Gaussian attributes into a G-buffer,
//! and its exact backward pass.
//!
//! Every pixel blends color, normal and reflection strength with the same
//! weights `w_i = α_i Π_{j<i} (1 - α_j)`. Pixels are processed in 16×16 tiles
//! for culling only; the blend order is the global depth order.

use log::debug;
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::{project_vjp, project_with_cache, Camera, ProjectionCache};
use crate::error::{Error, Result};
use crate::gaussian::{
    gaussian_normal_ext, normalize_vjp, param, rotation_matrix, rotation_matrix_vjp, unit_quat,
    GaussianCloud, ParamVec,
};
use crate::sh;

pub const TILE: usize = 16;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const ALPHA_MAX: f64 = 0.99;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

/// Screen-space attribute maps produced by splatting.
#[derive(Debug, Clone, PartialEq)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    /// Raw weighted blend of unit normals (not renormalized).
    pub normal: Vec<[f64; 3]>,
    pub refl: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl GBuffer {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![[0.0; 3]; n],
            normal: vec![[0.0; 3]; n],
            refl: vec![0.0; n],
            alpha: vec![0.0; n],
        }
    }
}

/// Upstream gradients on every G-buffer channel.
pub type GBufferGrad = GBuffer;

/// One Gaussian after projection, ready to be blended.
#[derive(Debug, Clone)]
pub struct SplatItem {
    /// Index into the source cloud.
    pub index: usize,
    pub mean: [f64; 2],
    /// Inverse 2D covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub depth: f64,
    pub color: [f64; 3],
    pub normal: [f64; 3],
    pub refl: f64,
    /// Inclusive-exclusive pixel bounds `x0, x1, y0, y1`.
    pub bounds: [usize; 4],
}

#[derive(Debug, Clone)]
pub(crate) struct ItemCache {
    pub proj: ProjectionCache,
    pub cov2d: Matrix2<f64>,
    /// Unnormalized SH view vector (Gaussian minus camera) and its length.
    pub view: [f64; 3],
    pub view_len: f64,
    pub color_raw: [f64; 3],
    pub normal_axis: usize,
    pub normal_sign: f64,
}

/// Projected, depth-sorted Gaussians of one view.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub items: Vec<SplatItem>,
    pub(crate) caches: Vec<ItemCache>,
    pub sh_degree: usize,
    pub cloud_len: usize,
}

#[derive(Debug, Clone, Copy)]
struct Record {
    item: u32,
    alpha: f64,
    trans: f64,
    clamped: bool,
}

#[derive(Debug, Clone)]
struct TileTape {
    /// Offsets into `records` per pixel of the tile (row-major within the tile).
    offsets: Vec<u32>,
    records: Vec<Record>,
    final_trans: Vec<f64>,
}

/// Everything the backward pass needs to replay the blend exactly.
#[derive(Debug, Clone)]
pub struct SplatTape {
    pub prepared: Prepared,
    width: usize,
    height: usize,
    tile_lists: Vec<Vec<u32>>,
    tiles: Vec<TileTape>,
}

impl SplatTape {
    /// Global-order contributor list of pixel `(x, y)`: `(cloud index, alpha, transmittance before)`.
    pub fn contributors(&self, x: usize, y: usize) -> Vec<(usize, f64, f64)> {
        let tiles_x = self.width.div_ceil(TILE);
        let t = (y / TILE) * tiles_x + x / TILE;
        let tt = &self.tiles[t];
        let (x0, y0) = ((x / TILE) * TILE, (y / TILE) * TILE);
        let tw = (x0 + TILE).min(self.width) - x0;
        let local = (y - y0) * tw + (x - x0);
        let (a, b) = (tt.offsets[local] as usize, tt.offsets[local + 1] as usize);
        tt.records[a..b]
            .iter()
            .map(|r| (self.prepared.items[r.item as usize].index, r.alpha, r.trans))
            .collect()
    }

    /// Identity of every discrete choice made by the blend (contributor sets
    /// and α clamps). Equal signatures mean the forward map is smooth between
    /// the two evaluations.
    pub fn signature(&self, hasher: &mut impl std::hash::Hasher) {
        for (tile, tt) in self.tiles.iter().enumerate() {
            hasher.write_usize(tile);
            for r in &tt.records {
                hasher.write_usize(self.prepared.items[r.item as usize].index);
                hasher.write_u8(r.clamped as u8);
            }
            for o in &tt.offsets {
                hasher.write_u32(*o);
            }
        }
        for (it, c) in self.prepared.items.iter().zip(&self.prepared.caches) {
            hasher.write_usize(it.index);
            hasher.write_usize(c.normal_axis);
            hasher.write_u8((c.normal_sign > 0.0) as u8);
            for v in c.color_raw {
                hasher.write_u8((v < 0.0) as u8);
            }
        }
    }
}

/// Project, shade (SH) and sort every Gaussian of the cloud for one camera.
pub fn prepare(cloud: &GaussianCloud, cam: &Camera, sh_degree: usize) -> Prepared {
    let degree = sh_degree.min(sh::MAX_DEGREE);
    let mut pairs: Vec<(SplatItem, ItemCache)> = cloud
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(index, g)| {
            let (proj, pcache) = project_with_cache(g, cam)?;
            let cov = proj.cov2d;
            let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(0, 1)];
            if !(det > 0.0) || !det.is_finite() {
                debug!("skipping Gaussian {index}: singular 2D covariance");
                return None;
            }
            let opacity = g.opacity();
            if opacity * 1.0 < ALPHA_MIN {
                return None;
            }
            let conic = [cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det];
            // Level set of α = 1/255 bounds every pixel that can contribute.
            let k = 2.0 * (opacity / ALPHA_MIN).ln();
            let rx = (k * cov[(0, 0)]).sqrt() + 1.0;
            let ry = (k * cov[(1, 1)]).sqrt() + 1.0;
            let [mx, my] = proj.mean2d;
            let x0 = (mx - rx - 0.5).ceil().max(0.0);
            let x1 = (mx + rx - 0.5).floor() + 1.0;
            let y0 = (my - ry - 0.5).ceil().max(0.0);
            let y1 = (my + ry - 0.5).floor() + 1.0;
            let x1 = x1.min(cam.width as f64);
            let y1 = y1.min(cam.height as f64);
            if !(x0 < x1 && y0 < y1) {
                return None;
            }
            let bounds = [x0 as usize, x1 as usize, y0 as usize, y1 as usize];

            let view = [
                g.position[0] - cam.center[0],
                g.position[1] - cam.center[1],
                g.position[2] - cam.center[2],
            ];
            let view_len = (view[0] * view[0] + view[1] * view[1] + view[2] * view[2]).sqrt();
            let dir = view.map(|v| v / view_len);
            let color_raw = sh::eval_unclamped(&g.sh, degree, dir);
            let (normal, normal_axis, normal_sign) = gaussian_normal_ext(g, cam.center);
            Some((
                SplatItem {
                    index,
                    mean: proj.mean2d,
                    conic,
                    opacity,
                    depth: proj.depth,
                    color: color_raw.map(|c| c.max(0.0)),
                    normal,
                    refl: g.reflection_strength,
                    bounds,
                },
                ItemCache {
                    proj: pcache,
                    cov2d: cov,
                    view,
                    view_len,
                    color_raw,
                    normal_axis,
                    normal_sign,
                },
            ))
        })
        .collect();
    pairs.sort_by(|a, b| a.0.depth.total_cmp(&b.0.depth).then(a.0.index.cmp(&b.0.index)));
    let (items, caches) = pairs.into_iter().unzip();
    Prepared {
        items,
        caches,
        sh_degree: degree,
        cloud_len: cloud.len(),
    }
}

#[inline]
fn features(it: &SplatItem) -> [f64; 7] {
    [
        it.color[0],
        it.color[1],
        it.color[2],
        it.normal[0],
        it.normal[1],
        it.normal[2],
        it.refl,
    ]
}

#[inline]
fn eval_alpha(it: &SplatItem, px: f64, py: f64) -> (f64, f64, f64, f64) {
    let dx = px - it.mean[0];
    let dy = py - it.mean[1];
    let [a, b, c] = it.conic;
    let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
    let gauss = power.exp();
    (it.opacity * gauss, gauss, dx, dy)
}

fn tile_rect(t: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let tiles_x = width.div_ceil(TILE);
    let (tx, ty) = (t % tiles_x, t / tiles_x);
    let x0 = tx * TILE;
    let y0 = ty * TILE;
    (x0, (x0 + TILE).min(width), y0, (y0 + TILE).min(height))
}

fn bin_tiles(items: &[SplatItem], width: usize, height: usize) -> Vec<Vec<u32>> {
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for (i, it) in items.iter().enumerate() {
        let [x0, x1, y0, y1] = it.bounds;
        for ty in y0 / TILE..=(y1 - 1) / TILE {
            for tx in x0 / TILE..=(x1 - 1) / TILE {
                lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    lists
}

struct TileOut {
    tape: TileTape,
    color: Vec<[f64; 3]>,
    normal: Vec<[f64; 3]>,
    refl: Vec<f64>,
    alpha: Vec<f64>,
}

fn rasterize_tile(items: &[SplatItem], list: &[u32], rect: (usize, usize, usize, usize)) -> TileOut {
    let (x0, x1, y0, y1) = rect;
    let n = (x1 - x0) * (y1 - y0);
    let mut out = TileOut {
        tape: TileTape {
            offsets: Vec::with_capacity(n + 1),
            records: Vec::new(),
            final_trans: Vec::with_capacity(n),
        },
        color: Vec::with_capacity(n),
        normal: Vec::with_capacity(n),
        refl: Vec::with_capacity(n),
        alpha: Vec::with_capacity(n),
    };
    out.tape.offsets.push(0);
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut acc = [0.0; 7];
            for &li in list {
                let it = &items[li as usize];
                if x < it.bounds[0] || x >= it.bounds[1] || y < it.bounds[2] || y >= it.bounds[3] {
                    continue;
                }
                let (raw, _, _, _) = eval_alpha(it, px, py);
                if raw < ALPHA_MIN {
                    continue;
                }
                let clamped = raw > ALPHA_MAX;
                let alpha = if clamped { ALPHA_MAX } else { raw };
                let w = alpha * t;
                let f = features(it);
                for k in 0..7 {
                    acc[k] += f[k] * w;
                }
                out.tape.records.push(Record {
                    item: li,
                    alpha,
                    trans: t,
                    clamped,
                });
                t *= 1.0 - alpha;
                if t < TRANSMITTANCE_MIN {
                    break;
                }
            }
            out.tape.offsets.push(out.tape.records.len() as u32);
            out.tape.final_trans.push(t);
            out.color.push([acc[0], acc[1], acc[2]]);
            out.normal.push([acc[3], acc[4], acc[5]]);
            out.refl.push(acc[6]);
            out.alpha.push(1.0 - t);
        }
    }
    out
}

/// Blend prepared Gaussians into a G-buffer.
pub fn rasterize(prepared: Prepared, width: usize, height: usize) -> (GBuffer, SplatTape) {
    let tile_lists = bin_tiles(&prepared.items, width, height);
    let outs: Vec<TileOut> = tile_lists
        .par_iter()
        .enumerate()
        .map(|(t, list)| rasterize_tile(&prepared.items, list, tile_rect(t, width, height)))
        .collect();
    let mut gb = GBuffer::zeros(width, height);
    let mut tiles = Vec::with_capacity(outs.len());
    for (t, out) in outs.into_iter().enumerate() {
        let (x0, x1, y0, y1) = tile_rect(t, width, height);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * width + x;
                gb.color[p] = out.color[k];
                gb.normal[p] = out.normal[k];
                gb.refl[p] = out.refl[k];
                gb.alpha[p] = out.alpha[k];
                k += 1;
            }
        }
        tiles.push(out.tape);
    }
    (
        gb,
        SplatTape {
            prepared,
            width,
            height,
            tile_lists,
            tiles,
        },
    )
}

/// Splat a cloud as seen from `cam`, using SH colors up to `sh_degree`.
pub fn splat_forward(cloud: &GaussianCloud, cam: &Camera, sh_degree: usize) -> (GBuffer, SplatTape) {
    rasterize(prepare(cloud, cam, sh_degree), cam.width, cam.height)
}

/// Gradient with respect to one prepared item's blend inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ItemGrad {
    pub mean: [f64; 2],
    /// Gradient on the symmetric conic matrix; `conic[1]` is the gradient of
    /// each off-diagonal entry individually.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
    pub normal: [f64; 3],
    pub refl: f64,
}

impl ItemGrad {
    fn add(&mut self, o: &ItemGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
            self.normal[k] += o.normal[k];
        }
        self.opacity += o.opacity;
        self.refl += o.refl;
    }
}

fn backward_tile(
    tape: &SplatTape,
    t: usize,
    grads: &GBufferGrad,
) -> Vec<ItemGrad> {
    let items = &tape.prepared.items;
    let list = &tape.tile_lists[t];
    let tt = &tape.tiles[t];
    // Map item index -> slot in this tile's list.
    let mut local: Vec<ItemGrad> = vec![ItemGrad::default(); list.len()];
    let slot_of = |item: u32| -> usize { list.binary_search(&item).expect("record item missing from tile list") };
    let (x0, x1, y0, y1) = tile_rect(t, tape.width, tape.height);
    let mut k = 0;
    for y in y0..y1 {
        for x in x0..x1 {
            let p = y * tape.width + x;
            let (a, b) = (tt.offsets[k] as usize, tt.offsets[k + 1] as usize);
            let t_final = tt.final_trans[k];
            k += 1;
            if a == b {
                continue;
            }
            let g = [
                grads.color[p][0],
                grads.color[p][1],
                grads.color[p][2],
                grads.normal[p][0],
                grads.normal[p][1],
                grads.normal[p][2],
                grads.refl[p],
            ];
            let g_alpha_acc = grads.alpha[p];
            if g.iter().all(|v| *v == 0.0) && g_alpha_acc == 0.0 {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            // Σ_{k>i} (g·f_k) w_k, accumulated back to front.
            let mut behind = 0.0;
            for r in tt.records[a..b].iter().rev() {
                let it = &items[r.item as usize];
                let f = features(it);
                let gf: f64 = (0..7).map(|c| g[c] * f[c]).sum();
                let w = r.alpha * r.trans;
                let slot = slot_of(r.item);
                let ig = &mut local[slot];
                for c in 0..3 {
                    ig.color[c] += g[c] * w;
                    ig.normal[c] += g[3 + c] * w;
                }
                ig.refl += g[6] * w;
                let one_minus = 1.0 - r.alpha;
                let d_alpha = r.trans * gf - behind / one_minus + g_alpha_acc * t_final / one_minus;
                behind += gf * w;
                if r.clamped {
                    continue;
                }
                let (raw, gauss, dx, dy) = eval_alpha(it, px, py);
                ig.opacity += d_alpha * gauss;
                let d_power = d_alpha * raw;
                let [ca, cb, cc] = it.conic;
                // power = -½ dᵀ Q d with d = pixel - mean.
                ig.mean[0] += d_power * (ca * dx + cb * dy);
                ig.mean[1] += d_power * (cb * dx + cc * dy);
                ig.conic[0] += -0.5 * dx * dx * d_power;
                ig.conic[1] += -0.5 * dx * dy * d_power;
                ig.conic[2] += -0.5 * dy * dy * d_power;
            }
        }
    }
    local
}

fn check_grads(tape: &SplatTape, grads: &GBufferGrad) -> Result<()> {
    let n = tape.width * tape.height;
    if grads.width != tape.width
        || grads.height != tape.height
        || grads.color.len() != n
        || grads.normal.len() != n
        || grads.refl.len() != n
        || grads.alpha.len() != n
    {
        return Err(Error::Contract("G-buffer gradient does not match the splat tape".into()));
    }
    Ok(())
}

/// Backward through the blend: per prepared item gradients, reduced over
/// tiles in a fixed order so the result does not depend on the thread count.
pub fn rasterize_backward(tape: &SplatTape, grads: &GBufferGrad) -> Result<Vec<ItemGrad>> {
    check_grads(tape, grads)?;
    let per_tile: Vec<Vec<ItemGrad>> = (0..tape.tiles.len())
        .into_par_iter()
        .map(|t| backward_tile(tape, t, grads))
        .collect();
    let mut out = vec![ItemGrad::default(); tape.prepared.items.len()];
    for (t, local) in per_tile.iter().enumerate() {
        for (slot, g) in local.iter().enumerate() {
            out[tape.tile_lists[t][slot] as usize].add(g);
        }
    }
    Ok(out)
}

/// Chain item gradients back to the Gaussian parameters of the cloud.
///
/// `extra_position` optionally carries additional world-space position
/// gradients per prepared item (used by per-Gaussian shading).
pub fn items_to_params(
    cloud: &GaussianCloud,
    cam: &Camera,
    tape: &SplatTape,
    item_grads: &[ItemGrad],
) -> Result<Vec<ParamVec>> {
    let prep = &tape.prepared;
    if prep.cloud_len != cloud.len() || item_grads.len() != prep.items.len() {
        return Err(Error::Contract("splat tape does not belong to this cloud".into()));
    }
    let mut out = vec![[0.0; param::COUNT]; cloud.len()];
    for ((it, cache), ig) in prep.items.iter().zip(&prep.caches).zip(item_grads) {
        let g = &cloud.gaussians[it.index];
        let dst = &mut out[it.index];

        // Conic -> 2D covariance: dΣ = -Q G Q.
        let q = Matrix2::new(it.conic[0], it.conic[1], it.conic[1], it.conic[2]);
        let gq = Matrix2::new(ig.conic[0], ig.conic[1], ig.conic[1], ig.conic[2]);
        let d_cov2d = -(q * gq * q);
        let _ = &cache.cov2d;
        let (mut d_pos, d_cov3) = project_vjp(cam, &cache.proj, Vector2::from(ig.mean), &d_cov2d);

        // Σ = M Mᵀ, M = R S.
        let uq = unit_quat(&g.rotation);
        let r = rotation_matrix(&uq);
        let s = g.scale();
        let m = r * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], s[2]));
        let d_m = 2.0 * d_cov3 * m;
        let mut d_r = Matrix3::zeros();
        for kcol in 0..3 {
            let mut ds = 0.0;
            for i in 0..3 {
                ds += d_m[(i, kcol)] * r[(i, kcol)];
                d_r[(i, kcol)] += d_m[(i, kcol)] * s[kcol];
            }
            dst[param::LOG_SCALE + kcol] += ds * s[kcol];
        }
        for i in 0..3 {
            d_r[(i, cache.normal_axis)] += cache.normal_sign * ig.normal[i];
        }
        let d_uq = rotation_matrix_vjp(&uq, &d_r);
        let d_q = normalize_vjp(&g.rotation, &d_uq);
        for i in 0..4 {
            dst[param::ROTATION + i] += d_q[i];
        }

        let o = it.opacity;
        dst[param::OPACITY] += ig.opacity * o * (1.0 - o);
        dst[param::REFLECTION] += ig.refl;

        // SH color (clamped channels pass no gradient).
        let dir = cache.view.map(|v| v / cache.view_len);
        let degree = prep.sh_degree;
        let basis = sh::basis(degree, dir);
        let mut d_color = ig.color;
        for c in 0..3 {
            if cache.color_raw[c] < 0.0 {
                d_color[c] = 0.0;
            }
        }
        for k in 0..sh::num_coeffs(degree) {
            for c in 0..3 {
                dst[param::sh(k, c)] += d_color[c] * basis[k];
            }
        }
        if degree > 0 {
            let jac = sh::basis_jacobian(degree, dir);
            let mut d_dir = [0.0; 3];
            for k in 1..sh::num_coeffs(degree) {
                let w: f64 = (0..3).map(|c| d_color[c] * g.sh[k][c]).sum();
                for a in 0..3 {
                    d_dir[a] += w * jac[k][a];
                }
            }
            let dot: f64 = (0..3).map(|a| d_dir[a] * dir[a]).sum();
            for a in 0..3 {
                d_pos[a] += (d_dir[a] - dir[a] * dot) / cache.view_len;
            }
        }
        for a in 0..3 {
            dst[param::POSITION + a] += d_pos[a];
        }
    }
    Ok(out)
}

/// Exact gradients of the G-buffer with respect to every Gaussian parameter.
pub fn splat_backward(
    cloud: &GaussianCloud,
    cam: &Camera,
    tape: &SplatTape,
    grads: &GBufferGrad,
) -> Result<Vec<ParamVec>> {
    let item_grads = rasterize_backward(tape, grads)?;
    items_to_params(cloud, cam, tape, &item_grads)
}

/// Screen-space mean gradient magnitude per cloud index (densification statistic).
/// Norm of each Gaussian's screen-space mean gradient, measured in
/// normalized device coordinates (pixel gradient times half the image size)
/// so densification thresholds do not depend on resolution.
pub fn mean2d_grad_norms(tape: &SplatTape, item_grads: &[ItemGrad], cloud_len: usize) -> Vec<Option<f64>> {
    let (sx, sy) = (0.5 * tape.width as f64, 0.5 * tape.height as f64);
    let mut out = vec![None; cloud_len];
    for (it, g) in tape.prepared.items.iter().zip(item_grads) {
        out[it.index] = Some((g.mean[0] * sx).hypot(g.mean[1] * sy));
    }
    out
}
