//! Image losses: L1, D-SSIM and their weighted combination, each with an
//! exact gradient with respect to the rendered image.

use crate::error::{Error, Result};
use crate::image::ImageRGB;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const DEFAULT_LAMBDA: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct LossReport {
    pub total: f64,
    pub l1: f64,
    pub dssim: f64,
    /// `dL/d render`.
    pub grad: ImageRGB,
}

pub fn l1_loss(render: &ImageRGB, target: &ImageRGB) -> Result<(f64, ImageRGB)> {
    render.same_dims(target)?;
    let n = render.num_samples() as f64;
    let mut sum = 0.0;
    let mut grad = ImageRGB::new(render.width, render.height);
    for ((r, t), g) in render.data.iter().zip(&target.data).zip(grad.data.iter_mut()) {
        for c in 0..3 {
            let d = r[c] - t[c];
            sum += d.abs();
            g[c] = if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            };
        }
    }
    Ok((sum / n, grad))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "same"-size Gaussian filter with zero padding. The kernel is
/// symmetric, so this operator is its own adjoint.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * row[xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (i, kv) in k.iter().enumerate() {
            let yy = y as isize + i as isize - r;
            if yy < 0 || yy as usize >= h {
                continue;
            }
            let src = &tmp[yy as usize * w..(yy as usize + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for x in 0..w {
                dst[x] += kv * src[x];
            }
        }
    }
    out
}

/// SSIM map statistics of one channel; returns (sum of SSIM values, d sum / d x).
fn ssim_channel(x: &[f64], y: &[f64], w: usize, h: usize, want_grad: bool) -> (f64, Vec<f64>) {
    let k = gaussian_kernel();
    let n = w * h;
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = blur(x, w, h, &k);
    let mu_y = blur(y, w, h, &k);
    let e_xx = blur(&xx, w, h, &k);
    let e_yy = blur(&yy, w, h, &k);
    let e_xy = blur(&xy, w, h, &k);

    let mut sum = 0.0;
    let (mut da, mut db, mut dc) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sxx = e_xx[i] - mx * mx;
        let syy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        let num1 = 2.0 * mx * my + SSIM_C1;
        let num2 = 2.0 * sxy + SSIM_C2;
        let den1 = mx * mx + my * my + SSIM_C1;
        let den2 = sxx + syy + SSIM_C2;
        let den = den1 * den2;
        let s = num1 * num2 / den;
        sum += s;
        if want_grad {
            // s as a function of (μx, E[x²], E[xy]) with σ's expanded.
            da[i] = (2.0 * my * num2 - 2.0 * my * num1) / den - s * 2.0 * mx / den1 + s * 2.0 * mx / den2;
            db[i] = -s / den2;
            dc[i] = 2.0 * num1 / den;
        }
    }
    if !want_grad {
        return (sum, Vec::new());
    }
    let ba = blur(&da, w, h, &k);
    let bb = blur(&db, w, h, &k);
    let bc = blur(&dc, w, h, &k);
    let grad = (0..n).map(|i| ba[i] + 2.0 * x[i] * bb[i] + y[i] * bc[i]).collect();
    (sum, grad)
}

fn check_ssim_dims(render: &ImageRGB, target: &ImageRGB) -> Result<()> {
    render.same_dims(target)?;
    if render.width < SSIM_WINDOW || render.height < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            render.width, render.height
        )));
    }
    Ok(())
}

/// Mean SSIM over all pixels and channels.
pub fn ssim(render: &ImageRGB, target: &ImageRGB) -> Result<f64> {
    check_ssim_dims(render, target)?;
    let (w, h) = (render.width, render.height);
    let total: f64 = (0..3)
        .map(|c| ssim_channel(&render.channel(c), &target.channel(c), w, h, false).0)
        .sum();
    Ok(total / render.num_samples() as f64)
}

/// `(1 - mean SSIM) / 2` and its gradient.
pub fn dssim_loss(render: &ImageRGB, target: &ImageRGB) -> Result<(f64, ImageRGB)> {
    check_ssim_dims(render, target)?;
    let (w, h) = (render.width, render.height);
    let n = render.num_samples() as f64;
    let mut grad = ImageRGB::new(w, h);
    let mut total = 0.0;
    for c in 0..3 {
        let (s, g) = ssim_channel(&render.channel(c), &target.channel(c), w, h, true);
        total += s;
        for (dst, gv) in grad.data.iter_mut().zip(g) {
            dst[c] = -0.5 * gv / n;
        }
    }
    Ok(((1.0 - total / n) / 2.0, grad))
}

/// `(1 - λ) L1 + λ D-SSIM`.
pub fn combined_loss(render: &ImageRGB, target: &ImageRGB, lambda: f64) -> Result<LossReport> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("loss weight {lambda} outside [0, 1]")));
    }
    let (l1, g1) = l1_loss(render, target)?;
    let (dssim, g2) = dssim_loss(render, target)?;
    let mut grad = g1;
    for (a, b) in grad.data.iter_mut().zip(&g2.data) {
        for c in 0..3 {
            a[c] = (1.0 - lambda) * a[c] + lambda * b[c];
        }
    }
    Ok(LossReport {
        total: (1.0 - lambda) * l1 + lambda * dssim,
        l1,
        dssim,
        grad,
    })
}
