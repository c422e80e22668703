//! Evaluation metrics: PSNR, SSIM and mean angular normal error.

use crate::error::{Error, Result};
use crate::image::ImageRGB;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

pub fn mse(a: &ImageRGB, b: &ImageRGB) -> Result<f64> {
    a.same_dims(b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .flat_map(|(x, y)| (0..3).map(move |c| (x[c] - y[c]).powi(2)))
        .sum();
    Ok(sum / a.num_samples() as f64)
}

pub fn psnr(render: &ImageRGB, target: &ImageRGB) -> Result<f64> {
    Ok(psnr_from_mse(mse(render, target)?))
}

pub use crate::loss::ssim;

/// Mean angle in degrees between normalized predicted and reference normals
/// over masked pixels; `None` when the mask selects nothing usable.
pub fn mae_degrees(pred: &[[f64; 3]], gt: &[[f64; 3]], mask: &[bool]) -> Result<Option<f64>> {
    if pred.len() != gt.len() || gt.len() != mask.len() {
        return Err(Error::Dimension("normal maps and mask differ in size".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, g), m) in pred.iter().zip(gt).zip(mask) {
        if !m {
            continue;
        }
        let lp = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let lg = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        // A pixel with no blended normal counts as maximally wrong.
        let cos = if lp > 0.0 && lg > 0.0 {
            (0..3).map(|a| p[a] * g[a]).sum::<f64>() / (lp * lg)
        } else {
            -1.0
        };
        sum += cos.clamp(-1.0, 1.0).acos().to_degrees();
        n += 1;
    }
    Ok((n > 0).then(|| sum / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub mae_deg: Option<f64>,
}

/// Averages per-view metrics; MAE is averaged over the views that define it.
pub fn mean_report(reports: &[MetricReport]) -> MetricReport {
    let n = reports.len().max(1) as f64;
    let maes: Vec<f64> = reports.iter().filter_map(|r| r.mae_deg).collect();
    MetricReport {
        psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
        mae_deg: (!maes.is_empty()).then(|| maes.iter().sum::<f64>() / maes.len() as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_images_hit_the_cap() {
        let a = ImageRGB::filled(16, 16, [0.3, 0.4, 0.5]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn offset_of_a_tenth_is_20_db() {
        let a = ImageRGB::filled(16, 16, [0.3, 0.4, 0.5]);
        let b = ImageRGB::filled(16, 16, [0.4, 0.5, 0.6]);
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-12);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_rotation_gives_its_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let axis = Unit::new_normalize(Vector3::new(0.3, -0.5, 0.8));
        let rot = Rotation3::from_axis_angle(&axis, 5f64.to_radians());
        let mut gt = Vec::new();
        let mut pred = Vec::new();
        while gt.len() < 1000 {
            let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            // Directions orthogonal to the axis rotate by the full angle.
            let w = v - axis.into_inner() * v.dot(&axis);
            if w.norm() < 0.1 {
                continue;
            }
            let w = w.normalize();
            gt.push([w.x, w.y, w.z]);
            let r = rot * w * 2.5;
            pred.push([r.x, r.y, r.z]);
        }
        let mask = vec![true; gt.len()];
        let m = mae_degrees(&pred, &gt, &mask).unwrap().unwrap();
        assert!((m - 5.0).abs() < 0.01, "{m}");
        assert_eq!(mae_degrees(&pred, &gt, &vec![false; gt.len()]).unwrap(), None);
    }
}
