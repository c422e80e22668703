//! Held-out evaluation of a trained scene.

use crate::dataset::{Dataset, Split};
use crate::envmap::EnvironmentMap;
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::metrics::{mae_degrees, mean_report, psnr, psnr_from_mse, ssim, MetricReport};
use crate::render::{render, RenderSettings};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub metrics: MetricReport,
    pub mean_reflection: f64,
    pub n_reflective: usize,
    pub n_gaussians: usize,
    pub views: usize,
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "psnr {:.3} dB, ssim {:.4}, ", self.metrics.psnr, self.metrics.ssim)?;
        match self.metrics.mae_deg {
            Some(m) => write!(f, "normal mae {m:.3} deg, ")?,
            None => write!(f, "normal mae n/a, ")?,
        }
        write!(
            f,
            "mean reflection {:.4}, reflective {}/{}, views {}",
            self.mean_reflection, self.n_reflective, self.n_gaussians, self.views
        )
    }
}

pub fn mean_reflection(cloud: &GaussianCloud) -> f64 {
    if cloud.is_empty() {
        return 0.0;
    }
    cloud.gaussians.iter().map(|g| g.reflection_strength).sum::<f64>() / cloud.len() as f64
}

/// Metrics over every view of `split`. Normal error uses the renormalized
/// blended normal and each view's mask, where the dataset provides them.
pub fn evaluate(
    cloud: &GaussianCloud,
    env: &EnvironmentMap,
    ds: &Dataset,
    split: Split,
    settings: &RenderSettings,
    reflective_threshold: f64,
) -> Result<EvalReport> {
    let mut reports = Vec::new();
    for view in ds.split(split) {
        let out = render(cloud, env, &view.camera, settings)?;
        let img = out.image();
        let mae_deg = match (&view.normals, &view.mask) {
            (Some(n), Some(m)) => mae_degrees(&out.gbuffer.normal, n, m)?,
            _ => None,
        };
        reports.push(MetricReport {
            psnr: psnr(img, &view.image)?,
            ssim: ssim(img, &view.image)?,
            mae_deg,
        });
    }
    if reports.is_empty() {
        return Err(Error::InvalidArgument(format!("dataset has no {} views", split.name())));
    }
    Ok(EvalReport {
        metrics: mean_report(&reports),
        mean_reflection: mean_reflection(cloud),
        n_reflective: cloud.reflective_count(reflective_threshold),
        n_gaussians: cloud.len(),
        views: reports.len(),
    })
}

/// PSNR between two environment maps sampled along the given directions.
pub fn env_psnr(env: &EnvironmentMap, reference: &EnvironmentMap, dirs: &[[f64; 3]]) -> Result<f64> {
    if dirs.is_empty() {
        return Err(Error::InvalidArgument("no directions to compare".into()));
    }
    let sum: f64 = dirs
        .iter()
        .map(|&d| {
            let (a, b) = (env.query(d), reference.query(d));
            (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>()
        })
        .sum();
    Ok(psnr_from_mse(sum / (3 * dirs.len()) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_psnr_of_identical_maps_is_capped() {
        let e = EnvironmentMap::constant(4, [0.2, 0.5, 0.9]);
        let dirs = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        assert_eq!(env_psnr(&e, &e, &dirs).unwrap(), crate::metrics::PSNR_CAP);
        let f = EnvironmentMap::constant(4, [0.3, 0.6, 1.0]);
        assert!((env_psnr(&e, &f, &dirs).unwrap() - 20.0).abs() < 1e-9);
    }
}
