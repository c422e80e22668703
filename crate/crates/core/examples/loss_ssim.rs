//! Loss values for a few image perturbations: L1, D-SSIM and their blend.

use deferred_splat::image::ImageRGB;
use deferred_splat::loss::{combined_loss, ssim, DEFAULT_LAMBDA};

fn main() -> anyhow::Result<()> {
    let base = ImageRGB::from_fn(48, 48, |x, y| {
        let t = ((x as f64 / 6.0).sin() * (y as f64 / 9.0).cos() + 1.0) / 2.0;
        [t, 0.5 * t + 0.2, 1.0 - t]
    });
    let shifted = ImageRGB::from_fn(48, 48, |x, y| base.get(x, y).map(|c| (c + 0.05).min(1.0)));
    let blurred = ImageRGB::from_fn(48, 48, |x, y| {
        let mut acc = [0.0; 3];
        let mut n = 0.0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (xx, yy) = ((x as i64 + dx).clamp(0, 47) as usize, (y as i64 + dy).clamp(0, 47) as usize);
                let p = base.get(xx, yy);
                (0..3).for_each(|c| acc[c] += p[c]);
                n += 1.0;
            }
        }
        acc.map(|c| c / n)
    });
    for (name, img) in [("identical", &base), ("brightened", &shifted), ("blurred", &blurred)] {
        let l = combined_loss(img, &base, DEFAULT_LAMBDA)?;
        println!(
            "{name:<11} ssim {:.5}  l1 {:.5}  dssim {:.5}  total {:.5}",
            ssim(img, &base)?,
            l.l1,
            l.dssim,
            l.total
        );
    }
    Ok(())
}
