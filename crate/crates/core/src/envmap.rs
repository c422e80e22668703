//! Learnable equirectangular environment map with bilinear lookups.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Equirectangular RGB grid, `width == 2 * height`. Row 0 looks toward `+z`,
/// column 0 starts at azimuth `-π` (measured with `atan2(y, x)`).
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentMap {
    pub height: usize,
    pub width: usize,
    pub texels: Vec<[f64; 3]>,
}

/// The four texels and weights behind one bilinear lookup, plus the lookup's
/// derivative with respect to the query direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub value: [f64; 3],
    pub texels: [usize; 4],
    pub weights: [f64; 4],
    /// `d value[c] / d dir[a]` as `[c][a]`.
    pub d_dir: [[f64; 3]; 3],
    /// Integer cell of the lookup (left column, top row before clamping).
    pub cell: (i64, i64),
}

impl EnvironmentMap {
    pub fn new(height: usize, width: usize, texels: Vec<[f64; 3]>) -> Result<Self> {
        if width != 2 * height || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "environment map must be H x 2H, got {height} x {width}"
            )));
        }
        if texels.len() != width * height {
            return Err(Error::Dimension(format!(
                "expected {} texels, got {}",
                width * height,
                texels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            texels,
        })
    }

    pub fn constant(height: usize, value: [f64; 3]) -> Self {
        Self {
            height,
            width: 2 * height,
            texels: vec![value; 2 * height * height],
        }
    }

    #[inline]
    pub fn texel(&self, row: usize, col: usize) -> [f64; 3] {
        self.texels[row * self.width + col]
    }

    /// Direction through the center of texel `(row, col)`.
    pub fn texel_direction(&self, row: usize, col: usize) -> [f64; 3] {
        let u = (col as f64 + 0.5) / self.width as f64;
        let v = (row as f64 + 0.5) / self.height as f64;
        direction_from_uv(u, v)
    }

    pub fn clamp_nonnegative(&mut self) {
        for t in &mut self.texels {
            for c in t.iter_mut() {
                *c = c.max(0.0);
            }
        }
    }

    pub fn query(&self, dir: [f64; 3]) -> [f64; 3] {
        self.lookup(dir).value
    }

    pub fn lookup(&self, dir: [f64; 3]) -> Lookup {
        let (w, h) = (self.width as f64, self.height as f64);
        let rho2 = dir[0] * dir[0] + dir[1] * dir[1];
        let u = dir[1].atan2(dir[0]) / (2.0 * PI) + 0.5;
        let zc = dir[2].clamp(-1.0, 1.0);
        let v = zc.acos() / PI;
        let x = u * w - 0.5;
        let y = v * h - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let ix0 = (x0 as i64).rem_euclid(self.width as i64) as usize;
        let ix1 = (ix0 + 1) % self.width;
        let iy0 = (y0 as i64).clamp(0, self.height as i64 - 1) as usize;
        let iy1 = (y0 as i64 + 1).clamp(0, self.height as i64 - 1) as usize;

        let texels = [
            iy0 * self.width + ix0,
            iy0 * self.width + ix1,
            iy1 * self.width + ix0,
            iy1 * self.width + ix1,
        ];
        let weights = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
        let t = texels.map(|i| self.texels[i]);
        let mut value = [0.0; 3];
        for c in 0..3 {
            for k in 0..4 {
                value[c] += weights[k] * t[k][c];
            }
        }

        // Chain: value <- (x, y) <- (u, v) <- dir.
        let du = if rho2 > 0.0 {
            [-dir[1] / rho2 / (2.0 * PI), dir[0] / rho2 / (2.0 * PI), 0.0]
        } else {
            [0.0; 3]
        };
        let dv_dz = if dir[2].abs() < 1.0 {
            -1.0 / (PI * (1.0 - dir[2] * dir[2]).sqrt())
        } else {
            0.0
        };
        let mut d_dir = [[0.0; 3]; 3];
        for c in 0..3 {
            let dvx = (1.0 - fy) * (t[1][c] - t[0][c]) + fy * (t[3][c] - t[2][c]);
            let dvy = (1.0 - fx) * (t[2][c] - t[0][c]) + fx * (t[3][c] - t[1][c]);
            for a in 0..3 {
                d_dir[c][a] = dvx * w * du[a];
            }
            d_dir[c][2] += dvy * h * dv_dz;
        }
        Lookup {
            value,
            texels,
            weights,
            d_dir,
            cell: (x0 as i64, y0 as i64),
        }
    }
}

/// Inverse of the equirectangular mapping.
pub fn direction_from_uv(u: f64, v: f64) -> [f64; 3] {
    let phi = (u - 0.5) * 2.0 * PI;
    let theta = v * PI;
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}
