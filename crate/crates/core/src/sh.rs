//! Real spherical harmonics up to degree 3 in the sign convention used by
//! Gaussian-splatting codebases (`-C1*y, C1*z, -C1*x, ...`).

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 3;
pub const NUM_COEFFS: usize = (MAX_DEGREE + 1) * (MAX_DEGREE + 1);

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Per-Gaussian SH coefficients, `[coefficient][channel]`.
pub type ShCoeffs = [[f64; 3]; NUM_COEFFS];

#[inline]
pub fn num_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values `Y_k(dir)` for `k < num_coeffs(degree)`; the rest are zero.
pub fn basis(degree: usize, d: [f64; 3]) -> [f64; NUM_COEFFS] {
    let [x, y, z] = d;
    let mut b = [0.0; NUM_COEFFS];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
        if degree >= 3 {
            b[9] = SH_C3[0] * y * (3.0 * xx - yy);
            b[10] = SH_C3[1] * x * y * z;
            b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = SH_C3[5] * z * (xx - yy);
            b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Jacobian of [`basis`] with respect to the (unconstrained) direction vector.
pub fn basis_jacobian(degree: usize, d: [f64; 3]) -> [[f64; 3]; NUM_COEFFS] {
    let [x, y, z] = d;
    let mut j = [[0.0; 3]; NUM_COEFFS];
    if degree >= 1 {
        j[1] = [0.0, -SH_C1, 0.0];
        j[2] = [0.0, 0.0, SH_C1];
        j[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        j[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        j[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        j[6] = [-2.0 * x * SH_C2[2], -2.0 * y * SH_C2[2], 4.0 * z * SH_C2[2]];
        j[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        j[8] = [2.0 * x * SH_C2[4], -2.0 * y * SH_C2[4], 0.0];
        if degree >= 3 {
            let c = SH_C3;
            j[9] = [c[0] * 6.0 * x * y, c[0] * (3.0 * xx - 3.0 * yy), 0.0];
            j[10] = [c[1] * y * z, c[1] * x * z, c[1] * x * y];
            j[11] = [
                c[2] * -2.0 * x * y,
                c[2] * (4.0 * zz - xx - 3.0 * yy),
                c[2] * 8.0 * y * z,
            ];
            j[12] = [
                c[3] * -6.0 * x * z,
                c[3] * -6.0 * y * z,
                c[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
            ];
            j[13] = [
                c[4] * (4.0 * zz - 3.0 * xx - yy),
                c[4] * -2.0 * x * y,
                c[4] * 8.0 * x * z,
            ];
            j[14] = [c[5] * 2.0 * x * z, c[5] * -2.0 * y * z, c[5] * (xx - yy)];
            j[15] = [c[6] * (3.0 * xx - 3.0 * yy), c[6] * -6.0 * x * y, 0.0];
        }
    }
    j
}

/// Raw color before clamping: `sum_k c_k Y_k(dir) + 0.5`.
pub fn eval_unclamped(coeffs: &ShCoeffs, degree: usize, dir: [f64; 3]) -> [f64; 3] {
    let b = basis(degree, dir);
    let mut out = [0.5; 3];
    for (k, bk) in b.iter().enumerate().take(num_coeffs(degree)) {
        for c in 0..3 {
            out[c] += coeffs[k][c] * bk;
        }
    }
    out
}

/// View-dependent color of one Gaussian: SH sum plus 0.5, clamped below at zero.
pub fn sh_evaluate(coeffs: &ShCoeffs, degree: usize, dir: [f64; 3]) -> Result<[f64; 3]> {
    if degree > MAX_DEGREE {
        return Err(Error::InvalidArgument(format!(
            "SH degree {degree} exceeds {MAX_DEGREE}"
        )));
    }
    let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "direction is not unit length (norm {n})"
        )));
    }
    Ok(eval_unclamped(coeffs, degree, dir).map(|v| v.max(0.0)))
}

/// SH coefficient for a degree-0 color value.
#[inline]
pub fn dc_from_color(color: f64) -> f64 {
    (color - 0.5) / SH_C0
}

#[inline]
pub fn color_from_dc(dc: f64) -> f64 {
    dc * SH_C0 + 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(rng: &mut impl Rng) -> [f64; 3] {
        loop {
            let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 0.1 && n < 1.0 {
                return v.map(|x| x / n);
            }
        }
    }

    #[test]
    fn degree_zero_constant() {
        let mut c = [[0.0; 3]; NUM_COEFFS];
        c[0] = [1.0 / 0.282_094_79; 3];
        let a = sh_evaluate(&c, 0, [0.0, 0.0, 1.0]).unwrap();
        for v in a {
            assert!((v - 1.5).abs() < 1e-8);
        }
        let b = sh_evaluate(&c, 0, [0.6, 0.0, -0.8]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degree_one_matches_closed_form_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // Y_1m = ±sqrt(3 / 4π) * {y, z, x}, with the -,+,- sign pattern.
        let k = (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
        let y00 = 0.5 / std::f64::consts::PI.sqrt();
        for _ in 0..50 {
            let mut c = [[0.0; 3]; NUM_COEFFS];
            for row in c.iter_mut().take(4) {
                for v in row.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            let d = unit(&mut rng);
            let got = eval_unclamped(&c, 1, d);
            for ch in 0..3 {
                let want = 0.5 + y00 * c[0][ch] - k * d[1] * c[1][ch] + k * d[2] * c[2][ch]
                    - k * d[0] * c[3][ch];
                assert!((got[ch] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_unit_direction() {
        let c = [[0.0; 3]; NUM_COEFFS];
        assert!(sh_evaluate(&c, 0, [0.0, 0.0, 1.1]).is_err());
        assert!(sh_evaluate(&c, 4, [0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn clamps_below_zero() {
        let mut c = [[0.0; 3]; NUM_COEFFS];
        c[0] = [-10.0, 0.0, 10.0];
        let v = sh_evaluate(&c, 0, [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(v[0], 0.0);
        assert!(v[2] > 0.5);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = unit(&mut rng);
        let j = basis_jacobian(3, d);
        let h = 1e-6;
        for a in 0..3 {
            let mut p = d;
            let mut m = d;
            p[a] += h;
            m[a] -= h;
            let (bp, bm) = (basis(3, p), basis(3, m));
            for k in 0..NUM_COEFFS {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert!((fd - j[k][a]).abs() < 1e-8, "k={k} a={a}");
            }
        }
    }
}
