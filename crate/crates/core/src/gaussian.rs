//! The Gaussian primitive, its flat parameter layout, and the pure geometry
//! derived from it (rotation, covariance, normal).

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::sh::{ShCoeffs, NUM_COEFFS};

/// Offsets into the flat per-Gaussian parameter vector.
pub mod param {
    pub const POSITION: usize = 0;
    pub const ROTATION: usize = 3;
    pub const LOG_SCALE: usize = 7;
    pub const OPACITY: usize = 10;
    pub const SH: usize = 11;
    pub const REFLECTION: usize = 59;
    pub const COUNT: usize = 60;

    #[inline]
    pub const fn sh(coeff: usize, channel: usize) -> usize {
        SH + 3 * coeff + channel
    }
}

pub type ParamVec = [f64; param::COUNT];

/// Named parameter classes, used for learning rates, masking and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamClass {
    Position,
    Rotation,
    Scale,
    Opacity,
    ShDc,
    ShRest,
    Reflection,
}

impl ParamClass {
    pub const ALL: [ParamClass; 7] = [
        ParamClass::Position,
        ParamClass::Rotation,
        ParamClass::Scale,
        ParamClass::Opacity,
        ParamClass::ShDc,
        ParamClass::ShRest,
        ParamClass::Reflection,
    ];

    pub fn of_index(i: usize) -> ParamClass {
        match i {
            0..=2 => ParamClass::Position,
            3..=6 => ParamClass::Rotation,
            7..=9 => ParamClass::Scale,
            10 => ParamClass::Opacity,
            11..=13 => ParamClass::ShDc,
            14..=58 => ParamClass::ShRest,
            _ => ParamClass::Reflection,
        }
    }

    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            ParamClass::Position => 0..3,
            ParamClass::Rotation => 3..7,
            ParamClass::Scale => 7..10,
            ParamClass::Opacity => 10..11,
            ParamClass::ShDc => 11..14,
            ParamClass::ShRest => 14..59,
            ParamClass::Reflection => 59..60,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamClass::Position => "position",
            ParamClass::Rotation => "rotation",
            ParamClass::Scale => "scale",
            ParamClass::Opacity => "opacity",
            ParamClass::ShDc => "sh_dc",
            ParamClass::ShRest => "sh_rest",
            ParamClass::Reflection => "reflection_strength",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: [f64; 3],
    /// Quaternion `(w, x, y, z)`; kept unit length between optimizer steps.
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_raw: f64,
    pub sh: ShCoeffs,
    pub reflection_strength: f64,
}

impl Default for Gaussian {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [0.0; 3],
            opacity_raw: 0.0,
            sh: [[0.0; 3]; NUM_COEFFS],
            reflection_strength: 0.0,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Gaussian {
    #[inline]
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_raw)
    }

    pub fn set_opacity(&mut self, o: f64) {
        self.opacity_raw = logit(o);
    }

    #[inline]
    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn to_params(&self) -> ParamVec {
        let mut p = [0.0; param::COUNT];
        p[0..3].copy_from_slice(&self.position);
        p[3..7].copy_from_slice(&self.rotation);
        p[7..10].copy_from_slice(&self.log_scale);
        p[param::OPACITY] = self.opacity_raw;
        for k in 0..NUM_COEFFS {
            p[param::sh(k, 0)..param::sh(k, 0) + 3].copy_from_slice(&self.sh[k]);
        }
        p[param::REFLECTION] = self.reflection_strength;
        p
    }

    pub fn set_params(&mut self, p: &ParamVec) {
        self.position.copy_from_slice(&p[0..3]);
        self.rotation.copy_from_slice(&p[3..7]);
        self.log_scale.copy_from_slice(&p[7..10]);
        self.opacity_raw = p[param::OPACITY];
        for k in 0..NUM_COEFFS {
            self.sh[k].copy_from_slice(&p[param::sh(k, 0)..param::sh(k, 0) + 3]);
        }
        self.reflection_strength = p[param::REFLECTION];
    }

    pub fn from_params(p: &ParamVec) -> Self {
        let mut g = Gaussian::default();
        g.set_params(p);
        g
    }

    pub fn normalize_rotation(&mut self) {
        let n = quat_norm(&self.rotation);
        if n > 0.0 && n.is_finite() {
            self.rotation = self.rotation.map(|v| v / n);
        } else {
            self.rotation = [1.0, 0.0, 0.0, 0.0];
        }
    }

    /// Index of the shortest ellipsoid axis (lowest index on ties).
    pub fn shortest_axis(&self) -> usize {
        let mut k = 0;
        for a in 1..3 {
            if self.log_scale[a] < self.log_scale[k] {
                k = a;
            }
        }
        k
    }

    pub fn check(&self) -> Result<()> {
        let finite = self.to_params().iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("non-finite Gaussian parameter".into()));
        }
        if self.scale().iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument("scale must be positive and finite".into()));
        }
        Ok(())
    }
}

#[inline]
pub fn quat_norm(q: &[f64; 4]) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pull an upstream gradient on the rotation matrix back to the quaternion
/// components the matrix was built from (no normalization involved).
pub fn rotation_matrix_vjp(q: &[f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *q;
    let dw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    [dw, dx, dy, dz]
}

/// Gradient through `q -> q / |q|`.
pub fn normalize_vjp(q: &[f64; 4], g_unit: &[f64; 4]) -> [f64; 4] {
    let n = quat_norm(q);
    let u = q.map(|v| v / n);
    let dot = (0..4).map(|i| u[i] * g_unit[i]).sum::<f64>();
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (g_unit[i] - u[i] * dot) / n;
    }
    out
}

/// Unit quaternion of a (possibly unnormalized) stored rotation.
#[inline]
pub fn unit_quat(q: &[f64; 4]) -> [f64; 4] {
    let n = quat_norm(q);
    q.map(|v| v / n)
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn covariance_3d(g: &Gaussian) -> Matrix3<f64> {
    let r = rotation_matrix(&unit_quat(&g.rotation));
    let s = g.scale();
    let m = r * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], s[2]));
    m * m.transpose()
}

/// Shortest axis of the ellipsoid, flipped to face `cam_position`.
///
/// Returns the normal together with the axis index and the applied sign,
/// which the backward pass needs.
pub fn gaussian_normal_ext(g: &Gaussian, cam_position: [f64; 3]) -> ([f64; 3], usize, f64) {
    let r = rotation_matrix(&unit_quat(&g.rotation));
    let k = g.shortest_axis();
    let axis = [r[(0, k)], r[(1, k)], r[(2, k)]];
    let to_cam = [
        cam_position[0] - g.position[0],
        cam_position[1] - g.position[1],
        cam_position[2] - g.position[2],
    ];
    let dot = axis[0] * to_cam[0] + axis[1] * to_cam[1] + axis[2] * to_cam[2];
    let sign = if dot < 0.0 { -1.0 } else { 1.0 };
    (axis.map(|v| v * sign), k, sign)
}

pub fn gaussian_normal(g: &Gaussian, cam_position: [f64; 3]) -> [f64; 3] {
    gaussian_normal_ext(g, cam_position).0
}

/// Spherical region restricting which Gaussians may become reflective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereDomain {
    pub center: [f64; 3],
    pub radius: f64,
}

impl SphereDomain {
    pub fn new(center: [f64; 3], radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument("domain radius must be positive".into()));
        }
        Ok(Self { center, radius })
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d: f64 = (0..3).map(|i| (p[i] - self.center[i]).powi(2)).sum();
        d <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
    pub domain: Option<SphereDomain>,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        Self {
            gaussians,
            domain: None,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Whether Gaussian `i` may carry a nonzero reflection strength.
    pub fn reflection_allowed(&self, i: usize) -> bool {
        self.domain
            .map_or(true, |m| m.contains(self.gaussians[i].position))
    }

    pub fn reflective_count(&self, threshold: f64) -> usize {
        self.gaussians
            .iter()
            .filter(|g| g.reflection_strength > threshold)
            .count()
    }
}
