//! Pinhole camera and EWA projection of Gaussians to screen space.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::gaussian::{covariance_3d, Gaussian};

/// Isotropic screen-space dilation added to every projected covariance (px²).
pub const COV2D_DILATION: f64 = 0.3;
/// Gaussians closer than this (camera-space z) are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// Pinhole camera. Camera space follows the x-right, y-down, z-forward
/// convention; `rotation` maps world directions into camera space and
/// `center` is the camera position in world space.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub center: [f64; 3],
}

impl Camera {
    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        rotation: Matrix3<f64>,
        center: [f64; 3],
    ) -> Result<Self> {
        let cam = Self {
            width,
            height,
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            center,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; `up` is the approximate world up.
    pub fn look_at(
        width: usize,
        height: usize,
        fov_x: f64,
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
    ) -> Result<Self> {
        let eye_v = Vector3::from(eye);
        let fwd = (Vector3::from(target) - eye_v).normalize();
        let right = fwd.cross(&Vector3::from(up));
        if right.norm() < 1e-9 {
            return Err(Error::InvalidArgument("look_at: up parallel to view direction".into()));
        }
        let right = right.normalize();
        // y points down in camera space.
        let down = fwd.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Camera::new(width, height, f, f, rotation, eye)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("camera has zero-sized image".into()));
        }
        let rtr = self.rotation.transpose() * self.rotation;
        if (rtr - Matrix3::identity()).abs().max() > 1e-6 {
            return Err(Error::InvalidArgument("camera rotation is not orthonormal".into()));
        }
        let finite = self.center.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("non-finite camera pose".into()));
        }
        Ok(())
    }

    pub fn fov_x(&self) -> f64 {
        2.0 * (0.5 * self.width as f64 / self.fx).atan()
    }

    #[inline]
    pub fn world_to_camera(&self, p: [f64; 3]) -> Vector3<f64> {
        self.rotation * (Vector3::from(p) - Vector3::from(self.center))
    }

    /// Unit world-space direction of the ray through the center of pixel `(x, y)`.
    pub fn pixel_ray(&self, x: usize, y: usize) -> [f64; 3] {
        let d = Vector3::new(
            (x as f64 + 0.5 - self.cx) / self.fx,
            (y as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        );
        let w = (self.rotation.transpose() * d).normalize();
        [w.x, w.y, w.z]
    }

    /// Pinhole projection of a world point; `None` behind the near plane.
    pub fn project_point(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let c = self.world_to_camera(p);
        if c.z <= NEAR_PLANE {
            return None;
        }
        Some([self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy])
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mean2d: [f64; 2],
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
}

/// Intermediate values of the projection kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ProjectionCache {
    pub p_cam: Vector3<f64>,
    pub jac: Matrix2x3<f64>,
    /// `rotation * Σ * rotationᵀ` (covariance in camera space).
    pub cov_cam: Matrix3<f64>,
}

pub(crate) fn project_with_cache(g: &Gaussian, cam: &Camera) -> Option<(Projection, ProjectionCache)> {
    let p_cam = cam.world_to_camera(g.position);
    let z = p_cam.z;
    if !(z > NEAR_PLANE) {
        return None;
    }
    let (x, y) = (p_cam.x, p_cam.y);
    let jac = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let cov_cam = cam.rotation * covariance_3d(g) * cam.rotation.transpose();
    let mut cov2d = jac * cov_cam * jac.transpose();
    cov2d[(0, 0)] += COV2D_DILATION;
    cov2d[(1, 1)] += COV2D_DILATION;
    // Exact symmetry keeps the conic and extents stable.
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    let mean2d = [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy];
    Some((
        Projection {
            mean2d,
            cov2d,
            depth: z,
        },
        ProjectionCache { p_cam, jac, cov_cam },
    ))
}

/// EWA projection; `None` is the culled marker for Gaussians behind the near plane.
pub fn project_gaussian(g: &Gaussian, cam: &Camera) -> Option<Projection> {
    project_with_cache(g, cam).map(|(p, _)| p)
}

/// Backward of [`project_with_cache`]: upstream gradients on the 2D mean and on
/// the (full, symmetric) 2D covariance to gradients on the world position and
/// the camera-space 3D covariance.
pub(crate) fn project_vjp(
    cam: &Camera,
    cache: &ProjectionCache,
    d_mean: Vector2<f64>,
    d_cov2d: &Matrix2<f64>,
) -> (Vector3<f64>, Matrix3<f64>) {
    let ProjectionCache { p_cam, jac, cov_cam } = cache;
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    // cov2d = J C Jᵀ: dC = Jᵀ G J, dJ = 2 G J C (G symmetric).
    let d_cov_cam = jac.transpose() * d_cov2d * jac;
    let d_jac = 2.0 * d_cov2d * jac * cov_cam;

    let (fx, fy) = (cam.fx, cam.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut d_pc = jac.transpose() * d_mean;
    // J = [[fx/z, 0, -fx x/z²], [0, fy/z, -fy y/z²]]
    d_pc.x += d_jac[(0, 2)] * (-fx / z2);
    d_pc.y += d_jac[(1, 2)] * (-fy / z2);
    d_pc.z += d_jac[(0, 0)] * (-fx / z2)
        + d_jac[(0, 2)] * (2.0 * fx * x / z3)
        + d_jac[(1, 1)] * (-fy / z2)
        + d_jac[(1, 2)] * (2.0 * fy * y / z3);
    let d_world = cam.rotation.transpose() * d_pc;
    let d_cov_world = cam.rotation.transpose() * d_cov_cam * cam.rotation;
    (d_world, d_cov_world)
}
