//! Dataset directory: one `transforms.json` camera file (horizontal field of
//! view plus per-frame camera-to-world matrices in the OpenGL convention),
//! sRGB PNG images, PFM normal maps and PNG masks.

use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::dataset::{Dataset, Split, View};
use crate::error::{Error, Result};
use crate::image::ImageRGB;
use crate::io::{pfm, png};

pub const CAMERA_FILE: &str = "transforms.json";
pub const ENV_GT_FILE: &str = "envmap_gt.pfm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformsFile {
    pub camera_angle_x: f64,
    /// Focal length in pixels; when present it takes precedence over the angle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<[f64; 3]>,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub file_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub transform_matrix: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

/// Camera-to-world matrix with y and z columns negated (OpenGL axes).
pub fn camera_to_gl_matrix(cam: &Camera) -> [[f64; 4]; 4] {
    let rt = cam.rotation.transpose();
    let mut m = [[0.0; 4]; 4];
    for r in 0..3 {
        m[r][0] = rt[(r, 0)];
        m[r][1] = -rt[(r, 1)];
        m[r][2] = -rt[(r, 2)];
        m[r][3] = cam.center[r];
    }
    m[3][3] = 1.0;
    m
}

pub fn camera_from_gl_matrix(m: &[[f64; 4]; 4], width: usize, height: usize, fx: f64) -> Result<Camera> {
    let mut rt = Matrix3::zeros();
    for r in 0..3 {
        rt[(r, 0)] = m[r][0];
        rt[(r, 1)] = -m[r][1];
        rt[(r, 2)] = -m[r][2];
    }
    Camera::new(width, height, fx, fx, rt.transpose(), [m[0][3], m[1][3], m[2][3]])
}

fn image_path(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_some() {
        p
    } else {
        p.with_extension("png")
    }
}

pub fn transforms_of(ds: &Dataset) -> Result<TransformsFile> {
    let first = ds.views.first().ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
    let fx = first.camera.fx;
    if ds.views.iter().any(|v| v.camera.fx != fx || v.camera.fy != fx) {
        return Err(Error::InvalidArgument("all views must share one square-pixel focal length".into()));
    }
    Ok(TransformsFile {
        camera_angle_x: first.camera.fov_x(),
        fl_x: Some(fx),
        w: Some(first.camera.width),
        h: Some(first.camera.height),
        background: Some(ds.background),
        frames: ds
            .views
            .iter()
            .map(|v| Frame {
                file_path: v.file_path.clone(),
                split: Some(v.split.name().into()),
                transform_matrix: camera_to_gl_matrix(&v.camera),
                normal_path: v.normals.as_ref().map(|_| format!("{}_normal.pfm", v.file_path)),
                mask_path: v.mask.as_ref().map(|_| format!("{}_mask.png", v.file_path)),
            })
            .collect(),
    })
}

pub fn transforms_to_string(t: &TransformsFile) -> String {
    let mut s = serde_json::to_string_pretty(t).expect("serializable");
    s.push('\n');
    s
}

fn create_parent(p: &Path) -> Result<()> {
    if let Some(parent) = p.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

/// Writes images, normals, masks and the camera file under `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let t = transforms_of(ds)?;
    for (v, f) in ds.views.iter().zip(&t.frames) {
        let img = image_path(dir, &f.file_path);
        create_parent(&img)?;
        png::write_rgb(&img, &v.image)?;
        if let (Some(n), Some(p)) = (&v.normals, &f.normal_path) {
            pfm::write(&dir.join(p), &pfm::from_f64(v.image.width, v.image.height, n))?;
        }
        if let (Some(m), Some(p)) = (&v.mask, &f.mask_path) {
            png::write_mask(&dir.join(p), v.image.width, v.image.height, m)?;
        }
    }
    let cam_file = dir.join(CAMERA_FILE);
    std::fs::write(&cam_file, transforms_to_string(&t)).map_err(|e| Error::io(&cam_file, e))
}

pub fn parse_transforms(text: &str, path: &Path) -> Result<TransformsFile> {
    serde_json::from_str(text).map_err(|e| Error::parse(path, format!("camera file: {e}")))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let cam_file = dir.join(CAMERA_FILE);
    let text = std::fs::read_to_string(&cam_file).map_err(|e| Error::io(&cam_file, e))?;
    let t = parse_transforms(&text, &cam_file)?;
    let mut views = Vec::with_capacity(t.frames.len());
    for (i, f) in t.frames.iter().enumerate() {
        let field = |name: &str, msg: String| Error::parse(&cam_file, format!("frames[{i}].{name}: {msg}"));
        let img_path = image_path(dir, &f.file_path);
        let image: ImageRGB = png::read_rgb(&img_path)?;
        let (w, h) = (image.width, image.height);
        let fx = match t.fl_x {
            Some(fx) => fx,
            None => 0.5 * w as f64 / (0.5 * t.camera_angle_x).tan(),
        };
        if f.transform_matrix.iter().flatten().any(|v| !v.is_finite()) {
            return Err(field("transform_matrix", "non-finite entry".into()));
        }
        let camera = camera_from_gl_matrix(&f.transform_matrix, w, h, fx)
            .map_err(|e| field("transform_matrix", e.to_string()))?;
        let split = parse_split(f.split.as_deref()).map_err(|m| field("split", m))?;
        let normals = match &f.normal_path {
            Some(p) => {
                let n = pfm::read(&dir.join(p))?;
                if n.width != w || n.height != h {
                    return Err(field("normal_path", "normal map size differs from image".into()));
                }
                Some(pfm::to_f64(&n))
            }
            None => None,
        };
        let mask = match &f.mask_path {
            Some(p) => {
                let (mw, mh, m) = png::read_mask(&dir.join(p))?;
                if mw != w || mh != h {
                    return Err(field("mask_path", "mask size differs from image".into()));
                }
                Some(m)
            }
            None => None,
        };
        views.push(View {
            camera,
            image,
            normals,
            mask,
            split,
            file_path: f.file_path.clone(),
        });
    }
    Dataset::new(views, t.background.unwrap_or([0.0; 3]))
}

/// A camera listed in a camera file, without its image.
#[derive(Debug, Clone)]
pub struct CameraEntry {
    pub camera: Camera,
    pub split: Split,
    pub file_path: String,
}

fn parse_split(s: Option<&str>) -> std::result::Result<Split, String> {
    match s {
        None | Some("train") => Ok(Split::Train),
        Some("test") => Ok(Split::Test),
        Some(s) => Err(format!("unknown split {s:?}")),
    }
}

/// Cameras and background from a camera file that records the image size.
pub fn load_cameras(path: &Path) -> Result<(Vec<CameraEntry>, [f64; 3])> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let t = parse_transforms(&text, path)?;
    let (w, h) = match (t.w, t.h) {
        (Some(w), Some(h)) => (w, h),
        _ => return Err(Error::parse(path, "camera file lacks image size fields `w`/`h`")),
    };
    let fx = t.fl_x.unwrap_or_else(|| 0.5 * w as f64 / (0.5 * t.camera_angle_x).tan());
    let cams = t
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let field = |name: &str, msg: String| Error::parse(path, format!("frames[{i}].{name}: {msg}"));
            Ok(CameraEntry {
                camera: camera_from_gl_matrix(&f.transform_matrix, w, h, fx)
                    .map_err(|e| field("transform_matrix", e.to_string()))?,
                split: parse_split(f.split.as_deref()).map_err(|m| field("split", m))?,
                file_path: f.file_path.clone(),
            })
        })
        .collect::<Result<_>>()?;
    Ok((cams, t.background.unwrap_or([0.0; 3])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_matrix_roundtrip_is_exact() {
        let cam = Camera::look_at(32, 32, 0.7, [1.0, -3.0, 2.0], [0.1, 0.2, 0.0], [0.0, 0.0, 1.0]).unwrap();
        let m = camera_to_gl_matrix(&cam);
        let back = camera_from_gl_matrix(&m, 32, 32, cam.fx).unwrap();
        assert_eq!(back, cam);
        // OpenGL camera looks down its -z column.
        let fwd = cam.rotation.row(2);
        for r in 0..3 {
            assert_eq!(m[r][2], -fwd[r]);
        }
    }

    #[test]
    fn garbled_camera_file_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(CAMERA_FILE), "{\"camera_angle_x\": 0.5, \"frames\": [{\"file_path\": 3}]}").unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains(CAMERA_FILE), "{err}");
        assert!(err.contains("file_path") || err.contains("invalid type"), "{err}");
        assert!(load_dataset(&dir.path().join("missing")).is_err());
    }
}
