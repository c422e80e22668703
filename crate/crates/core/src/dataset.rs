//! In-memory multi-view dataset: cameras, target images and optional
//! ground-truth normals and masks.

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::ImageRGB;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct View {
    pub camera: Camera,
    pub image: ImageRGB,
    pub normals: Option<Vec<[f64; 3]>>,
    pub mask: Option<Vec<bool>>,
    pub split: Split,
    /// Relative image path as referenced by the camera file.
    pub file_path: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub views: Vec<View>,
    pub background: [f64; 3],
}

impl Dataset {
    pub fn new(views: Vec<View>, background: [f64; 3]) -> Result<Self> {
        let ds = Self { views, background };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.views.first() else {
            return Ok(());
        };
        let (w, h) = (first.image.width, first.image.height);
        for (i, v) in self.views.iter().enumerate() {
            if v.image.width != w || v.image.height != h {
                return Err(Error::Dimension(format!("view {i}: image size differs from view 0")));
            }
            if v.camera.width != w || v.camera.height != h {
                return Err(Error::Dimension(format!("view {i}: camera size differs from its image")));
            }
            v.camera.validate()?;
            if v.normals.as_ref().is_some_and(|n| n.len() != w * h) || v.mask.as_ref().is_some_and(|m| m.len() != w * h) {
                return Err(Error::Dimension(format!("view {i}: normal map or mask has the wrong size")));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &View> {
        self.views.iter().filter(move |v| v.split == split)
    }

    pub fn train(&self) -> Vec<&View> {
        self.split(Split::Train).collect()
    }

    pub fn test(&self) -> Vec<&View> {
        self.split(Split::Test).collect()
    }

    /// Radius of the camera centers around their mean, times 1.1.
    pub fn camera_extent(&self) -> f64 {
        if self.views.is_empty() {
            return 1.0;
        }
        let n = self.views.len() as f64;
        let mut mean = [0.0; 3];
        for v in &self.views {
            for a in 0..3 {
                mean[a] += v.camera.center[a] / n;
            }
        }
        let r = self
            .views
            .iter()
            .map(|v| (0..3).map(|a| (v.camera.center[a] - mean[a]).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        1.1 * r.max(1e-6)
    }
}
