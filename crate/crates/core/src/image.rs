//! Linear-space float images.

use crate::error::{Error, Result};

/// Row-major linear RGB image with `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl ImageRGB {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f64; 3]) {
        self.data[y * self.width + x] = v;
    }

    pub fn num_samples(&self) -> usize {
        self.data.len() * 3
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }

    pub fn same_dims(&self, other: &ImageRGB) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Single channel as a dense row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().map(|p| p[c]).collect()
    }

    pub fn max_abs_diff(&self, other: &ImageRGB) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
            .fold(0.0, f64::max)
    }
}
