//! 8-bit sRGB PNG images and masks.

use std::path::Path;

use ::image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::image::ImageRGB;

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

pub fn decode_u8(v: u8) -> f64 {
    srgb_to_linear(v as f64 / 255.0)
}

pub fn encode_u8(c: f64) -> u8 {
    let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) };
    (linear_to_srgb(c) * 255.0).round() as u8
}

/// Linear image after an 8-bit sRGB round trip.
pub fn quantize(img: &ImageRGB) -> ImageRGB {
    ImageRGB {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|p| p.map(|c| decode_u8(encode_u8(c)))).collect(),
    }
}

pub fn to_rgb8(img: &ImageRGB) -> RgbImage {
    RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        Rgb(img.get(x as usize, y as usize).map(encode_u8))
    })
}

pub fn write_rgb(path: &Path, img: &ImageRGB) -> Result<()> {
    to_rgb8(img).save(path).map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })
}

pub fn read_rgb(path: &Path) -> Result<ImageRGB> {
    let img = ::image::open(path)
        .map_err(|e| Error::Image {
            path: path.into(),
            source: e,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(ImageRGB::from_fn(w, h, |x, y| img.get_pixel(x as u32, y as u32).0.map(decode_u8)))
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    GrayImage::from_fn(width as u32, height as u32, |x, y| {
        Luma([if mask[y as usize * width + x as usize] { 255 } else { 0 }])
    })
    .save(path)
    .map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })
}

pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = ::image::open(path)
        .map_err(|e| Error::Image {
            path: path.into(),
            source: e,
        })?
        .to_luma8();
    Ok((img.width() as usize, img.height() as usize, img.pixels().map(|p| p.0[0] >= 128).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_128() {
        assert!((decode_u8(128) - 0.21586).abs() < 1e-5);
        assert_eq!(decode_u8(0), 0.0);
        assert_eq!(decode_u8(255), 1.0);
    }

    #[test]
    fn encode_decode_identity_on_all_codes() {
        for v in 0..=255u8 {
            assert_eq!(encode_u8(decode_u8(v)), v);
        }
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageRGB::from_fn(5, 3, |x, y| [x as f64 / 4.0, y as f64 / 2.0, 0.3]);
        let p = dir.path().join("a.png");
        write_rgb(&p, &img).unwrap();
        assert_eq!(read_rgb(&p).unwrap(), quantize(&img));
        let mask: Vec<bool> = (0..15).map(|i| i % 3 == 0).collect();
        let m = dir.path().join("m.png");
        write_mask(&m, 5, 3, &mask).unwrap();
        assert_eq!(read_mask(&m).unwrap(), (5, 3, mask));
    }
}
