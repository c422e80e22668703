//! Portable float map (color `PF` variant), rows stored bottom to top.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub data: Vec<[f32; 3]>,
}

pub fn encode(p: &Pfm) -> Vec<u8> {
    let mut out = format!("PF\n{} {}\n-1.0\n", p.width, p.height).into_bytes();
    out.reserve(p.width * p.height * 12);
    for row in (0..p.height).rev() {
        for px in &p.data[row * p.width..(row + 1) * p.width] {
            for c in px {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    out
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| std::str::from_utf8(&bytes[start..*pos]).ok()).flatten()
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Pfm> {
    let err = |m: &str| Error::parse(path, format!("PFM: {m}"));
    let mut pos = 0;
    if header_token(bytes, &mut pos) != Some("PF") {
        return Err(err("expected color PFM magic `PF`"));
    }
    let width: usize = header_token(bytes, &mut pos).and_then(|t| t.parse().ok()).ok_or_else(|| err("bad width"))?;
    let height: usize = header_token(bytes, &mut pos).and_then(|t| t.parse().ok()).ok_or_else(|| err("bad height"))?;
    let scale: f64 = header_token(bytes, &mut pos).and_then(|t| t.parse().ok()).ok_or_else(|| err("bad scale"))?;
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * 12;
    let raster = bytes.get(pos..).filter(|r| r.len() >= need).ok_or_else(|| err("truncated raster"))?;
    let little = scale < 0.0;
    let mut data = vec![[0f32; 3]; width * height];
    for (i, chunk) in raster[..need].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (px, c) = (i / 3, i % 3);
        let (row_from_bottom, col) = (px / width, px % width);
        data[(height - 1 - row_from_bottom) * width + col][c] = v;
    }
    Ok(Pfm { width, height, data })
}

pub fn write(path: &Path, p: &Pfm) -> Result<()> {
    std::fs::write(path, encode(p)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Pfm> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn from_f64(width: usize, height: usize, data: &[[f64; 3]]) -> Pfm {
    Pfm {
        width,
        height,
        data: data.iter().map(|p| p.map(|c| c as f32)).collect(),
    }
}

pub fn to_f64(p: &Pfm) -> Vec<[f64; 3]> {
    p.data.iter().map(|px| px.map(f64::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_orientation() {
        let p = Pfm {
            width: 3,
            height: 2,
            data: (0..6).map(|i| [i as f32, -(i as f32), 0.5]).collect(),
        };
        let bytes = encode(&p);
        assert!(bytes.starts_with(b"PF\n3 2\n-1.0\n"));
        // First stored row is the bottom one.
        let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        assert_eq!(first, 3.0);
        assert_eq!(decode(&bytes, Path::new("x")).unwrap(), p);
    }

    #[test]
    fn truncated_is_an_error() {
        let p = Pfm {
            width: 4,
            height: 4,
            data: vec![[1.0; 3]; 16],
        };
        let bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(decode(b"P6\n1 1\n", Path::new("x")).is_err());
    }
}
