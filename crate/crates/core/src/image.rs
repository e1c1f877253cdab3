//! Dense 2D grids, fisheye views and the PGM / PFM file formats.

use crate::error::{Error, Result};
use crate::Scalar;
use std::io::Write;
use std::path::Path;

/// Row-major `width × height` grid with a per-cell validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Map2<T> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
    pub valid: Vec<bool>,
}

impl<T: Copy> Map2<T> {
    pub fn filled(width: usize, height: usize, value: T, valid: bool) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
            valid: vec![valid; width * height],
        }
    }

    pub fn from_parts(width: usize, height: usize, values: Vec<T>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::Config(format!(
                "map buffers ({}, {}) do not match {width}x{height}",
                values.len(),
                valid.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    #[inline]
    pub fn idx(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> T {
        self.values[self.idx(col, row)]
    }

    #[inline]
    pub fn is_valid(&self, col: usize, row: usize) -> bool {
        self.valid[self.idx(col, row)]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape<U>(&self, other: &Map2<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Grayscale fisheye image with a validity mask (the lens FoV circle).
pub type GrayImage<T> = Map2<T>;

/// Writes an 8-bit binary PGM. Values are clamped to `[0, 1]` and rounded;
/// camera row 0 is written last so that camera `+y` points up on screen.
pub fn write_pgm<T: Scalar>(path: &Path, img: &Map2<T>) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    for row in (0..img.height).rev() {
        for col in 0..img.width {
            let v = img.get(col, row).as_f64().clamp(0.0, 1.0);
            buf.push((v * 255.0).round() as u8);
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a binary 8-bit PGM written by [`write_pgm`]; every pixel is valid.
pub fn read_pgm<T: Scalar>(path: &Path) -> Result<Map2<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, body) = parse_header(&bytes, 4).ok_or_else(|| Error::format(path, "malformed PGM header"))?;
    if header[0] != "P5" {
        return Err(Error::format(path, "not a binary PGM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, "bad PGM header field"));
    let (w, h, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
    if maxval != 255 {
        return Err(Error::format(path, "only 8-bit PGM is supported"));
    }
    if body.len() != w * h {
        return Err(Error::format(path, "PGM payload size mismatch"));
    }
    let mut values = vec![T::zero(); w * h];
    let scale = T::lit(1.0 / 255.0);
    for (i, &b) in body.iter().enumerate() {
        let (r, c) = (h - 1 - i / w, i % w);
        values[r * w + c] = T::from_u8(b).unwrap() * scale;
    }
    Ok(Map2 {
        width: w,
        height: h,
        values,
        valid: vec![true; w * h],
    })
}

/// Writes a little-endian grayscale PFM. PFM stores rows bottom-up, which
/// matches the ERP convention (row 0 = south). Invalid cells are written as
/// `NaN` so the mask survives a round trip.
pub fn write_pfm<T: Scalar>(path: &Path, map: &Map2<T>) -> Result<()> {
    let mut buf = format!("Pf\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    buf.reserve(map.len() * 4);
    for (v, &ok) in map.values.iter().zip(&map.valid) {
        let f = if ok { v.as_f64() as f32 } else { f32::NAN };
        buf.extend_from_slice(&f.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_pfm<T: Scalar>(path: &Path) -> Result<Map2<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, body) = parse_header(&bytes, 4).ok_or_else(|| Error::format(path, "malformed PFM header"))?;
    if header[0] != "Pf" {
        return Err(Error::format(path, "not a grayscale PFM"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, "bad PFM size"));
    let (w, h) = (parse(&header[1])?, parse(&header[2])?);
    let scale: f64 = header[3].parse().map_err(|_| Error::format(path, "bad PFM scale"))?;
    if scale >= 0.0 {
        return Err(Error::format(path, "big-endian PFM is not supported"));
    }
    if body.len() != w * h * 4 {
        return Err(Error::format(path, "PFM payload size mismatch"));
    }
    let (values, valid) = body
        .chunks_exact(4)
        .map(|c| {
            let f = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if f.is_nan() {
                (T::zero(), false)
            } else {
                (T::from_f32(f).unwrap(), true)
            }
        })
        .unzip();
    Ok(Map2 {
        width: w,
        height: h,
        values,
        valid,
    })
}

/// Splits a netpbm-style header of `fields` whitespace-separated tokens from
/// the binary payload, which starts after exactly one whitespace byte.
fn parse_header(bytes: &[u8], fields: usize) -> Option<(Vec<String>, &[u8])> {
    let mut tokens = Vec::with_capacity(fields);
    let mut i = 0;
    while tokens.len() < fields {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return if tokens.len() == fields { Some((tokens, &bytes[bytes.len()..])) } else { None };
    }
    Some((tokens, &bytes[i + 1..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = Map2::from_parts(3, 2, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1], vec![true; 6]).unwrap();
        write_pgm(&path, &img).unwrap();
        let back: Map2<f64> = read_pgm(&path).unwrap();
        assert_eq!(back.width, 3);
        for (a, b) in img.values.iter().zip(&back.values) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn pfm_round_trip_keeps_mask() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pfm");
        let map = Map2::from_parts(2, 2, vec![1.5f64, 2.0, 0.0, 7.25], vec![true, false, true, true]).unwrap();
        write_pfm(&path, &map).unwrap();
        let back: Map2<f64> = read_pfm(&path).unwrap();
        assert_eq!(back.valid, map.valid);
        assert_eq!(back.values, vec![1.5, 0.0, 0.0, 7.25]);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfm");
        std::fs::write(&path, b"P6\n1 1\n255\n\0\0\0").unwrap();
        assert!(read_pfm::<f64>(&path).is_err());
        assert!(read_pgm::<f64>(&path).is_err());
    }
}
