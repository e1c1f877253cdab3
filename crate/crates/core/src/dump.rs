//! Raw tensor dumps for debugging: one text header line followed by
//! little-endian `f32` values.
//!
//! Header: `f32le shape=2,32,64,128 order=C,D,H,W`.

use crate::error::{Error, Result};
use crate::Scalar;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Dump {
    pub shape: Vec<usize>,
    pub order: Vec<String>,
    pub data: Vec<f32>,
}

pub fn write_dump<T: Scalar>(path: &Path, shape: &[usize], order: &[&str], data: &[T]) -> Result<()> {
    if shape.len() != order.len() || shape.iter().product::<usize>() != data.len() {
        return Err(Error::Config(format!(
            "dump shape {shape:?} / order {order:?} does not match {} values",
            data.len()
        )));
    }
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let mut buf = format!("f32le shape={} order={}\n", dims.join(","), order.join(",")).into_bytes();
    buf.reserve(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

pub fn read_dump(path: &Path) -> Result<Dump> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rd = BufReader::new(file);
    let mut header = String::new();
    rd.read_line(&mut header).map_err(|e| Error::io(path, e))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("f32le") {
        return Err(Error::format(path, "missing f32le tag"));
    }
    let field = |p: Option<&str>, key: &str| -> Result<Vec<String>> {
        p.and_then(|s| s.strip_prefix(key))
            .map(|s| s.split(',').map(str::to_string).collect())
            .ok_or_else(|| Error::format(path, format!("missing `{key}` field")))
    };
    let shape = field(parts.next(), "shape=")?
        .iter()
        .map(|s| s.parse::<usize>().map_err(|_| Error::format(path, "bad shape")))
        .collect::<Result<Vec<_>>>()?;
    let order = field(parts.next(), "order=")?;
    let mut bytes = Vec::new();
    rd.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let n: usize = shape.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::format(path, format!("expected {} bytes, found {}", n * 4, bytes.len())));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Dump { shape, order, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.bin");
        let data: Vec<f64> = (0..24).map(|i| i as f64 * 0.25 - 1.0).collect();
        write_dump(&p, &[2, 3, 4], &["P", "H", "W"], &data).unwrap();
        let d = read_dump(&p).unwrap();
        assert_eq!(d.shape, vec![2, 3, 4]);
        assert_eq!(d.order, vec!["P", "H", "W"]);
        assert_eq!(d.data.iter().map(|&v| v as f64).collect::<Vec<_>>(), data);
        let text = std::fs::read(&p).unwrap();
        assert!(text.starts_with(b"f32le shape=2,3,4 order=P,H,W\n"));
    }

    #[test]
    fn shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_dump(&dir.path().join("x"), &[2, 2], &["H", "W"], &[0.0f64; 3]).is_err());
    }
}
