//! Flat raster container used for every on-disk matrix, plus a 16-bit
//! PGM export for eyeballing results.
//!
//! Layout: `"ENSR"` magic, then height, width and a caller-owned tag as
//! little-endian u32, then the row-major payload as little-endian f64.
//! Complex rasters store interleaved (re, im) pairs. The payload length
//! is validated against the header on read, which is also how a real
//! raster is told apart from a complex one.

use crate::error::{Error, Result};
use crate::image::Image;
use num_complex::Complex64;
use std::fs;
use std::io::Write as _;
use std::path::Path;

const MAGIC: &[u8; 4] = b"ENSR";

fn header(h: usize, w: usize, tag: u32) -> Result<[u8; 16]> {
    let hh = u32::try_from(h).map_err(|_| Error::Container(format!("height {} too large", h)))?;
    let ww = u32::try_from(w).map_err(|_| Error::Container(format!("width {} too large", w)))?;
    let mut b = [0u8; 16];
    b[0..4].copy_from_slice(MAGIC);
    b[4..8].copy_from_slice(&hh.to_le_bytes());
    b[8..12].copy_from_slice(&ww.to_le_bytes());
    b[12..16].copy_from_slice(&tag.to_le_bytes());
    Ok(b)
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<(usize, usize, u32)> {
    if bytes.len() < 16 {
        return Err(Error::Container(format!(
            "{}: truncated header ({} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Container(format!(
            "{}: bad magic {:?}",
            path.display(),
            &bytes[0..4]
        )));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let tag = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if h == 0 || w == 0 {
        return Err(Error::Container(format!(
            "{}: zero dimension {}x{}",
            path.display(),
            h,
            w
        )));
    }
    Ok((h, w, tag))
}

pub fn write_real(path: &Path, img: &Image, tag: u32) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + img.data().len() * 8);
    buf.extend_from_slice(&header(img.h(), img.w(), tag)?);
    for v in img.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_real(path: &Path) -> Result<(Image, u32)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let (h, w, tag) = parse_header(path, &bytes)?;
    let want = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Container("dimension overflow".into()))?;
    if bytes.len() - 16 != want {
        return Err(Error::Container(format!(
            "{}: payload is {} bytes, {}x{} real raster needs {}",
            path.display(),
            bytes.len() - 16,
            h,
            w,
            want
        )));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Image::new(h, w, data)?, tag))
}

pub fn write_complex(path: &Path, h: usize, w: usize, data: &[Complex64], tag: u32) -> Result<()> {
    if data.len() != h * w {
        return Err(Error::Shape(format!(
            "complex buffer holds {} samples, expected {}",
            data.len(),
            h * w
        )));
    }
    let mut buf = Vec::with_capacity(16 + data.len() * 16);
    buf.extend_from_slice(&header(h, w, tag)?);
    for v in data {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_complex(path: &Path) -> Result<(usize, usize, Vec<Complex64>, u32)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let (h, w, tag) = parse_header(path, &bytes)?;
    let want = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(16))
        .ok_or_else(|| Error::Container("dimension overflow".into()))?;
    if bytes.len() - 16 != want {
        return Err(Error::Container(format!(
            "{}: payload is {} bytes, {}x{} complex raster needs {}",
            path.display(),
            bytes.len() - 16,
            h,
            w,
            want
        )));
    }
    let data = bytes[16..]
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
            )
        })
        .collect();
    Ok((h, w, data, tag))
}

/// 16-bit binary PGM (`P5`, maxval 65535, big-endian samples). The image
/// range is mapped affinely onto 0..=65535; a constant image writes zeros.
pub fn write_pgm16(path: &Path, img: &Image) -> Result<()> {
    let (lo, hi) = img.min_max();
    let scale = if hi > lo { 65535.0 / (hi - lo) } else { 0.0 };
    let mut buf = Vec::with_capacity(32 + img.data().len() * 2);
    write!(&mut buf, "P5\n{} {}\n65535\n", img.w(), img.h())
        .expect("in-memory write cannot fail");
    for &v in img.data() {
        let q = ((v - lo) * scale).round().clamp(0.0, 65535.0) as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, &buf).map_err(|e| Error::io(path.display().to_string(), e))
}
