//! Binary PGM (P5) reading and writing.
//!
//! Chips are stored as 16-bit PGM with maxval 65535, most significant
//! byte first per the format. Loading normalizes samples to `[0, 1]`;
//! 8-bit files are accepted on read. All writes go through a temp file
//! and rename so readers never observe partial images.

use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

/// Writes `bytes` atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Quantizes a unit-interval value to the 16-bit sample grid.
pub fn quantize(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Writes a grayscale image of unit-interval values as 16-bit PGM.
pub fn write_pgm(path: &Path, height: usize, width: usize, pixels: &[f32]) -> Result<()> {
    if pixels.len() != height * width {
        return Err(Error::ShapeMismatch {
            op: "pgm write",
            expected: format!("{} pixels for {width}x{height}", height * width),
            got: format!("{}", pixels.len()),
        });
    }
    let mut bytes = format!("P5\n{width} {height}\n65535\n").into_bytes();
    bytes.reserve(pixels.len() * 2);
    for &v in pixels {
        bytes.extend_from_slice(&quantize(v).to_be_bytes());
    }
    atomic_write(path, &bytes)
}

/// Reads a binary PGM into `(height, width, unit-interval pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let header_err = |pos: usize, detail: &str| Error::PgmHeader {
        path: path.to_path_buf(),
        offset: pos,
        detail: detail.to_string(),
    };

    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(header_err(0, "missing P5 magic"));
    }
    pos = 2;
    let mut fields = [0usize; 3]; // width, height, maxval
    for field in &mut fields {
        *field = read_header_int(&bytes, &mut pos, path)?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(header_err(pos, "expected whitespace before pixel raster")),
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if width == 0 || height == 0 {
        return Err(header_err(pos, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(header_err(pos, "maxval must be in 1..=65535"));
    }
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let expected = width * height * bytes_per;
    let got = bytes.len() - pos;
    if got < expected {
        return Err(Error::PgmTruncated {
            path: path.to_path_buf(),
            offset: pos,
            expected,
            got,
        });
    }
    let raster = &bytes[pos..pos + expected];
    let scale = 1.0 / maxval as f32;
    let pixels = if bytes_per == 1 {
        raster.iter().map(|&b| b as f32 * scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 * scale)
            .collect()
    };
    Ok((height, width, pixels))
}

/// Reads one whitespace-delimited decimal, skipping `#` comments.
fn read_header_int(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while matches!(bytes.get(*pos), Some(b) if b.is_ascii_digit()) {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::PgmHeader {
            path: path.to_path_buf(),
            offset: start,
            detail: "expected a decimal header field".to_string(),
        });
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::PgmHeader {
            path: path.to_path_buf(),
            offset: start,
            detail: "header field does not fit usize".to_string(),
        })
}
