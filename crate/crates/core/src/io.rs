//! Binary PGM, PFM and raw-grid readers/writers.
//!
//! PGM is `P5` with maxval 255. Depth goes to single-channel `Pf` files with
//! scale −1.0 (little-endian) and rows stored bottom-up; the flip happens
//! here so callers always see top-down rasters.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::raster::Raster;

#[derive(thiserror::Error, Debug)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed header: {reason}")]
    Header { path: PathBuf, reason: String },
    #[error("{path}: payload is {actual} bytes, header implies {expected}")]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    }
}

fn header_err(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::Header {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(fs_err(path))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(fs_err(parent))?;
        }
    }
    let file = fs::File::create(path).map_err(fs_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(fs_err(path))?;
    w.flush().map_err(fs_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Sidecar path for a data file: the full file name with `.json` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

/// Splits the next whitespace-delimited header token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

fn parse_token<T: std::str::FromStr>(path: &Path, bytes: &[u8], pos: &mut usize, what: &str) -> Result<T, IoError> {
    let tok = next_token(bytes, pos).ok_or_else(|| header_err(path, format!("missing {what}")))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| header_err(path, format!("bad {what}")))
}

pub fn encode_pgm(img: &Raster<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<Raster<u8>, IoError> {
    let mut pos = 0;
    if next_token(bytes, &mut pos) != Some(b"P5") {
        return Err(header_err(path, "expected P5 magic"));
    }
    let width: usize = parse_token(path, bytes, &mut pos, "width")?;
    let height: usize = parse_token(path, bytes, &mut pos, "height")?;
    let maxval: u32 = parse_token(path, bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(header_err(path, format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the payload
    let payload = &bytes[(pos + 1).min(bytes.len())..];
    let expected = width * height;
    if payload.len() != expected {
        return Err(IoError::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: payload.len(),
        });
    }
    Ok(Raster::from_vec(width, height, payload.to_vec()))
}

pub fn write_pgm(path: &Path, img: &Raster<u8>) -> Result<(), IoError> {
    write_bytes(path, &encode_pgm(img))
}

pub fn read_pgm(path: &Path) -> Result<Raster<u8>, IoError> {
    decode_pgm(path, &read_bytes(path)?)
}

pub fn encode_pfm(img: &Raster<f32>) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", img.width(), img.height()).into_bytes();
    out.reserve(img.width() * img.height() * 4);
    for y in (0..img.height()).rev() {
        for &v in img.row(y) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(path: &Path, bytes: &[u8]) -> Result<Raster<f32>, IoError> {
    let mut pos = 0;
    if next_token(bytes, &mut pos) != Some(b"Pf") {
        return Err(header_err(path, "expected single-channel Pf magic"));
    }
    let width: usize = parse_token(path, bytes, &mut pos, "width")?;
    let height: usize = parse_token(path, bytes, &mut pos, "height")?;
    let scale: f64 = parse_token(path, bytes, &mut pos, "scale")?;
    if scale == 0.0 {
        return Err(header_err(path, "zero scale"));
    }
    let little = scale < 0.0;
    let payload = &bytes[(pos + 1).min(bytes.len())..];
    let expected = width * height * 4;
    if payload.len() != expected {
        return Err(IoError::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: payload.len(),
        });
    }
    let mut data = vec![0f32; width * height];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (x, y_file) = (i % width, i / width);
        data[(height - 1 - y_file) * width + x] = v;
    }
    Ok(Raster::from_vec(width, height, data))
}

pub fn write_pfm(path: &Path, img: &Raster<f32>) -> Result<(), IoError> {
    write_bytes(path, &encode_pfm(img))
}

pub fn read_pfm(path: &Path) -> Result<Raster<f32>, IoError> {
    decode_pfm(path, &read_bytes(path)?)
}

/// Little-endian f32 grid, row-major, no header.
pub fn encode_raw_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_raw_f32(path: &Path, bytes: &[u8], count: usize) -> Result<Vec<f32>, IoError> {
    if bytes.len() != count * 4 {
        return Err(IoError::SizeMismatch {
            path: path.to_path_buf(),
            expected: count * 4,
            actual: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Little-endian u16 grid, row-major, no header.
pub fn encode_raw_u16(values: &[u16]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_raw_u16(path: &Path, bytes: &[u8], count: usize) -> Result<Vec<u16>, IoError> {
    if bytes.len() != count * 2 {
        return Err(IoError::SizeMismatch {
            path: path.to_path_buf(),
            expected: count * 2,
            actual: bytes.len(),
        });
    }
    Ok(bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
}
