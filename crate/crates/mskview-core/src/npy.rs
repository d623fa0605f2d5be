//! Minimal NPY v1.0 container support for the volume files on disk.
//!
//! Only what the dataset layout needs: C-order unsigned 8-bit 3-D arrays.
//! The writer emits a fixed, 64-byte-aligned v1.0 header so that identical
//! arrays always produce identical bytes.

use ndarray::Array3;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Error)]
pub enum NpyError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not an NPY v1.0 file at {path}: {reason}")]
    BadHeader { path: String, reason: String },
    #[error("unsupported dtype {descr} at {path} (expected |u1)")]
    UnsupportedDtype { path: String, descr: String },
    #[error("payload size mismatch at {path}: header says {expected} bytes, file has {actual}")]
    SizeMismatch {
        path: String,
        expected: usize,
        actual: usize,
    },
}

fn io_err(path: &Path, source: io::Error) -> NpyError {
    NpyError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serialize a u8 volume to NPY v1.0 bytes.
pub fn to_bytes_u8(array: &Array3<u8>) -> Vec<u8> {
    let (s, h, w) = array.dim();
    let dict = format!("{{'descr': '|u1', 'fortran_order': False, 'shape': ({s}, {h}, {w}), }}");
    // magic(6) + version(2) + header_len(2) + dict + padding + '\n', aligned to 64
    let unpadded = 10 + dict.len() + 1;
    let padding = (64 - unpadded % 64) % 64;
    let header_len = (dict.len() + padding + 1) as u16;

    let mut out = Vec::with_capacity(10 + header_len as usize + array.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1u8, 0u8]);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat(b' ').take(padding));
    out.push(b'\n');
    // standard layout holds for arrays we construct; fall back to iteration otherwise
    match array.as_slice() {
        Some(slice) => out.extend_from_slice(slice),
        None => out.extend(array.iter().copied()),
    }
    out
}

pub fn write_u8(path: &Path, array: &Array3<u8>) -> Result<(), NpyError> {
    crate::io_util::atomic_write(path, &to_bytes_u8(array)).map_err(|e| io_err(path, e))
}

/// Parse NPY v1.0 bytes into a u8 volume.
pub fn from_bytes_u8(path: &Path, bytes: &[u8]) -> Result<Array3<u8>, NpyError> {
    let display = path.display().to_string();
    let bad = |reason: &str| NpyError::BadHeader {
        path: display.clone(),
        reason: reason.to_string(),
    };
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(bad("missing magic"));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(bad(&format!(
            "unsupported format version {}.{}",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    if bytes.len() < 10 + header_len {
        return Err(bad("truncated header"));
    }
    let header = std::str::from_utf8(&bytes[10..10 + header_len])
        .map_err(|_| bad("header is not valid UTF-8"))?;

    let descr = extract_str_value(header, "descr").ok_or_else(|| bad("missing descr"))?;
    if descr != "|u1" {
        return Err(NpyError::UnsupportedDtype {
            path: display,
            descr: descr.to_string(),
        });
    }
    if header.contains("'fortran_order': True") {
        return Err(bad("fortran_order arrays are not supported"));
    }
    let shape = extract_shape(header).ok_or_else(|| bad("missing or malformed shape"))?;
    if shape.len() != 3 {
        return Err(bad(&format!("expected 3-D shape, got {}-D", shape.len())));
    }
    let (s, h, w) = (shape[0], shape[1], shape[2]);
    let expected = s * h * w;
    let payload = &bytes[10 + header_len..];
    if payload.len() != expected {
        return Err(NpyError::SizeMismatch {
            path: display,
            expected,
            actual: payload.len(),
        });
    }
    Array3::from_shape_vec((s, h, w), payload.to_vec())
        .map_err(|e| bad(&format!("shape error: {e}")))
}

pub fn read_u8(path: &Path) -> Result<Array3<u8>, NpyError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    from_bytes_u8(path, &bytes)
}

fn extract_str_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let pat = format!("'{key}': '");
    let start = header.find(&pat)? + pat.len();
    let end = header[start..].find('\'')? + start;
    Some(&header[start..end])
}

fn extract_shape(header: &str) -> Option<Vec<usize>> {
    let pat = "'shape': (";
    let start = header.find(pat)? + pat.len();
    let end = header[start..].find(')')? + start;
    header[start..end]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().ok())
        .collect()
}

// kept for callers that need to stream without ndarray in scope
pub fn atomic_write_bytes(path: &Path, bytes: &[u8]) -> Result<(), NpyError> {
    let mut tmp = path.to_path_buf();
    tmp.set_extension("npy.tmp");
    fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| io_err(path, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}
