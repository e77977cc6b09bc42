//! FMAP: a minimal multi-channel float32 map container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FMAP" | u32 version = 1 | u32 height | u32 width | u32 channels |
//! channels * height * width f32 values, channel-major, row-major
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use ndarray::Array3;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"FMAP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum FmapError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}, expected \"FMAP\"")]
    BadMagic([u8; 4]),
    #[error("unsupported FMAP version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated FMAP: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("FMAP has {found} trailing bytes")]
    TrailingBytes { found: usize },
    #[error("expected {expected} channels, found {found}")]
    ChannelMismatch { expected: String, found: usize },
    #[error("map shapes disagree")]
    ShapeMismatch,
}

/// Encodes a `(channels, height, width)` array.
pub fn encode(maps: &Array3<f32>) -> Vec<u8> {
    let (c, h, w) = maps.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * c * h * w);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, h as u32, w as u32, c as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    // Iteration order of `iter()` is logical (row-major) order regardless of
    // memory layout.
    for v in maps.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Array3<f32>, FmapError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(FmapError::BadMagic(bytes[..4].try_into().expect("4 bytes")));
        }
        return Err(FmapError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(FmapError::BadMagic(magic));
    }
    let word = |i: usize| {
        u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
    };
    let version = word(0) as u32;
    if version != VERSION {
        return Err(FmapError::UnsupportedVersion(version));
    }
    let (h, w, c) = (word(1), word(2), word(3));
    let expected = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .unwrap_or(usize::MAX);
    if bytes.len() < expected {
        return Err(FmapError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FmapError::TrailingBytes {
            found: bytes.len() - expected,
        });
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Ok(Array3::from_shape_vec((c, h, w), values).expect("length checked above"))
}

/// Writes via a temporary file in the destination directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_file(path: &Path, maps: &Array3<f32>) -> Result<(), FmapError> {
    write_atomic(path, &encode(maps))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Array3<f32>, FmapError> {
    decode(&fs::read(path)?)
}
