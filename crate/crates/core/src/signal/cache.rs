use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::FeatureKind;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"AMTF";
pub const CACHE_VERSION: u8 = 1;

/// Payload tag stored after the version byte.
///
/// Codes 0-2 are the time-frequency features; 3 and 4 tag embedding tables
/// written by the export command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheKind {
    Feature(FeatureKind),
    HeadEmbedding,
    SharedRepresentation,
}

impl CacheKind {
    pub fn code(self) -> u8 {
        match self {
            CacheKind::Feature(k) => k.code(),
            CacheKind::HeadEmbedding => 3,
            CacheKind::SharedRepresentation => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            3 => Some(CacheKind::HeadEmbedding),
            4 => Some(CacheKind::SharedRepresentation),
            c => FeatureKind::from_code(c).map(CacheKind::Feature),
        }
    }
}

/// Writes `magic | version | kind | rows u32 LE | cols u32 LE | f32 LE row-major`.
pub fn write_feature_cache(path: &Path, kind: CacheKind, data: &Array2<f32>) -> Result<()> {
    let (rows, cols) = data.dim();
    let too_big = |n: usize| u32::try_from(n).is_err();
    if too_big(rows) || too_big(cols) {
        return Err(Error::InvalidInput(format!("{rows}x{cols} exceeds the u32 dimension range")));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&[CACHE_VERSION, kind.code()])?;
    w.write_all(&(rows as u32).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    for v in data.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_cache(path: &Path) -> Result<(CacheKind, Array2<f32>)> {
    let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 14];
    r.read_exact(&mut header).map_err(|e| bad(format!("truncated header: {e}")))?;
    if &header[..4] != CACHE_MAGIC {
        return Err(bad("bad magic".into()));
    }
    if header[4] != CACHE_VERSION {
        return Err(bad(format!("unsupported version {}", header[4])));
    }
    let kind = CacheKind::from_code(header[5]).ok_or_else(|| bad(format!("unknown kind byte {}", header[5])))?;
    let rows = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
    let mut bytes = Vec::with_capacity(rows * cols * 4);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != rows * cols * 4 {
        return Err(bad(format!("expected {} payload bytes, found {}", rows * cols * 4, bytes.len())));
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let data = Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(e.to_string()))?;
    Ok((kind, data))
}
