//! Sidecar cache of preprocessed point sets.
//!
//! Little-endian throughout, mirroring the checkpoint conventions:
//!
//! ```text
//! "MCPP"  version:u32
//! image_crc:u32  spec_crc:u32  canvas:u32  n_points:u32  n_original:u32
//! { x:f32 y:f32 label:u32 } * n_points
//! crc32 of everything before
//! ```
//!
//! A sidecar whose key does not match the current image, spec and
//! parameters, or whose checksum fails, is treated as absent.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sketchio::{CategorySpec, LabeledPointSet, PointSet};

pub const CACHE_MAGIC: &[u8; 4] = b"MCPP";
pub const CACHE_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 * 6;

/// Identity of a preprocessing result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheKey {
    pub image_crc: u32,
    pub spec_crc: u32,
    pub canvas: u32,
    pub n_points: u32,
}

impl CacheKey {
    pub fn new(image_bytes: &[u8], spec: &CategorySpec, canvas: usize, n_points: usize) -> Self {
        let spec_json = serde_json::to_vec(spec).expect("spec serializes");
        Self {
            image_crc: crc32fast::hash(image_bytes),
            spec_crc: crc32fast::hash(&spec_json),
            canvas: canvas as u32,
            n_points: n_points as u32,
        }
    }
}

/// `<image>.<n_points>.pts`.
pub fn sidecar_path(image: &Path, n_points: usize) -> PathBuf {
    let mut name = image.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".{n_points}.pts"));
    image.with_file_name(name)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn write_cache(path: &Path, key: &CacheKey, pts: &LabeledPointSet) -> Result<()> {
    let mut out = Vec::with_capacity(HEADER_LEN + 12 * pts.len() + 4);
    out.extend_from_slice(CACHE_MAGIC);
    for v in [
        CACHE_VERSION,
        key.image_crc,
        key.spec_crc,
        key.canvas,
        key.n_points,
        pts.n_original() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (p, &l) in pts.base.points.iter().zip(&pts.labels) {
        out.extend_from_slice(&p[0].to_le_bytes());
        out.extend_from_slice(&p[1].to_le_bytes());
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// `Ok(None)` when the sidecar is missing, stale or damaged.
pub fn read_cache(path: &Path, key: &CacheKey) -> Result<Option<LabeledPointSet>> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
    };
    if bytes.len() < HEADER_LEN + 4 || &bytes[..4] != CACHE_MAGIC {
        return Ok(None);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32_at(tail, 0) {
        return Ok(None);
    }
    let stored = CacheKey {
        image_crc: u32_at(body, 8),
        spec_crc: u32_at(body, 12),
        canvas: u32_at(body, 16),
        n_points: u32_at(body, 20),
    };
    let n = key.n_points as usize;
    if u32_at(body, 4) != CACHE_VERSION || stored != *key || body.len() != HEADER_LEN + 12 * n {
        return Ok(None);
    }
    let n_original = u32_at(body, 24) as usize;
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for rec in body[HEADER_LEN..].chunks_exact(12) {
        let f = |at: usize| f32::from_bits(u32_at(rec, at));
        points.push([f(0), f(4)]);
        labels.push(u32_at(rec, 8) as usize);
    }
    Ok(Some(LabeledPointSet {
        base: PointSet { points, n_original },
        labels,
    }))
}
