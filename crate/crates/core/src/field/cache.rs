//! Binary field cache.
//!
//! Layout (all little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `SGTFIELD` |
//! | 8 | format version (u64) |
//! | 3 × 8 | points per axis (u64) |
//! | 3 × 8 | spacing in µm (f64) |
//! | 3 × 8 | origin in µm (f64) |
//! | 8 | x extension code (u64: 0 none, 1 zero, 2 mirror) |
//! | 8 + n | label length (u64) and UTF-8 bytes |
//! | 8 × N | samples (f64), z fastest |
//! | 32 | SHA-256 of everything above |

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{basis_key, solve_basis, FieldLayout, Grid3D, PotentialField, SolveOptions, XExtension};
use crate::error::{Error, Result};
use crate::geometry::{ElectrodeId, TrapGeometry};

const MAGIC: &[u8; 8] = b"SGTFIELD";
const VERSION: u64 = 1;

pub fn encode_field(field: &PotentialField) -> Vec<u8> {
    let mut out = Vec::with_capacity(160 + field.label.len() + 8 * field.values.len());
    out.extend_from_slice(MAGIC);
    out.extend(VERSION.to_le_bytes());
    for d in field.grid.dims {
        out.extend((d as u64).to_le_bytes());
    }
    for s in field.grid.spacing {
        out.extend(s.to_le_bytes());
    }
    for o in field.grid.origin {
        out.extend(o.to_le_bytes());
    }
    out.extend(field.x_extension.code().to_le_bytes());
    out.extend((field.label.len() as u64).to_le_bytes());
    out.extend(field.label.as_bytes());
    for v in &field.values {
        out.extend(v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

pub fn decode_field(bytes: &[u8]) -> std::result::Result<PotentialField, String> {
    if bytes.len() < 8 + 32 || &bytes[..8] != MAGIC {
        return Err("bad magic".into());
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err("checksum mismatch".into());
    }
    let mut r = Reader { buf: body, pos: 8 };
    let short = || "truncated header".to_string();
    let version = r.u64().ok_or_else(short)?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = usize::try_from(r.u64().ok_or_else(short)?).map_err(|_| "dimension overflow")?;
    }
    let mut spacing = [0.0; 3];
    for s in &mut spacing {
        *s = r.f64().ok_or_else(short)?;
    }
    let mut origin = [0.0; 3];
    for o in &mut origin {
        *o = r.f64().ok_or_else(short)?;
    }
    let ext = XExtension::from_code(r.u64().ok_or_else(short)?).ok_or("unknown x extension")?;
    let n = r.u64().ok_or_else(short)? as usize;
    let label = String::from_utf8(r.take(n).ok_or_else(short)?.to_vec()).map_err(|_| "label is not UTF-8")?;
    let grid = Grid3D::new(origin, spacing, dims).map_err(|e| e.to_string())?;
    let expected = grid.len().checked_mul(8).ok_or("dimension overflow")?;
    if body.len() - r.pos != expected {
        return Err(format!("expected {} samples, found {} bytes", grid.len(), body.len() - r.pos));
    }
    let values =
        body[r.pos..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    PotentialField::new(grid, values, label, ext).map_err(|e| e.to_string())
}

pub fn write_field(path: &Path, field: &PotentialField) -> Result<()> {
    crate::io::write_atomic(path, &encode_field(field))
}

pub fn read_field(path: &Path) -> Result<PotentialField> {
    let bytes = std::fs::read(path)?;
    decode_field(&bytes).map_err(|message| Error::Cache { path: path.to_owned(), message })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheOutcome {
    Hit,
    Miss,
    /// A file existed but failed validation and was replaced.
    Replaced,
}

/// Directory of cached basis fields keyed by geometry, layout and electrode.
#[derive(Debug, Clone)]
pub struct FieldCache {
    dir: PathBuf,
}

impl FieldCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(
        &self,
        geometry: &TrapGeometry,
        layout: &FieldLayout,
        electrode: ElectrodeId,
        opts: &SolveOptions,
    ) -> PathBuf {
        let key = basis_key(geometry, layout, electrode, opts);
        self.dir.join(format!("{electrode}-{}.field", &key[..16]))
    }

    /// Loads the basis field from disk or solves and stores it.
    pub fn basis(
        &self,
        geometry: &TrapGeometry,
        layout: &FieldLayout,
        electrode: ElectrodeId,
        opts: &SolveOptions,
    ) -> Result<(PotentialField, CacheOutcome)> {
        let path = self.path_for(geometry, layout, electrode, opts);
        let mut outcome = CacheOutcome::Miss;
        if path.exists() {
            match read_field(&path) {
                Ok(f) if f.label == electrode.to_string() => {
                    log::info!("cache hit {}", path.display());
                    return Ok((f, CacheOutcome::Hit));
                }
                Ok(_) => {
                    log::warn!("cache entry {} has the wrong label; re-solving", path.display());
                    outcome = CacheOutcome::Replaced;
                }
                Err(e) => {
                    log::warn!("{e}; re-solving");
                    outcome = CacheOutcome::Replaced;
                }
            }
        }
        let field = solve_basis(geometry, layout, electrode, opts)?;
        write_field(&path, &field)?;
        Ok((field, outcome))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::dc_window;
    use crate::geometry::{build_trap, Side, TrapSpec};

    fn sample() -> PotentialField {
        let grid = Grid3D::new([1.0, -2.0, -3.0], [0.5, 0.25, 0.125], [3, 4, 5]).unwrap();
        PotentialField::from_fn(grid, "dc03t", |p| p[0] * p[1] - p[2]).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let f = sample();
        assert_eq!(decode_field(&encode_field(&f)).unwrap(), f);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_field(&sample());
        assert_eq!(&bytes[..8], b"SGTFIELD");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), 0.5);
        assert_eq!(f64::from_le_bytes(bytes[64..72].try_into().unwrap()), 1.0);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_field(&sample());
        let n = bytes.len();
        bytes[n - 40] ^= 1;
        assert!(decode_field(&bytes).unwrap_err().contains("checksum"));
        assert!(decode_field(&bytes[..20]).is_err());
        assert!(decode_field(b"NOTFIELD and more bytes than forty in total here").is_err());
    }

    #[test]
    fn cache_hit_and_repair() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FieldCache::new(dir.path());
        let g = build_trap(&TrapSpec { n_storage: 1, n_transfer: 0, n_processing: 0, ..TrapSpec::default() }).unwrap();
        let layout = dc_window(&g, 0, 25.0).unwrap();
        let id = ElectrodeId::dc(0, Side::Top);
        let opts = SolveOptions::default();
        let (a, o1) = cache.basis(&g, &layout, id, &opts).unwrap();
        assert_eq!(o1, CacheOutcome::Miss);
        let (b, o2) = cache.basis(&g, &layout, id, &opts).unwrap();
        assert_eq!(o2, CacheOutcome::Hit);
        assert_eq!(a, b);
        let path = cache.path_for(&g, &layout, id, &opts);
        std::fs::write(&path, b"garbage").unwrap();
        let (c, o3) = cache.basis(&g, &layout, id, &opts).unwrap();
        assert_eq!(o3, CacheOutcome::Replaced);
        assert_eq!(a, c);
    }
}
