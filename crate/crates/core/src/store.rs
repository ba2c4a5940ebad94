//! Query-only feature cache and storage accounting.
//!
//! Cache file layout, all integers and floats little-endian:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4 | magic `DGDF` |
//! | 4  | 4 | version (`u32`, currently 1) |
//! | 8  | 4 | point count `N` (`u32`) |
//! | 12 | 4 | descriptor dim `D` (`u32`) |
//! | 16 | 4 | flags (`u32`, bit 0: coordinates appended) |
//! | 20 | `4·N·D` | descriptors, row-major `f32` |
//! | …  | `4·N·3` | coordinates, row-major `f32` (only when bit 0 is set) |
//!
//! Checksums are FNV-1a 64 over the payload (everything after the header) and live in the
//! [`CacheManifest`], not in the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::descriptors::{DescriptorSet, SourceTag};
use crate::geometry::{Point3, PointCloud};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DGDF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;
pub const FLAG_COORDS: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureCacheHeader {
    pub version: u32,
    pub point_count: u32,
    pub dim: u32,
    pub flags: u32,
}

impl FeatureCacheHeader {
    pub fn has_coords(&self) -> bool {
        self.flags & FLAG_COORDS != 0
    }

    pub fn payload_len(&self) -> usize {
        let n = self.point_count as usize;
        let mut floats = n * self.dim as usize;
        if self.has_coords() {
            floats += n * 3;
        }
        floats * 4
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..8].copy_from_slice(&self.version.to_le_bytes());
        out[8..12].copy_from_slice(&self.point_count.to_le_bytes());
        out[12..16].copy_from_slice(&self.dim.to_le_bytes());
        out[16..20].copy_from_slice(&self.flags.to_le_bytes());
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"DGDF\"",
                String::from_utf8_lossy(&bytes[0..4])
            )));
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let header = FeatureCacheHeader {
            version: word(4),
            point_count: word(8),
            dim: word(12),
            flags: word(16),
        };
        if header.version != VERSION {
            return Err(Error::Format(format!(
                "unsupported cache version {}",
                header.version
            )));
        }
        if header.point_count == 0 || header.dim == 0 {
            return Err(Error::Format("point count and dim must be positive".into()));
        }
        if header.flags & !FLAG_COORDS != 0 {
            return Err(Error::Format(format!("unknown flags {:#x}", header.flags)));
        }
        Ok(header)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Serializes features (and optional coordinates) into the cache byte layout.
///
/// Values are stored as `f32`; values not exactly representable are rounded.
pub fn encode_cache(features: &DescriptorSet, coords: Option<&PointCloud>) -> Result<Vec<u8>> {
    if features.is_empty() {
        return Err(Error::EmptyInput("no features to cache"));
    }
    if let Some(c) = coords {
        if c.len() != features.len() {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates for {} feature rows",
                c.len(),
                features.len()
            )));
        }
    }
    let point_count = u32::try_from(features.len())
        .map_err(|_| Error::InvalidArgument("too many points for a u32 header".into()))?;
    let header = FeatureCacheHeader {
        version: VERSION,
        point_count,
        dim: features.dim() as u32,
        flags: if coords.is_some() { FLAG_COORDS } else { 0 },
    };
    let mut out = Vec::with_capacity(HEADER_LEN + header.payload_len());
    out.extend_from_slice(&header.to_bytes());
    let mut push = |v: f64| -> Result<()> {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::InvalidArgument(format!("{v} does not fit in f32")));
        }
        out.extend_from_slice(&f.to_le_bytes());
        Ok(())
    };
    for &v in features.as_slice() {
        push(v)?;
    }
    if let Some(c) = coords {
        for p in c.points() {
            for &v in p.iter() {
                push(v)?;
            }
        }
    }
    Ok(out)
}

/// Parses the cache byte layout.
pub fn decode_cache(bytes: &[u8], expected_dim: usize) -> Result<(DescriptorSet, Option<PointCloud>)> {
    let header = FeatureCacheHeader::parse(bytes)?;
    if header.dim as usize != expected_dim {
        return Err(Error::DimMismatch {
            expected: expected_dim,
            found: header.dim as usize,
        });
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = header.payload_len();
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected: HEADER_LEN + expected,
            found: bytes.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    let floats: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let n = header.point_count as usize;
    let d = header.dim as usize;
    let features = DescriptorSet::new(floats[..n * d].to_vec(), d, SourceTag::Precomputed)?;
    let coords = if header.has_coords() {
        let pts = floats[n * d..]
            .chunks_exact(3)
            .map(|c| Point3::new(c[0], c[1], c[2]))
            .collect();
        Some(PointCloud::new(pts)?)
    } else {
        None
    };
    Ok((features, coords))
}

/// Writes a cache file and returns the payload checksum.
pub fn write_cache(
    path: impl AsRef<Path>,
    features: &DescriptorSet,
    coords: Option<&PointCloud>,
) -> Result<u64> {
    let path = path.as_ref();
    let bytes = encode_cache(features, coords)?;
    fs::write(path, &bytes).map_err(|e| Error::storage(path, e))?;
    Ok(fnv1a64(&bytes[HEADER_LEN..]))
}

pub fn read_cache(
    path: impl AsRef<Path>,
    expected_dim: usize,
) -> Result<(DescriptorSet, Option<PointCloud>)> {
    let bytes = read_bytes(path.as_ref())?;
    decode_cache(&bytes, expected_dim)
}

/// Reads a cache file and checks it against its manifest entry.
pub fn read_cache_verified(
    path: impl AsRef<Path>,
    expected_dim: usize,
    entry: &ManifestEntry,
) -> Result<(DescriptorSet, Option<PointCloud>)> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let header = FeatureCacheHeader::parse(&bytes)?;
    let found = fnv1a64(&bytes[HEADER_LEN..]);
    if found != entry.checksum {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            expected: entry.checksum,
            found,
        });
    }
    if header.point_count as usize != entry.point_count || header.dim as usize != entry.dim {
        return Err(Error::Consistency(format!(
            "{} holds {}×{} features, manifest says {}×{}",
            path.display(),
            header.point_count,
            header.dim,
            entry.point_count,
            entry.dim
        )));
    }
    decode_cache(&bytes, expected_dim)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path.to_path_buf())
        } else {
            Error::storage(path, e)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub dim: usize,
    pub point_count: usize,
    pub query_diameter: f64,
    #[serde(with = "hex_u64")]
    pub checksum: u64,
}

/// Object id → cache file description, stored as pretty-printed JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl CacheManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::NotFound(path.to_path_buf())
            } else {
                Error::storage(path, e)
            }
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::storage(path, e))
    }

    pub fn resolve(&self, manifest_dir: &Path, id: &str) -> Option<PathBuf> {
        self.entries.get(id).map(|e| manifest_dir.join(&e.path))
    }

    /// Loads an entry's features, verifying its checksum.
    pub fn load_entry(&self, manifest_dir: &Path, id: &str) -> Result<(DescriptorSet, Option<PointCloud>)> {
        let entry = self
            .entries
            .get(id)
            .ok_or_else(|| Error::NotFound(PathBuf::from(id)))?;
        read_cache_verified(manifest_dir.join(&entry.path), entry.dim, entry)
    }

    /// Checks every referenced file exists and matches its checksum.
    pub fn verify(&self, manifest_dir: &Path) -> Result<()> {
        for id in self.entries.keys() {
            self.load_entry(manifest_dir, id)?;
        }
        Ok(())
    }
}

mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}

/// Feature storage for query-only caching versus caching every target instance too.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub query_only_bytes: u64,
    pub full_bytes: u64,
    pub reduction_ratio: f64,
}

pub fn storage_report(
    num_query_objects: u64,
    num_target_instances: u64,
    points_per_cloud: u64,
    dim: u64,
    bytes_per_scalar: u64,
) -> Result<StorageReport> {
    if num_query_objects == 0 || points_per_cloud == 0 || dim == 0 || bytes_per_scalar == 0 {
        return Err(Error::InvalidArgument(
            "query objects, points, dim and scalar size must be positive".into(),
        ));
    }
    let overflow = || Error::InvalidArgument("storage size overflows u64".into());
    let per_cloud = points_per_cloud
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(bytes_per_scalar))
        .ok_or_else(overflow)?;
    let query_only_bytes = num_query_objects.checked_mul(per_cloud).ok_or_else(overflow)?;
    let full_bytes = num_query_objects
        .checked_add(num_target_instances)
        .and_then(|c| c.checked_mul(per_cloud))
        .ok_or_else(overflow)?;
    Ok(StorageReport {
        query_only_bytes,
        full_bytes,
        reduction_ratio: reduction_ratio(full_bytes as f64, query_only_bytes as f64),
    })
}

/// Ratio of full-cache to query-only-cache storage.
pub fn reduction_ratio(full_bytes: f64, query_only_bytes: f64) -> f64 {
    full_bytes / query_only_bytes
}

/// Size in bytes of a cache file with the given shape.
pub fn cache_file_len(point_count: usize, dim: usize, with_coords: bool) -> usize {
    HEADER_LEN + 4 * point_count * (dim + if with_coords { 3 } else { 0 })
}
