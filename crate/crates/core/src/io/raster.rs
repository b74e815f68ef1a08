//! Raster file format: a raw little-endian payload (`<base>.f32` or
//! `<base>.f64`) in row-major order plus a JSON sidecar (`<base>.json`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sha256_hex, CREATOR_VERSION};
use crate::error::{CoreError, Result};

/// Sidecar schema of a raster payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RasterMeta {
    pub dims: Vec<usize>,
    pub dtype: String,
    pub units: String,
    pub geometry_hash: String,
    pub creator: String,
    pub checksum: String,
}

fn element_size(dtype: &str, path: &Path) -> Result<usize> {
    match dtype {
        "f32le" => Ok(4),
        "f64le" => Ok(8),
        other => Err(CoreError::CorruptArtifact {
            path: path.display().to_string(),
            reason: format!("unsupported dtype '{other}'"),
        }),
    }
}

fn write_payload(
    base: &Path,
    bytes: Vec<u8>,
    dims: &[usize],
    dtype: &str,
    units: &str,
    geometry_hash: &str,
) -> Result<()> {
    let meta = RasterMeta {
        dims: dims.to_vec(),
        dtype: dtype.to_string(),
        units: units.to_string(),
        geometry_hash: geometry_hash.to_string(),
        creator: CREATOR_VERSION.to_string(),
        checksum: sha256_hex(&bytes),
    };
    if let Some(parent) = base.parent() {
        fs::create_dir_all(parent)?;
    }
    let ext = &dtype[..3];
    fs::write(base.with_extension(ext), bytes)?;
    fs::write(
        base.with_extension("json"),
        serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(())
}

fn read_payload(base: &Path, expect_dtype: &str) -> Result<(RasterMeta, Vec<u8>)> {
    let sidecar = base.with_extension("json");
    let meta: RasterMeta = serde_json::from_str(&fs::read_to_string(&sidecar)?)?;
    if meta.dtype != expect_dtype {
        return Err(CoreError::CorruptArtifact {
            path: sidecar.display().to_string(),
            reason: format!("dtype is '{}', expected '{expect_dtype}'", meta.dtype),
        });
    }
    let elem = element_size(&meta.dtype, &sidecar)?;
    let payload_path = base.with_extension(&meta.dtype[..3]);
    let bytes = fs::read(&payload_path)?;
    let expected_len: usize = meta.dims.iter().product::<usize>() * elem;
    if bytes.len() != expected_len {
        return Err(CoreError::CorruptArtifact {
            path: payload_path.display().to_string(),
            reason: format!("payload is {} bytes, sidecar implies {expected_len}", bytes.len()),
        });
    }
    if sha256_hex(&bytes) != meta.checksum {
        return Err(CoreError::CorruptArtifact {
            path: payload_path.display().to_string(),
            reason: "checksum mismatch".into(),
        });
    }
    Ok((meta, bytes))
}

/// Writes a float32 raster (`<base>.f32` + `<base>.json`).
pub fn write_raster_f32(
    base: &Path,
    data: &[f32],
    dims: &[usize],
    units: &str,
    geometry_hash: &str,
) -> Result<()> {
    assert_eq!(data.len(), dims.iter().product::<usize>(), "dims mismatch");
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_payload(base, bytes, dims, "f32le", units, geometry_hash)
}

/// Reads and checksum-verifies a float32 raster.
pub fn read_raster_f32(base: &Path) -> Result<(RasterMeta, Vec<f32>)> {
    let (meta, bytes) = read_payload(base, "f32le")?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((meta, data))
}

/// Writes a float64 raster for artifacts that must round-trip bit-exactly
/// (learned transforms, network weights, block caches).
pub fn write_raster_f64(
    base: &Path,
    data: &[f64],
    dims: &[usize],
    units: &str,
    geometry_hash: &str,
) -> Result<()> {
    assert_eq!(data.len(), dims.iter().product::<usize>(), "dims mismatch");
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_payload(base, bytes, dims, "f64le", units, geometry_hash)
}

/// Reads and checksum-verifies a float64 raster.
pub fn read_raster_f64(base: &Path) -> Result<(RasterMeta, Vec<f64>)> {
    let (meta, bytes) = read_payload(base, "f64le")?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect();
    Ok((meta, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_roundtrip_and_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("img");
        let data: Vec<f32> = (0..12).map(|i| i as f32 * 0.5).collect();
        write_raster_f32(&base, &data, &[3, 4], "offset-HU", "abc").unwrap();
        let (meta, back) = read_raster_f32(&base).unwrap();
        assert_eq!(back, data);
        assert_eq!(meta.dims, vec![3, 4]);
        assert_eq!(meta.units, "offset-HU");

        // Corrupt one byte: load must fail the checksum.
        let payload = base.with_extension("f32");
        let mut bytes = std::fs::read(&payload).unwrap();
        bytes[5] ^= 0xff;
        std::fs::write(&payload, bytes).unwrap();
        assert!(matches!(
            read_raster_f32(&base),
            Err(CoreError::CorruptArtifact { .. })
        ));
    }

    #[test]
    fn f64_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("weights");
        let data: Vec<f64> = (0..9).map(|i| (i as f64).sin() * 1e-3).collect();
        write_raster_f64(&base, &data, &[9], "", "").unwrap();
        let (_, back) = read_raster_f64(&base).unwrap();
        assert!(data.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
