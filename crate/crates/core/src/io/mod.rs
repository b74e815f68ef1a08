//! Artifact persistence: self-describing raster files, model checkpoints and
//! dataset directories. Every payload carries a JSON sidecar with its shape,
//! dtype, units, geometry hash and a SHA-256 checksum that is verified on
//! load.

mod checkpoint;
mod dataset_io;
mod raster;

pub use checkpoint::{
    load_convnet, load_pipeline, load_serial_pipeline, load_transform_union, save_convnet,
    save_pipeline, save_serial_pipeline, save_transform_union,
};
pub use dataset_io::{load_dataset, save_dataset};
pub use raster::{
    read_raster_f32, read_raster_f64, write_raster_f32, write_raster_f64, RasterMeta,
};

use sha2::{Digest, Sha256};

use crate::ct::{FanBeamGeometry, ImageGrid};

pub const CREATOR_VERSION: &str = concat!("superct/", env!("CARGO_PKG_VERSION"));

/// Stable fingerprint of an acquisition setup, embedded in artifact sidecars
/// so mismatched models and measurements are caught on load.
pub fn geometry_hash(geometry: &FanBeamGeometry, grid: &ImageGrid) -> String {
    let canon = serde_json::json!({
        "geometry": geometry,
        "grid": grid,
    });
    let mut hasher = Sha256::new();
    hasher.update(canon.to_string().as_bytes());
    hex::encode(&hasher.finalize()[..16])
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}
