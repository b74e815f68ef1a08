//! Per-block solver-output cache so interrupted training runs can resume
//! without redoing finished reconstructions.

use std::path::PathBuf;

use sha2::{Digest, Sha256};

use super::SuperTrainConfig;
use crate::ct::{FanBeamGeometry, Image, ImageGrid};
use crate::error::Result;
use crate::io::{read_raster_f64, write_raster_f64};

/// Cache keyed by `(block, sample id)`; entries carry a fingerprint of the
/// acquisition setup, solver configuration and the exact input iterate, so
/// stale entries are never reused.
#[derive(Debug, Clone)]
pub struct BlockCache {
    dir: Option<PathBuf>,
    config_hash: String,
}

impl BlockCache {
    pub fn new(
        dir: Option<PathBuf>,
        geometry: &FanBeamGeometry,
        grid: &ImageGrid,
        cfg: &SuperTrainConfig,
    ) -> Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
        }
        let mut hasher = Sha256::new();
        hasher.update(crate::io::geometry_hash(geometry, grid).as_bytes());
        hasher.update(format!("{:?}", cfg.unsup).as_bytes());
        hasher.update(format!("{:?}", cfg.train).as_bytes());
        hasher.update(format!("{}|{}|{}", cfg.lambda_lb, cfg.lambda_ub, cfg.seed).as_bytes());
        Ok(Self {
            dir,
            config_hash: hex::encode(&hasher.finalize()[..16]),
        })
    }

    fn fingerprint(&self, block: usize, input: &Image) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.config_hash.as_bytes());
        hasher.update(block.to_le_bytes());
        for v in input.pixels.iter() {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..16])
    }

    fn base(&self, block: usize, sample_id: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("block{block:02}-{sample_id}")))
    }

    /// Returns the cached solver output if present and fingerprint-matched.
    pub fn load(&self, block: usize, sample_id: &str, input: &Image) -> Result<Option<Image>> {
        let Some(base) = self.base(block, sample_id) else {
            return Ok(None);
        };
        if !base.with_extension("json").exists() {
            return Ok(None);
        }
        let (meta, data) = match read_raster_f64(&base) {
            Ok(ok) => ok,
            Err(_) => return Ok(None), // treat unreadable entries as a miss
        };
        if meta.geometry_hash != self.fingerprint(block, input)
            || meta.dims != [input.grid.n_rows, input.grid.n_cols]
        {
            return Ok(None);
        }
        let pixels = ndarray::Array2::from_shape_vec((input.grid.n_rows, input.grid.n_cols), data)
            .expect("dims checked");
        Ok(Some(Image {
            grid: input.grid,
            pixels,
        }))
    }

    /// Stores a solver output keyed to its exact input.
    pub fn store(&self, block: usize, sample_id: &str, input: &Image, output: &Image) -> Result<()> {
        let Some(base) = self.base(block, sample_id) else {
            return Ok(());
        };
        let data: Vec<f64> = output.pixels.iter().copied().collect();
        write_raster_f64(
            &base,
            &data,
            &[output.grid.n_rows, output.grid.n_cols],
            "offset-HU",
            &self.fingerprint(block, input),
        )
    }
}
