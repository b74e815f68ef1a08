//! Dataset directory layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/<split>/<id>/{phantom,sino,weights,fbp,ep}.{json,f32}
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::raster::{read_raster_f32, write_raster_f32};
use super::geometry_hash;
use crate::ct::{Image, Sinogram};
use crate::error::{CoreError, Result};
use crate::sim::{Dataset, DatasetManifest, Sample, WeightVector};

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    #[serde(flatten)]
    manifest: DatasetManifest,
    geometry_hash: String,
    creator: String,
    samples: Vec<SampleRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    split: String,
    id: String,
}

/// Persists a dataset; fails if `dir` exists non-empty unless `force`.
pub fn save_dataset(dir: &Path, ds: &Dataset, force: bool) -> Result<()> {
    if dir.exists() && dir.read_dir()?.next().is_some() {
        if !force {
            return Err(CoreError::InvalidParameter(format!(
                "output directory {} is not empty (use force to overwrite)",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    let ghash = geometry_hash(&ds.geometry, &ds.grid);
    let mut records = Vec::new();
    for (split, samples) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        for s in samples {
            let sdir = dir.join(split).join(&s.id);
            fs::create_dir_all(&sdir)?;
            write_img(&sdir.join("phantom"), &s.phantom, &ghash)?;
            write_sino(&sdir.join("sino"), &s.sino, &ghash)?;
            write_raster_f32(
                &sdir.join("weights"),
                &s.weights.values.iter().map(|&v| v as f32).collect::<Vec<_>>(),
                &[s.weights.values.nrows(), s.weights.values.ncols()],
                "counts",
                &ghash,
            )?;
            write_img(&sdir.join("fbp"), &s.fbp_init, &ghash)?;
            write_img(&sdir.join("ep"), &s.ep_init, &ghash)?;
            records.push(SampleRecord {
                split: split.to_string(),
                id: s.id.clone(),
            });
        }
    }
    let file = ManifestFile {
        manifest: DatasetManifest {
            grid: ds.grid,
            geometry: ds.geometry,
            noise: ds.noise,
            seed: ds.seed,
            n_train: ds.train.len(),
            n_val: ds.val.len(),
            n_test: ds.test.len(),
        },
        geometry_hash: ghash,
        creator: super::CREATOR_VERSION.to_string(),
        samples: records,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Loads a dataset directory, verifying every payload checksum.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(CoreError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no dataset manifest at {}", manifest_path.display()),
        )));
    }
    let file: ManifestFile = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    let m = &file.manifest;
    let mut ds = Dataset {
        grid: m.grid,
        geometry: m.geometry,
        noise: m.noise,
        seed: m.seed,
        train: vec![],
        val: vec![],
        test: vec![],
    };
    for rec in &file.samples {
        let sdir = dir.join(&rec.split).join(&rec.id);
        let phantom = read_img(&sdir.join("phantom"), &ds)?;
        let sino = read_sino(&sdir.join("sino"), &ds)?;
        let (_, wdata) = read_raster_f32(&sdir.join("weights"))?;
        let weights = WeightVector::new(
            Array2::from_shape_vec(
                (m.geometry.n_views, m.geometry.n_detectors),
                wdata.into_iter().map(f64::from).collect(),
            )
            .map_err(|_| CoreError::CorruptArtifact {
                path: sdir.display().to_string(),
                reason: "weight dims".into(),
            })?,
        )?;
        let sample = Sample {
            id: rec.id.clone(),
            phantom,
            sino,
            weights,
            fbp_init: read_img(&sdir.join("fbp"), &ds)?,
            ep_init: read_img(&sdir.join("ep"), &ds)?,
        };
        match rec.split.as_str() {
            "train" => ds.train.push(sample),
            "val" => ds.val.push(sample),
            "test" => ds.test.push(sample),
            other => {
                return Err(CoreError::CorruptArtifact {
                    path: manifest_path.display().to_string(),
                    reason: format!("unknown split '{other}'"),
                })
            }
        }
    }
    Ok(ds)
}

fn write_img(base: &Path, img: &Image, ghash: &str) -> Result<()> {
    write_raster_f32(
        base,
        &img.pixels.iter().map(|&v| v as f32).collect::<Vec<_>>(),
        &[img.grid.n_rows, img.grid.n_cols],
        "offset-HU",
        ghash,
    )
}

fn read_img(base: &Path, ds: &Dataset) -> Result<Image> {
    let (meta, data) = read_raster_f32(base)?;
    if meta.dims != [ds.grid.n_rows, ds.grid.n_cols] {
        return Err(CoreError::CorruptArtifact {
            path: base.display().to_string(),
            reason: "image dims do not match dataset grid".into(),
        });
    }
    Image::new(
        ds.grid,
        Array2::from_shape_vec(
            (ds.grid.n_rows, ds.grid.n_cols),
            data.into_iter().map(f64::from).collect(),
        )
        .expect("dims checked"),
    )
}

fn write_sino(base: &Path, sino: &Sinogram, ghash: &str) -> Result<()> {
    write_raster_f32(
        base,
        &sino.values.iter().map(|&v| v as f32).collect::<Vec<_>>(),
        &[sino.values.nrows(), sino.values.ncols()],
        "log-attenuation",
        ghash,
    )
}

fn read_sino(base: &Path, ds: &Dataset) -> Result<Sinogram> {
    let (meta, data) = read_raster_f32(base)?;
    if meta.dims != [ds.geometry.n_views, ds.geometry.n_detectors] {
        return Err(CoreError::CorruptArtifact {
            path: base.display().to_string(),
            reason: "sinogram dims do not match dataset geometry".into(),
        });
    }
    Sinogram::new(
        ds.geometry,
        Array2::from_shape_vec(
            (ds.geometry.n_views, ds.geometry.n_detectors),
            data.into_iter().map(f64::from).collect(),
        )
        .expect("dims checked"),
    )
}
