//! Synthetic dataset assembly: per-split random phantoms with disjoint seed
//! streams, their noisy sinograms, weights, and FBP / PWLS-EP initial images.

use serde::{Deserialize, Serialize};

use super::{compute_weights, make_phantom, random_phantom_spec, NoiseModel, WeightVector};
use crate::ct::{build_system_matrix, fbp, FanBeamGeometry, Image, ImageGrid, Sinogram, SystemMatrix};
use crate::error::{CoreError, Result};
use crate::mbir::{pwls_ep_reconstruct, EpParams};
use crate::rng::{derive_seed, derive_seed_index};

/// One training/evaluation case.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    /// Ground-truth phantom in offset-HU.
    pub phantom: Image,
    /// Noisy log sinogram.
    pub sino: Sinogram,
    /// Statistical ray weights.
    pub weights: WeightVector,
    /// Filtered-back-projection reconstruction of `sino`.
    pub fbp_init: Image,
    /// PWLS-EP reconstruction, the pipeline initialization.
    pub ep_init: Image,
}

/// Train/val/test splits plus the shared acquisition description.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub grid: ImageGrid,
    pub geometry: FanBeamGeometry,
    pub noise: NoiseModel,
    pub seed: u64,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&[Sample]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// [`make_dataset_with`] using default PWLS-EP settings.
pub fn make_dataset(
    n_train: usize,
    n_val: usize,
    n_test: usize,
    grid: &ImageGrid,
    geometry: &FanBeamGeometry,
    nm: &NoiseModel,
    seed: u64,
) -> Result<Dataset> {
    make_dataset_with(n_train, n_val, n_test, grid, geometry, nm, seed, &EpParams::default())
}

/// Builds a dataset of `(x*, y, W)` triples plus FBP and PWLS-EP
/// initializations. Split seeds are disjoint streams of `seed`, so splits
/// share no phantom and the whole dataset is bit-reproducible.
#[allow(clippy::too_many_arguments)]
pub fn make_dataset_with(
    n_train: usize,
    n_val: usize,
    n_test: usize,
    grid: &ImageGrid,
    geometry: &FanBeamGeometry,
    nm: &NoiseModel,
    seed: u64,
    ep: &EpParams,
) -> Result<Dataset> {
    if n_train + n_val + n_test == 0 {
        return Err(CoreError::InvalidParameter(
            "dataset must contain at least one sample".into(),
        ));
    }
    let a = build_system_matrix(geometry, grid)?;
    let mut ds = Dataset {
        grid: *grid,
        geometry: *geometry,
        noise: *nm,
        seed,
        train: Vec::with_capacity(n_train),
        val: Vec::with_capacity(n_val),
        test: Vec::with_capacity(n_test),
    };
    for (label, count) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        let split_seed = derive_seed(seed, label);
        let samples = (0..count)
            .map(|i| build_sample(label, i, split_seed, grid, &a, nm, ep))
            .collect::<Result<Vec<_>>>()?;
        match label {
            "train" => ds.train = samples,
            "val" => ds.val = samples,
            _ => ds.test = samples,
        }
    }
    Ok(ds)
}

fn build_sample(
    label: &str,
    index: usize,
    split_seed: u64,
    grid: &ImageGrid,
    a: &SystemMatrix,
    nm: &NoiseModel,
    ep: &EpParams,
) -> Result<Sample> {
    let phantom_seed = derive_seed_index(split_seed, index as u64);
    let noise_seed = derive_seed_index(derive_seed(split_seed, "noise"), index as u64);
    let spec = random_phantom_spec(*grid, phantom_seed);
    let phantom = make_phantom(&spec);
    let sample_nm = nm.with_seed(noise_seed);
    let sino = super::simulate_sinogram(&phantom, a, &sample_nm)?;
    let weights = compute_weights(&sino, &sample_nm)?;
    let fbp_init = fbp(&a.geometry, grid, &sino)?.image;
    let ep_init = pwls_ep_reconstruct(&sino, &weights, a, ep, None, &fbp_init)?.image;
    Ok(Sample {
        id: format!("{label}-{index:03}"),
        phantom,
        sino,
        weights,
        fbp_init,
        ep_init,
    })
}

/// Serializable description of how a dataset was produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub grid: ImageGrid,
    pub geometry: FanBeamGeometry,
    pub noise: NoiseModel,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}
