//! Union of learned sparsifying transforms: patch extraction, hard
//! thresholding, and joint sparse coding + clustering of image patches.

mod train;

pub use train::{train_ultra, update_transform};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Overlapping-patch extraction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub patch_side: usize,
    pub stride: usize,
    pub wraparound: bool,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_side: 8,
            stride: 1,
            wraparound: false,
        }
    }
}

impl PatchConfig {
    pub fn patch_dim(&self) -> usize {
        self.patch_side * self.patch_side
    }

    /// Top-left corners of all patches of an `h x w` image, row-major scan.
    pub fn positions(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        if self.patch_side == 0 || self.stride == 0 {
            return Err(CoreError::InvalidParameter(
                "patch side and stride must be positive".into(),
            ));
        }
        if self.patch_side > h || self.patch_side > w {
            return Err(CoreError::InvalidParameter(format!(
                "patch {0}x{0} does not fit a {h}x{w} image",
                self.patch_side
            )));
        }
        let (rows, cols) = if self.wraparound {
            (h, w)
        } else {
            (h - self.patch_side + 1, w - self.patch_side + 1)
        };
        let mut pos = Vec::new();
        let mut r = 0;
        while r < rows {
            let mut c = 0;
            while c < cols {
                pos.push((r, c));
                c += self.stride;
            }
            r += self.stride;
        }
        Ok(pos)
    }
}

/// Extracts overlapping patches as an `m x N'` matrix: each column is one
/// patch vectorized in column-major order; columns follow the row-major scan
/// of patch positions.
pub fn extract_patches(image: &Array2<f64>, cfg: &PatchConfig) -> Result<Array2<f64>> {
    let (h, w) = image.dim();
    let positions = cfg.positions(h, w)?;
    let p = cfg.patch_side;
    let mut out = Array2::zeros((cfg.patch_dim(), positions.len()));
    for (n, &(r0, c0)) in positions.iter().enumerate() {
        for pc in 0..p {
            for pr in 0..p {
                let rr = if cfg.wraparound { (r0 + pr) % h } else { r0 + pr };
                let cc = if cfg.wraparound { (c0 + pc) % w } else { c0 + pc };
                out[[pc * p + pr, n]] = image[[rr, cc]];
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`extract_patches`]: scatters patch columns back onto the image
/// lattice, accumulating overlaps.
pub fn accumulate_patches(
    patches: &Array2<f64>,
    cfg: &PatchConfig,
    h: usize,
    w: usize,
) -> Result<Array2<f64>> {
    let positions = cfg.positions(h, w)?;
    if patches.dim() != (cfg.patch_dim(), positions.len()) {
        return Err(CoreError::DimensionMismatch(format!(
            "patch matrix is {:?}, expected {}x{}",
            patches.dim(),
            cfg.patch_dim(),
            positions.len()
        )));
    }
    let p = cfg.patch_side;
    let mut out = Array2::zeros((h, w));
    for (n, &(r0, c0)) in positions.iter().enumerate() {
        for pc in 0..p {
            for pr in 0..p {
                let rr = if cfg.wraparound { (r0 + pr) % h } else { r0 + pr };
                let cc = if cfg.wraparound { (c0 + pc) % w } else { c0 + pc };
                out[[rr, cc]] += patches[[pc * p + pr, n]];
            }
        }
    }
    Ok(out)
}

/// Keep-if-at-least-threshold hard thresholding: the exact minimizer of
/// `||v - z||^2 + gamma^2 ||z||_0` (ties kept).
pub fn hard_threshold(v: &[f64], gamma: f64) -> Vec<f64> {
    v.iter()
        .map(|&x| if x.abs() >= gamma { x } else { 0.0 })
        .collect()
}

/// Coding cost of one transformed patch: residual energy of the thresholded
/// entries plus `gamma^2` per surviving entry.
#[inline]
pub(crate) fn coding_cost(r: &[f64], gamma: f64) -> f64 {
    let g2 = gamma * gamma;
    r.iter().map(|&x| (x * x).min(g2)).sum()
}

/// A union of `K` square sparsifying transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformUnion {
    pub transforms: Vec<Array2<f64>>,
    /// Regularizer scale used in training.
    pub lambda0: f64,
    /// Training sparsity threshold.
    pub eta: f64,
    /// Training objective value after each alternation.
    pub training_log: Vec<f64>,
}

impl TransformUnion {
    pub fn k(&self) -> usize {
        self.transforms.len()
    }

    pub fn patch_dim(&self) -> usize {
        self.transforms[0].nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.transforms.is_empty() {
            return Err(CoreError::InvalidParameter("need at least one transform".into()));
        }
        for (k, t) in self.transforms.iter().enumerate() {
            if t.nrows() != t.ncols() {
                return Err(CoreError::InvalidParameter(format!("transform {k} not square")));
            }
            if !t.iter().all(|v| v.is_finite()) {
                return Err(CoreError::NonFinite(format!("transform {k}")));
            }
            let scale = t.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let (_, logdet) = train::log_abs_det(t);
            if !logdet.is_finite() || logdet < (1e-12 * scale.max(1e-30)).ln() * t.nrows() as f64 {
                return Err(CoreError::InvalidParameter(format!(
                    "transform {k} is numerically singular"
                )));
            }
        }
        Ok(())
    }
}

/// Joint sparse codes and cluster labels for a patch set.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// 0-based best-transform index per patch.
    pub labels: Vec<usize>,
    /// Sparse codes, one column per patch.
    pub codes: Array2<f64>,
}

/// Simultaneous sparse coding and clustering: each patch goes to the
/// transform with the lowest coding cost (ties to the smaller index) and its
/// code is the hard-thresholded transformed patch.
pub fn sparse_code_and_cluster(
    patches: &Array2<f64>,
    union: &TransformUnion,
    gamma: f64,
) -> Result<Clustering> {
    sparse_code_and_cluster_with_penalty(patches, union, gamma, None)
}

/// Clustering with an optional per-cluster cost offset proportional to patch
/// energy (`cost += offset[k] * ||x_i||^2`); the training step uses this to
/// keep the alternation an exact minimization of its full objective.
pub(crate) fn sparse_code_and_cluster_with_penalty(
    patches: &Array2<f64>,
    union: &TransformUnion,
    gamma: f64,
    energy_offsets: Option<&[f64]>,
) -> Result<Clustering> {
    let m = union.patch_dim();
    if patches.nrows() != m {
        return Err(CoreError::DimensionMismatch(format!(
            "patches have dimension {}, transforms expect {m}",
            patches.nrows()
        )));
    }
    if gamma < 0.0 {
        return Err(CoreError::InvalidParameter("gamma must be >= 0".into()));
    }
    let n = patches.ncols();
    let k = union.k();

    // Per-cluster transformed patches, built block-wise to bound memory.
    const BLOCK: usize = 8192;
    let mut labels = vec![0usize; n];
    let mut codes = Array2::zeros((m, n));
    let mut start = 0;
    while start < n {
        let stop = (start + BLOCK).min(n);
        let block = patches.slice(ndarray::s![.., start..stop]);
        let transformed: Vec<Array2<f64>> = union
            .transforms
            .iter()
            .map(|t| t.dot(&block))
            .collect();
        let best: Vec<usize> = (0..stop - start)
            .into_par_iter()
            .map(|i| {
                let energy: f64 = if energy_offsets.is_some() {
                    block.column(i).iter().map(|v| v * v).sum()
                } else {
                    0.0
                };
                let mut best_k = 0;
                let mut best_cost = f64::INFINITY;
                let g2 = gamma * gamma;
                for kk in 0..k {
                    let mut cost: f64 = transformed[kk]
                        .column(i)
                        .iter()
                        .map(|&x| (x * x).min(g2))
                        .sum();
                    if let Some(off) = energy_offsets {
                        cost += off[kk] * energy;
                    }
                    if cost < best_cost {
                        best_cost = cost;
                        best_k = kk;
                    }
                }
                best_k
            })
            .collect();
        for (i, &bk) in best.iter().enumerate() {
            labels[start + i] = bk;
            let col = transformed[bk].column(i);
            for (row, &v) in col.iter().enumerate() {
                codes[[row, start + i]] = if v.abs() >= gamma { v } else { 0.0 };
            }
        }
        start = stop;
    }
    Ok(Clustering { labels, codes })
}
