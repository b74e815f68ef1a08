//! The high-frequency penalty filter: a discretized Laplacian of Gaussian,
//! mean-subtracted so constants map exactly to zero.

use ndarray::Array2;

use super::conv::{conv2_reflect, conv2_reflect_adjoint};
use crate::error::{CoreError, Result};

/// Zero-DC Laplacian-of-Gaussian kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct HighFreqFilter {
    pub kernel: Array2<f64>,
}

impl HighFreqFilter {
    /// 15x15, std 0.5: the default high-frequency penalty.
    pub fn default_log() -> Self {
        log_kernel(0.5, 15).expect("valid default parameters")
    }

    /// Filters an image (reflect boundary).
    pub fn apply(&self, img: &Array2<f64>) -> Array2<f64> {
        conv2_reflect(img, &self.kernel)
    }

    /// Exact adjoint of [`Self::apply`].
    pub fn apply_adjoint(&self, g: &Array2<f64>) -> Array2<f64> {
        conv2_reflect_adjoint(g, &self.kernel)
    }
}

/// Discretized LoG of the given std and odd kernel size, mean-subtracted to
/// enforce an exactly zero DC response.
pub fn log_kernel(std: f64, size: usize) -> Result<HighFreqFilter> {
    if !(std > 0.0) {
        return Err(CoreError::InvalidParameter("LoG std must be positive".into()));
    }
    if size % 2 == 0 {
        return Err(CoreError::InvalidParameter(format!(
            "LoG kernel size must be odd, got {size}"
        )));
    }
    let half = (size / 2) as isize;
    let s2 = std * std;
    let mut kernel = Array2::zeros((size, size));
    for r in 0..size {
        for c in 0..size {
            let y = (r as isize - half) as f64;
            let x = (c as isize - half) as f64;
            let r2 = x * x + y * y;
            kernel[[r, c]] = -1.0 / (std::f64::consts::PI * s2 * s2)
                * (1.0 - r2 / (2.0 * s2))
                * (-r2 / (2.0 * s2)).exp();
        }
    }
    let mean = kernel.sum() / (size * size) as f64;
    kernel.mapv_inplace(|v| v - mean);
    Ok(HighFreqFilter { kernel })
}
