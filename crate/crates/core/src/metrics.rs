//! Image quality metrics: RMSE in offset-HU, SNR in dB, and mean SSIM.

use ndarray::Array2;

use crate::ct::Image;
use crate::error::{CoreError, Result};

/// One row of a metric report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub rmse_hu: f64,
    pub snr_db: f64,
    pub ssim: f64,
}

/// Evaluates all three metrics over the full grid.
pub fn evaluate(x_hat: &Image, x_star: &Image) -> Result<MetricReport> {
    Ok(MetricReport {
        rmse_hu: rmse_hu(x_hat, x_star, None)?,
        snr_db: snr_db(x_hat, x_star)?,
        ssim: ssim(x_hat, x_star)?,
    })
}

fn check_same_grid(a: &Image, b: &Image) -> Result<()> {
    if a.grid != b.grid {
        return Err(CoreError::DimensionMismatch(
            "metric operands live on different grids".into(),
        ));
    }
    Ok(())
}

/// Root-mean-square error in HU over `mask` (default: full grid):
/// `sqrt(sum_j (x_hat_j - x_star_j)^2 / N)`.
pub fn rmse_hu(x_hat: &Image, x_star: &Image, mask: Option<&Array2<bool>>) -> Result<f64> {
    check_same_grid(x_hat, x_star)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    match mask {
        None => {
            for (a, b) in x_hat.pixels.iter().zip(x_star.pixels.iter()) {
                sum += (a - b).powi(2);
            }
            n = x_hat.pixels.len();
        }
        Some(m) => {
            if m.dim() != x_hat.pixels.dim() {
                return Err(CoreError::DimensionMismatch("mask shape".into()));
            }
            for ((a, b), keep) in x_hat.pixels.iter().zip(x_star.pixels.iter()).zip(m.iter()) {
                if *keep {
                    sum += (a - b).powi(2);
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(CoreError::InvalidParameter("empty metric mask".into()));
    }
    Ok((sum / n as f64).sqrt())
}

/// Signal-to-noise ratio `10 log10(||x*||^2 / ||x_hat - x*||^2)` in dB.
/// Identical images give `+inf`; a zero reference with nonzero error gives
/// `-inf`.
pub fn snr_db(x_hat: &Image, x_star: &Image) -> Result<f64> {
    check_same_grid(x_hat, x_star)?;
    let signal: f64 = x_star.pixels.iter().map(|v| v * v).sum();
    let noise: f64 = x_hat
        .pixels
        .iter()
        .zip(x_star.pixels.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    if signal == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps for the separable SSIM window.
fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as isize;
    let mut sum = 0.0;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = (i as isize - half) as f64;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *t;
    }
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Gaussian-weighted local means via separable passes, valid region only.
fn local_means(img: &Array2<f64>, taps: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = img.dim();
    let vw = w - SSIM_WINDOW + 1;
    let vh = h - SSIM_WINDOW + 1;
    let mut horiz = Array2::zeros((h, vw));
    for r in 0..h {
        for c in 0..vw {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * img[[r, c + k]];
            }
            horiz[[r, c]] = acc;
        }
    }
    let mut out = Array2::zeros((vh, vw));
    for r in 0..vh {
        for c in 0..vw {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * horiz[[r + k, c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Mean structural similarity with the standard 11x11 sigma=1.5 Gaussian
/// window; the dynamic range is taken from the reference image.
pub fn ssim(x_hat: &Image, x_star: &Image) -> Result<f64> {
    check_same_grid(x_hat, x_star)?;
    let (h, w) = x_hat.pixels.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::InvalidParameter(format!(
            "image must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM"
        )));
    }
    let lo = x_star.pixels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x_star.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range == 0.0 {
        return Err(CoreError::InvalidParameter(
            "reference image is constant; SSIM dynamic range is zero".into(),
        ));
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);

    let taps = gaussian_taps();
    let a = &x_hat.pixels;
    let b = &x_star.pixels;
    let mu_a = local_means(a, &taps);
    let mu_b = local_means(b, &taps);
    let aa = local_means(&(a * a), &taps);
    let bb = local_means(&(b * b), &taps);
    let ab = local_means(&(a * b), &taps);

    let mut total = 0.0;
    let (vh, vw) = mu_a.dim();
    for r in 0..vh {
        for c in 0..vw {
            let (ma, mb) = (mu_a[[r, c]], mu_b[[r, c]]);
            let va = aa[[r, c]] - ma * ma;
            let vb = bb[[r, c]] - mb * mb;
            let cov = ab[[r, c]] - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
        }
    }
    Ok(total / (vh * vw) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ct::ImageGrid;

    fn img_from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        let grid = ImageGrid::new(n, n, 1.0).unwrap();
        Image::new(grid, Array2::from_shape_fn((n, n), |(r, c)| f(r, c))).unwrap()
    }

    #[test]
    fn rmse_reference_cases() {
        let a = img_from_fn(16, |_, _| 1.0);
        let b = img_from_fn(16, |_, _| 0.0);
        assert_eq!(rmse_hu(&a, &a, None).unwrap(), 0.0);
        assert!((rmse_hu(&a, &b, None).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rmse_empty_mask_errors() {
        let a = img_from_fn(16, |_, _| 1.0);
        let mask = Array2::from_elem((16, 16), false);
        assert!(rmse_hu(&a, &a, Some(&mask)).is_err());
    }

    #[test]
    fn snr_reference_cases() {
        let a = img_from_fn(16, |r, c| (r + c) as f64 + 1.0);
        let doubled = Image::new(a.grid, a.pixels.mapv(|v| 2.0 * v)).unwrap();
        // ||x_hat - x*|| = ||x*|| when x_hat = 2 x*.
        assert!(snr_db(&doubled, &a).unwrap().abs() < 1e-12);
        assert_eq!(snr_db(&a, &a).unwrap(), f64::INFINITY);
        let zero = img_from_fn(16, |_, _| 0.0);
        assert_eq!(snr_db(&a, &zero).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn ssim_identity_and_shift() {
        let a = img_from_fn(32, |r, c| ((r * 7 + c * 13) % 29) as f64);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let shifted = Image::new(a.grid, a.pixels.mapv(|v| v + 100.0)).unwrap();
        assert!(ssim(&shifted, &a).unwrap() < 1.0);
    }

    #[test]
    fn ssim_constant_reference_errors() {
        let a = img_from_fn(16, |_, _| 3.0);
        let b = img_from_fn(16, |r, _| r as f64);
        assert!(ssim(&b, &a).is_err());
    }
}
