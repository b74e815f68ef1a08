//! Pluggable denoisers for the PnP solver: Gaussian blur and nonlocal means
//! reference implementations, plus an external-command protocol.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ct::Image;
use crate::error::{CoreError, Result};

/// Which denoiser backs `D_sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DenoiserKind {
    GaussianBlur,
    NonlocalMeans,
    /// Spawns `command args... <in_base> <out_base> <sigma>`; the image is
    /// exchanged as a float32 raster (payload + JSON sidecar) at those base
    /// paths.
    External { command: Vec<String> },
}

/// A denoiser together with its strength mapping: the backend parameter is
/// `sigma_scale * sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserRef {
    pub kind: DenoiserKind,
    pub sigma_scale: f64,
}

impl DenoiserRef {
    pub fn gaussian(sigma_scale: f64) -> Self {
        Self {
            kind: DenoiserKind::GaussianBlur,
            sigma_scale,
        }
    }

    pub fn nonlocal_means(sigma_scale: f64) -> Self {
        Self {
            kind: DenoiserKind::NonlocalMeans,
            sigma_scale,
        }
    }
}

const NLM_SEARCH: usize = 11;
const NLM_PATCH: usize = 5;

/// Applies `D_sigma` to an image: a pure, deterministic map. `sigma = 0`
/// returns the input unchanged for every backend.
pub fn apply_denoiser(d: &DenoiserRef, image: &Image, sigma: f64) -> Result<Image> {
    if sigma < 0.0 {
        return Err(CoreError::InvalidParameter("sigma must be >= 0".into()));
    }
    if !image.pixels.iter().all(|v| v.is_finite()) {
        return Err(CoreError::NonFinite("denoiser input".into()));
    }
    let strength = d.sigma_scale * sigma;
    let out = match &d.kind {
        DenoiserKind::GaussianBlur => gaussian_blur(&image.pixels, strength),
        DenoiserKind::NonlocalMeans => nonlocal_means(&image.pixels, strength),
        DenoiserKind::External { command } => external(command, &image.pixels, strength)?,
    };
    if !out.iter().all(|v| v.is_finite()) {
        return Err(CoreError::NonFinite("denoiser output".into()));
    }
    Image::new(image.grid, out)
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - 1 - i;
        }
    }
    i as usize
}

/// Separable Gaussian convolution with reflect boundary; the kernel std is
/// `strength` in pixels and collapses to a delta as it goes to zero.
fn gaussian_blur(img: &Array2<f64>, strength: f64) -> Array2<f64> {
    if strength < 1e-9 {
        return img.clone();
    }
    let radius = (3.0 * strength).ceil() as isize;
    let mut taps = Vec::with_capacity(2 * radius as usize + 1);
    let mut sum = 0.0;
    for k in -radius..=radius {
        let v = (-(k as f64).powi(2) / (2.0 * strength * strength)).exp();
        taps.push(v);
        sum += v;
    }
    for t in &mut taps {
        *t /= sum;
    }
    let (h, w) = img.dim();
    let mut horiz = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ti, t) in taps.iter().enumerate() {
                let cc = reflect(c as isize + ti as isize - radius, w);
                acc += t * img[[r, cc]];
            }
            horiz[[r, c]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ti, t) in taps.iter().enumerate() {
                let rr = reflect(r as isize + ti as isize - radius, h);
                acc += t * horiz[[rr, c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Nonlocal means: 11x11 search window, 5x5 patches, exponential weights with
/// filtering strength `h = strength` on the intensity scale.
fn nonlocal_means(img: &Array2<f64>, strength: f64) -> Array2<f64> {
    if strength < 1e-9 {
        return img.clone();
    }
    use rayon::prelude::*;
    let (h, w) = img.dim();
    let sr = (NLM_SEARCH / 2) as isize;
    let pr = (NLM_PATCH / 2) as isize;
    let h2 = strength * strength;

    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut row = vec![0.0; w];
            for c in 0..w {
                let mut num = 0.0;
                let mut den = 0.0;
                for dr in -sr..=sr {
                    for dc in -sr..=sr {
                        let rr = r as isize + dr;
                        let cc = c as isize + dc;
                        if rr < 0 || rr >= h as isize || cc < 0 || cc >= w as isize {
                            continue;
                        }
                        // Mean squared patch difference, reflect-padded.
                        let mut dist = 0.0;
                        for pdr in -pr..=pr {
                            for pdc in -pr..=pr {
                                let a = img[[
                                    reflect(r as isize + pdr, h),
                                    reflect(c as isize + pdc, w),
                                ]];
                                let b = img[[
                                    reflect(rr + pdr, h),
                                    reflect(cc + pdc, w),
                                ]];
                                dist += (a - b).powi(2);
                            }
                        }
                        dist /= (NLM_PATCH * NLM_PATCH) as f64;
                        let weight = (-dist / h2).exp();
                        num += weight * img[[rr as usize, cc as usize]];
                        den += weight;
                    }
                }
                row[c] = num / den;
            }
            row
        })
        .collect();

    let mut out = Array2::zeros((h, w));
    for (r, row) in rows.into_iter().enumerate() {
        for (c, v) in row.into_iter().enumerate() {
            out[[r, c]] = v;
        }
    }
    out
}

/// External denoiser protocol: float32 raster + JSON sidecar in, same format
/// out, strength passed as the third argument.
fn external(command: &[String], img: &Array2<f64>, strength: f64) -> Result<Array2<f64>> {
    if command.is_empty() {
        return Err(CoreError::ExternalDenoiser("empty command".into()));
    }
    let dir = tempfile::tempdir()?;
    let in_base = dir.path().join("input");
    let out_base = dir.path().join("output");
    crate::io::write_raster_f32(
        &in_base,
        &img.iter().map(|&v| v as f32).collect::<Vec<_>>(),
        &[img.nrows(), img.ncols()],
        "offset-HU",
        "",
    )?;
    let status = std::process::Command::new(&command[0])
        .args(&command[1..])
        .arg(&in_base)
        .arg(&out_base)
        .arg(format!("{strength}"))
        .status()
        .map_err(|e| CoreError::ExternalDenoiser(format!("spawn failed: {e}")))?;
    if !status.success() {
        return Err(CoreError::ExternalDenoiser(format!(
            "command exited with {status}"
        )));
    }
    let (meta, data) = crate::io::read_raster_f32(&out_base)?;
    if meta.dims != [img.nrows(), img.ncols()] {
        return Err(CoreError::ExternalDenoiser(format!(
            "output dims {:?} do not match input {:?}",
            meta.dims,
            img.dim()
        )));
    }
    Ok(Array2::from_shape_vec(
        (img.nrows(), img.ncols()),
        data.into_iter().map(f64::from).collect(),
    )
    .expect("dims checked"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ct::ImageGrid;

    fn test_image() -> Image {
        let grid = ImageGrid::new(16, 16, 1.0).unwrap();
        Image::new(
            grid,
            Array2::from_shape_fn((16, 16), |(r, c)| ((r * 31 + c * 17) % 11) as f64 * 25.0),
        )
        .unwrap()
    }

    #[test]
    fn sigma_zero_is_identity() {
        let img = test_image();
        for d in [DenoiserRef::gaussian(1.0), DenoiserRef::nonlocal_means(1.0)] {
            let out = apply_denoiser(&d, &img, 0.0).unwrap();
            assert_eq!(out.pixels, img.pixels);
        }
    }

    #[test]
    fn constant_image_unchanged() {
        let grid = ImageGrid::new(16, 16, 1.0).unwrap();
        let img = Image::new(grid, Array2::from_elem((16, 16), 123.0)).unwrap();
        for d in [DenoiserRef::gaussian(1.0), DenoiserRef::nonlocal_means(1.0)] {
            let out = apply_denoiser(&d, &img, 5.0).unwrap();
            let max_dev = out
                .pixels
                .iter()
                .map(|v| (v - 123.0).abs())
                .fold(0.0, f64::max);
            assert!(max_dev < 1e-9, "{d:?} deviated by {max_dev}");
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let grid = ImageGrid::new(16, 16, 1.0).unwrap();
        let mut pixels = Array2::zeros((16, 16));
        pixels[[3, 3]] = f64::NAN;
        let img = Image {
            grid,
            pixels,
        };
        assert!(apply_denoiser(&DenoiserRef::gaussian(1.0), &img, 1.0).is_err());
    }

    #[test]
    fn blur_smooths_noise() {
        let img = test_image();
        let out = apply_denoiser(&DenoiserRef::gaussian(1.0), &img, 2.0).unwrap();
        let var = |p: &Array2<f64>| {
            let m = p.mean().unwrap();
            p.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        };
        assert!(var(&out.pixels) < var(&img.pixels));
    }
}
