//! Model-based iterative reconstruction: PWLS-EP, PWLS-ULTRA and PnP-ADMM,
//! all supporting an optional momentum anchor `mu * ||x - x_tilde||^2`.
//!
//! Public images are offset-HU. Internally the solvers keep the unknown in
//! HU and fold the HU->attenuation scale into the measurement instead
//! (`y / kappa` with `kappa = mu_water / 1000`), which puts the data term,
//! the HU-scale regularizers and the momentum term on a common footing.

mod admm;
mod denoise;
mod ep;
mod ultra_recon;

pub use admm::{pnp_admm_reconstruct, AdmmParams, AdmmReport, AdmmResult};
pub use denoise::{apply_denoiser, DenoiserKind, DenoiserRef};
pub use ep::{hyperbola, pwls_ep_reconstruct, EpParams, EpReport, EpResult};
pub use ultra_recon::{pwls_ultra_reconstruct, UltraReconParams, UltraReport, UltraResult};

use ndarray::Array2;

use crate::ct::{Image, Sinogram, SystemMatrix};
use crate::error::{CoreError, Result};
use crate::sim::{WeightVector, HU_WATER, MU_WATER_PER_MM};

/// Attenuation per offset-HU.
pub(crate) const KAPPA: f64 = MU_WATER_PER_MM / HU_WATER;

/// Gradient of the data-fidelity term `0.5 ||y - A x||^2_W` with respect to
/// an attenuation image: `A^T W (A x - y)`.
pub fn pwls_data_grad(
    a: &SystemMatrix,
    w: &WeightVector,
    y: &Sinogram,
    x_mu: &Array2<f64>,
) -> Result<Array2<f64>> {
    if x_mu.dim() != (a.grid.n_rows, a.grid.n_cols) {
        return Err(CoreError::DimensionMismatch(
            "attenuation image does not match matrix grid".into(),
        ));
    }
    if y.geometry != a.geometry || w.values.dim() != y.values.dim() {
        return Err(CoreError::DimensionMismatch(
            "sinogram/weights do not match matrix geometry".into(),
        ));
    }
    let x: Vec<f64> = x_mu.iter().copied().collect();
    let mut r = a.apply(&x);
    for ((ri, yi), wi) in r.iter_mut().zip(y.values.iter()).zip(w.values.iter()) {
        *ri = wi * (*ri - yi);
    }
    let g = a.apply_transpose(&r);
    Ok(Array2::from_shape_vec((a.grid.n_rows, a.grid.n_cols), g).expect("grid shape"))
}

/// Validates solver inputs and returns flattened weights and the HU-domain
/// measurement `y / kappa`.
pub(crate) fn hu_domain_inputs(
    a: &SystemMatrix,
    w: &WeightVector,
    y: &Sinogram,
    x0: &Image,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if y.geometry != a.geometry {
        return Err(CoreError::DimensionMismatch(
            "sinogram geometry does not match system matrix".into(),
        ));
    }
    if w.values.dim() != y.values.dim() {
        return Err(CoreError::DimensionMismatch(
            "weights do not match sinogram".into(),
        ));
    }
    if x0.grid != a.grid {
        return Err(CoreError::DimensionMismatch(
            "initial image does not match matrix grid".into(),
        ));
    }
    let w_flat: Vec<f64> = w.values.iter().copied().collect();
    let y_hu: Vec<f64> = y.values.iter().map(|v| v / KAPPA).collect();
    Ok((w_flat, y_hu))
}

/// `0.5 ||y_hu - A x||^2_W` for a flat HU image.
pub(crate) fn data_term(a: &SystemMatrix, w: &[f64], y_hu: &[f64], x: &[f64]) -> f64 {
    let ax = a.apply(x);
    ax.iter()
        .zip(y_hu)
        .zip(w)
        .map(|((axi, yi), wi)| 0.5 * wi * (axi - yi).powi(2))
        .sum()
}

/// `A^T W (A x - y_hu)` for a flat HU image.
pub(crate) fn data_grad(a: &SystemMatrix, w: &[f64], y_hu: &[f64], x: &[f64]) -> Vec<f64> {
    let mut r = a.apply(x);
    for ((ri, yi), wi) in r.iter_mut().zip(y_hu).zip(w) {
        *ri = wi * (*ri - *yi);
    }
    a.apply_transpose(&r)
}

/// Progress of one preconditioned CG solve.
#[derive(Debug, Clone)]
pub(crate) struct CgReport {
    pub iters: usize,
    pub rel_residual: f64,
    /// Quadratic objective `0.5 x^T H x - b^T x` after each iteration.
    pub q_trace: Vec<f64>,
}

/// Jacobi-preconditioned conjugate gradient on `H x = b`, capped at
/// `max_iters` or a relative-residual tolerance, whichever first.
pub(crate) fn pcg<F>(
    apply_h: F,
    b: &[f64],
    x0: &[f64],
    diag: &[f64],
    max_iters: usize,
    tol: f64,
    context: &str,
) -> Result<(Vec<f64>, CgReport)>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = x0.to_vec();
    let hx = apply_h(&x);
    let mut r: Vec<f64> = b.iter().zip(&hx).map(|(bi, hi)| bi - hi).collect();
    let mut q = 0.5 * dot(&x, &hx) - dot(b, &x);
    let mut q_trace = vec![q];

    let b_norm = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = dot(&r, &r).sqrt() / b_norm;

    let mut iter = 0;
    while iter < max_iters && rel > tol {
        let hp = apply_h(&p);
        let php = dot(&p, &hp);
        if !php.is_finite() || php <= 0.0 {
            return Err(CoreError::CgBreakdown {
                context: format!("{context}: non-positive curvature {php}"),
                iter,
                trace: q_trace,
            });
        }
        let alpha = rz / php;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        q -= 0.5 * alpha * rz;
        q_trace.push(q);
        if !q.is_finite() {
            return Err(CoreError::CgBreakdown {
                context: format!("{context}: non-finite objective"),
                iter,
                trace: q_trace,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        iter += 1;
    }
    Ok((
        x,
        CgReport {
            iters: iter,
            rel_residual: rel,
            q_trace,
        },
    ))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn clip_nonneg(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub(crate) fn image_from_flat(grid: crate::ct::ImageGrid, x: Vec<f64>) -> Image {
    Image {
        grid,
        pixels: Array2::from_shape_vec((grid.n_rows, grid.n_cols), x).expect("grid shape"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ct::{build_system_matrix, forward_project, FanBeamGeometry, ImageGrid, ScanMode};
    use ndarray::Array2;

    fn toy() -> (SystemMatrix, ImageGrid) {
        let grid = ImageGrid::new(8, 8, 1.0).unwrap();
        let geom = FanBeamGeometry::new(12, 10, 0.9, 0.0, 0.0, ScanMode::Parallel).unwrap();
        (build_system_matrix(&geom, &grid).unwrap(), grid)
    }

    #[test]
    fn data_grad_zero_at_consistent_data() {
        let (a, _grid) = toy();
        let x = Array2::from_shape_fn((8, 8), |(r, c)| 0.01 * (r + 2 * c) as f64);
        let y = forward_project(&a, &x).unwrap();
        let w = WeightVector::ones_like(&y);
        let g = pwls_data_grad(&a, &w, &y, &x).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn data_grad_zero_weights() {
        let (a, _grid) = toy();
        let x = Array2::from_elem((8, 8), 0.02);
        let y = Sinogram::zeros(a.geometry);
        let w = WeightVector::new(Array2::zeros(y.values.dim())).unwrap();
        let g = pwls_data_grad(&a, &w, &y, &x).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pcg_solves_small_spd_system() {
        // H = diag(2, 3, 5) plus a rank-one coupling.
        let h = |v: &[f64]| {
            let s: f64 = v.iter().sum();
            vec![
                2.0 * v[0] + 0.1 * s,
                3.0 * v[1] + 0.1 * s,
                5.0 * v[2] + 0.1 * s,
            ]
        };
        let b = vec![1.0, 2.0, 3.0];
        let diag = vec![2.1, 3.1, 5.1];
        let (x, rep) = pcg(h, &b, &[0.0; 3], &diag, 50, 1e-14, "toy").unwrap();
        let hx = h(&x);
        for (hi, bi) in hx.iter().zip(&b) {
            assert!((hi - bi).abs() < 1e-10);
        }
        // Quadratic objective decreases monotonically.
        assert!(rep.q_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}
