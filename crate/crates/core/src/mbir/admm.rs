//! Plug-and-play ADMM: the regularizer proximal step is an off-the-shelf
//! denoiser applied at strength `sigma_k = sqrt(beta / rho_k)`.

use serde::{Deserialize, Serialize};

use super::{apply_denoiser, clip_nonneg, hu_domain_inputs, image_from_flat, pcg, DenoiserRef};
use crate::ct::{Image, Sinogram, SystemMatrix};
use crate::error::{CoreError, Result};
use crate::sim::WeightVector;

/// Settings for [`pnp_admm_reconstruct`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmParams {
    /// Initial penalty parameter.
    pub rho0: f64,
    /// Per-iteration penalty growth, >= 1.
    pub gamma_k: f64,
    /// Regularizer weight entering `sigma_k = sqrt(beta / rho_k)`.
    pub beta: f64,
    /// Momentum weight on `||x - x_tilde||^2`.
    pub mu: f64,
    pub iters: usize,
    pub denoiser: DenoiserRef,
    /// CG iteration cap for each x-update.
    pub inner: usize,
    pub cg_tol: f64,
    pub nonneg: bool,
}

impl AdmmParams {
    pub fn with_denoiser(denoiser: DenoiserRef) -> Self {
        Self {
            rho0: 1e6,
            gamma_k: 1.0,
            beta: 25.0,
            mu: 5e5,
            iters: 100,
            denoiser,
            inner: 20,
            cg_tol: 1e-8,
            nonneg: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 > 0.0) {
            return Err(CoreError::InvalidParameter("rho0 must be positive".into()));
        }
        if self.gamma_k < 1.0 {
            return Err(CoreError::InvalidParameter("gamma_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-iteration diagnostics of a PnP-ADMM run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmmReport {
    /// Normalized primal residual `||x - v|| / sqrt(N_p)` per iteration.
    pub primal_residual: Vec<f64>,
    /// Denoiser strength per iteration.
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AdmmResult {
    pub image: Image,
    pub report: AdmmReport,
}

/// ADMM on the split problem: per iteration
/// `x <- argmin 0.5||y-Ax||^2_W + mu||x-x_tilde||^2 + (rho_k/2)||x-(v-u)||^2`
/// (by CG), `v <- D_sigma(x+u)` with `sigma_k = sqrt(beta/rho_k)`,
/// `u <- u + x - v`, `rho_{k+1} = gamma_k rho_k`.
pub fn pnp_admm_reconstruct(
    y: &Sinogram,
    w: &WeightVector,
    a: &SystemMatrix,
    p: &AdmmParams,
    x_tilde: &Image,
    x0: &Image,
) -> Result<AdmmResult> {
    p.validate()?;
    let (w_flat, y_hu) = hu_domain_inputs(a, w, y, x0)?;
    if x_tilde.grid != a.grid {
        return Err(CoreError::DimensionMismatch(
            "anchor image does not match matrix grid".into(),
        ));
    }
    let grid = a.grid;
    let n = grid.n_pixels();
    let anchor: Vec<f64> = x_tilde.pixels.iter().copied().collect();

    let aty: Vec<f64> = a.apply_transpose(
        &y_hu
            .iter()
            .zip(&w_flat)
            .map(|(yi, wi)| wi * yi)
            .collect::<Vec<_>>(),
    );
    let base_diag = a.normal_diag(&w_flat);

    let mut x: Vec<f64> = x0.pixels.iter().copied().collect();
    let mut v = x.clone();
    let mut u = vec![0.0; n];
    let mut rho = p.rho0;
    let mut report = AdmmReport {
        primal_residual: Vec::with_capacity(p.iters),
        sigma: Vec::with_capacity(p.iters),
    };

    for _ in 0..p.iters {
        // x-update: (A^T W A + 2 mu I + rho I) x = A^T W y + 2 mu x_tilde + rho (v - u).
        let rhs: Vec<f64> = (0..n)
            .map(|i| aty[i] + 2.0 * p.mu * anchor[i] + rho * (v[i] - u[i]))
            .collect();
        let diag: Vec<f64> = base_diag.iter().map(|d| d + 2.0 * p.mu + rho).collect();
        let apply_h = |xv: &[f64]| -> Vec<f64> {
            let mut av = a.apply(xv);
            for (r, wi) in av.iter_mut().zip(&w_flat) {
                *r *= *wi;
            }
            let mut out = a.apply_transpose(&av);
            for (o, xi) in out.iter_mut().zip(xv) {
                *o += (2.0 * p.mu + rho) * xi;
            }
            out
        };
        let (x_new, _) = pcg(apply_h, &rhs, &x, &diag, p.inner, p.cg_tol, "PnP-ADMM x-update")?;
        x = x_new;

        // v-update through the denoiser at sigma_k = sqrt(beta / rho_k).
        let sigma = (p.beta / rho).sqrt();
        let xu: Vec<f64> = (0..n).map(|i| x[i] + u[i]).collect();
        let denoised = apply_denoiser(&p.denoiser, &image_from_flat(grid, xu), sigma)?;
        v = denoised.pixels.iter().copied().collect();

        // u-update and penalty growth.
        let mut sq = 0.0;
        for i in 0..n {
            let diff = x[i] - v[i];
            u[i] += diff;
            sq += diff * diff;
        }
        report.primal_residual.push((sq / n as f64).sqrt());
        report.sigma.push(sigma);
        rho *= p.gamma_k;
    }

    if p.nonneg {
        clip_nonneg(&mut x);
    }
    Ok(AdmmResult {
        image: image_from_flat(grid, x),
        report,
    })
}
