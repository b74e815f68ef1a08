//! Measurement simulation: HU <-> attenuation conversion, Poisson+Gaussian
//! sinogram noise and the statistical ray weights used by the PWLS solvers.

mod dataset;
mod phantom;

pub use dataset::{make_dataset, make_dataset_with, Dataset, DatasetManifest, Sample};
pub use phantom::{make_phantom, random_phantom_spec, shepp_logan_spec, Ellipse, PhantomSpec};

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ct::{forward_project, Image, Sinogram, SystemMatrix};
use crate::error::{CoreError, Result};
use crate::rng::stream_rng;

/// Attenuation of water at ~70 keV, 1/mm. Keeps the line integral of a
/// 200 mm water path at 4, a realistic low-dose operating point for I0 = 1e4.
pub const MU_WATER_PER_MM: f64 = 0.02;

/// Offset-HU of water (air = 0).
pub const HU_WATER: f64 = 1000.0;

/// Offset-HU -> attenuation (1/mm); negative attenuation clips to zero.
pub fn hu_to_mu(image: &Image) -> Array2<f64> {
    image
        .pixels
        .mapv(|hu| (MU_WATER_PER_MM * hu / HU_WATER).max(0.0))
}

/// Attenuation (1/mm) -> offset-HU, the linear inverse of [`hu_to_mu`].
pub fn hu_from_mu(mu: f64) -> f64 {
    mu * HU_WATER / MU_WATER_PER_MM
}

/// Photon statistics of the scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Incident photons per ray.
    pub i0: f64,
    /// Variance of the additive electronic (Gaussian) noise, counts^2.
    pub sigma2: f64,
    /// Positive count floor applied before the log.
    pub epsilon: f64,
    /// Replaces the Poisson draw by its mean and omits the Gaussian noise.
    pub deterministic_mode: bool,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            i0: 1e4,
            sigma2: 25.0,
            epsilon: 0.1,
            deterministic_mode: false,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.i0 > 0.0) {
            return Err(CoreError::InvalidParameter("I0 must be positive".into()));
        }
        if self.sigma2 < 0.0 {
            return Err(CoreError::InvalidParameter("sigma2 must be >= 0".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < self.i0) {
            return Err(CoreError::InvalidParameter(
                "epsilon must satisfy 0 < epsilon < I0".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Per-ray statistical weights: the estimated inverse variance of each
/// log-transformed measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub values: Array2<f64>,
}

impl WeightVector {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if !values.iter().all(|w| w.is_finite() && *w >= 0.0) {
            return Err(CoreError::InvalidParameter(
                "weights must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn ones_like(s: &Sinogram) -> Self {
        Self {
            values: Array2::ones(s.values.dim()),
        }
    }
}

/// Maximum line integral before `I0 * exp(-l)` starves to useless counts.
const MAX_LINE_INTEGRAL: f64 = 50.0;

/// Simulates a noisy log sinogram from a ground-truth image:
/// `y_i = -log(max(Poisson{I0 exp(-[A mu]_i)} + N(0, sigma2), eps) / I0)`.
///
/// Per-ray ChaCha streams derived from `(seed, ray)` make the result
/// independent of evaluation order; the same seed reproduces bit-identical
/// sinograms. In deterministic mode the Poisson draw is replaced by its mean
/// and the Gaussian noise is omitted, so `y = A mu(x)` exactly wherever the
/// mean count stays above the floor.
pub fn simulate_sinogram(x_star: &Image, a: &SystemMatrix, nm: &NoiseModel) -> Result<Sinogram> {
    nm.validate()?;
    let mu = hu_to_mu(x_star);
    let ideal = forward_project(a, &mu)?;

    let starved: Vec<usize> = ideal
        .values
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > MAX_LINE_INTEGRAL)
        .map(|(i, _)| i)
        .collect();
    if !starved.is_empty() {
        return Err(CoreError::PhotonStarvation {
            limit: MAX_LINE_INTEGRAL,
            rays: starved,
        });
    }

    let n_det = a.geometry.n_detectors;
    let log_floor = (nm.epsilon / nm.i0).ln();
    let values = Array2::from_shape_fn(ideal.values.dim(), |(v, d)| {
        let l = ideal.values[[v, d]];
        if nm.deterministic_mode {
            let mean = nm.i0 * (-l).exp();
            if mean >= nm.epsilon {
                l
            } else {
                -log_floor
            }
        } else {
            let ray = (v * n_det + d) as u64;
            let mut rng = stream_rng(nm.seed, ray);
            let mean = nm.i0 * (-l).exp();
            let mut counts = sample_poisson(&mut rng, mean);
            if nm.sigma2 > 0.0 {
                let g: f64 = rng.sample(StandardNormal);
                counts += nm.sigma2.sqrt() * g;
            }
            -(counts.max(nm.epsilon) / nm.i0).ln()
        }
    });
    Sinogram::new(a.geometry, values)
}

/// Delta-method inverse variance of a log-transformed count:
/// `w_i = I_hat^2 / (I_hat + sigma2)` with `I_hat = I0 exp(-y_i)`.
pub fn compute_weights(y: &Sinogram, nm: &NoiseModel) -> Result<WeightVector> {
    nm.validate()?;
    let values = y.values.mapv(|yi| {
        let i_hat = nm.i0 * (-yi).exp();
        i_hat * i_hat / (i_hat + nm.sigma2)
    });
    WeightVector::new(values)
}

/// Poisson sampler: exact CDF inversion for means up to 1000 (split into
/// chunks so `exp(-mean)` stays representable), Gaussian approximation
/// (rounded, clipped at zero) above.
fn sample_poisson<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if mean > 1000.0 {
        let g: f64 = rng.sample(StandardNormal);
        return (mean + mean.sqrt() * g).round().max(0.0);
    }
    let n_chunks = (mean / 500.0).ceil().max(1.0) as usize;
    let lam = mean / n_chunks as f64;
    let mut total = 0.0;
    for _ in 0..n_chunks {
        total += poisson_inversion(rng, lam);
    }
    total
}

fn poisson_inversion<R: Rng>(rng: &mut R, lam: f64) -> f64 {
    let u: f64 = rng.random();
    let cap = (lam + 60.0 * lam.sqrt() + 30.0) as usize;
    let mut p = (-lam).exp();
    let mut cdf = p;
    let mut k = 0usize;
    while u > cdf && k < cap {
        k += 1;
        p *= lam / k as f64;
        cdf += p;
    }
    k as f64
}
