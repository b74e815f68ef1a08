//! Low-dose CT reconstruction toolkit.
//!
//! The crate bundles everything needed to run cascaded hybrid reconstruction
//! experiments on synthetic fan-beam/parallel-beam data:
//!
//! * [`ct`] — scan geometry, Siddon system matrices, forward/back projection
//!   and filtered back projection;
//! * [`sim`] — ellipse phantoms, Poisson+Gaussian sinogram simulation and
//!   statistical weights;
//! * [`ultra`] — learning a union of square sparsifying transforms with joint
//!   sparse coding and clustering;
//! * [`mbir`] — model-based iterative solvers (PWLS-EP, PWLS-ULTRA,
//!   PnP-ADMM) with an optional momentum anchor and pluggable denoisers;
//! * [`neural`] — a small residual CNN trained by SGD with a
//!   high-frequency-penalty loss;
//! * [`pipeline`] — parallel/serial SUPER training and inference plus a deep
//!   boosting baseline;
//! * [`metrics`] — RMSE (HU), SNR (dB) and SSIM;
//! * [`io`] — raster files, checkpoints and dataset directories.
//!
//! Images are held in offset Hounsfield units (air = 0, water = 1000)
//! everywhere outside the projector, which works in attenuation (1/mm).

pub mod ct;
pub mod error;
pub mod io;
pub mod mbir;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod ultra;

pub use error::{CoreError, Result};
