//! Loss, exact backpropagated gradients and the SGD training loop.

use ndarray::{Array1, Array4};
use serde::{Deserialize, Serialize};

use super::{net_backward, net_forward, ConvNetParams, HighFreqFilter};
use crate::ct::Image;
use crate::error::{CoreError, Result};

/// SGD settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Learning rate decays geometrically from `lr_start` to `lr_end` over
    /// the run.
    pub lr_start: f64,
    pub lr_end: f64,
    pub batch_size: usize,
    pub momentum: f64,
    /// Weight of the high-frequency penalty term.
    pub alpha: f64,
    /// Std of the Gaussian filter initialization.
    pub init_std: f64,
    /// Normalization of the descent direction: the per-pixel mean gradient
    /// is multiplied by this factor. Calibrates the stated learning-rate
    /// schedule to this network size.
    pub grad_scale: f64,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            lr_start: 1e-3,
            lr_end: 1e-4,
            batch_size: 1,
            momentum: 0.99,
            alpha: 10.0,
            init_std: (0.005f64).sqrt(),
            grad_scale: 8.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::InvalidParameter(
                "epochs and batch size must be >= 1".into(),
            ));
        }
        if !(self.lr_start >= 0.0 && self.lr_end >= 0.0) {
            return Err(CoreError::InvalidParameter("learning rates must be >= 0".into()));
        }
        if self.alpha < 0.0 {
            return Err(CoreError::InvalidParameter("alpha must be >= 0".into()));
        }
        Ok(())
    }
}

/// Parameter-space gradient, same shapes as the network layers.
#[derive(Debug, Clone)]
pub struct ConvNetGrads {
    pub layers: Vec<(Array4<f64>, Array1<f64>)>,
}

impl ConvNetGrads {
    pub fn zeros_like(params: &ConvNetParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| (Array4::zeros(l.weight.dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &ConvNetGrads, scale: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.zip_mut_with(ow, |a, &o| *a += scale * o);
            b.zip_mut_with(ob, |a, &o| *a += scale * o);
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|(w, b)| {
                w.iter().map(|v| v * v).sum::<f64>() + b.iter().map(|v| v * v).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Loss over a batch in offset-HU units,
/// `sum_n ||G(x_n) - x*_n||^2 + alpha ||F(G(x_n)) - F(x*_n)||^2`,
/// and its exact backpropagated gradient with respect to the parameters.
pub fn loss_and_grad(
    params: &ConvNetParams,
    batch: &[(&Image, &Image)],
    alpha: f64,
    filter: &HighFreqFilter,
) -> Result<(f64, ConvNetGrads)> {
    params.validate()?;
    let s = params.io_scale;
    let mut loss = 0.0;
    let mut grads = ConvNetGrads::zeros_like(params);
    for (input, target) in batch {
        if input.pixels.dim() != target.pixels.dim() {
            return Err(CoreError::DimensionMismatch(
                "training pair shapes differ".into(),
            ));
        }
        let x_scaled = input.pixels.mapv(|v| v * s);
        let (residual, cache) = net_forward(params, &x_scaled);
        if !residual.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite("network activations".into()));
        }
        let g_out = &input.pixels + &residual.mapv(|v| v / s);
        let err = &g_out - &target.pixels;
        loss += err.iter().map(|v| v * v).sum::<f64>();

        // dL/dG = 2 err + 2 alpha F^T (F(G) - F(x*)).
        let mut g_img = err.mapv(|v| 2.0 * v);
        if alpha > 0.0 {
            let f_err = filter.apply(&g_out) - filter.apply(&target.pixels);
            loss += alpha * f_err.iter().map(|v| v * v).sum::<f64>();
            g_img = g_img + filter.apply_adjoint(&f_err).mapv(|v| 2.0 * alpha * v);
        }
        // Residual branch sees dL/dresidual = dL/dG / s.
        let g_residual = g_img.mapv(|v| v / s);
        let sample = net_backward(params, &cache, &g_residual);
        grads.add_scaled(&sample, 1.0);
    }
    Ok((loss, grads))
}

/// Trained network plus the per-epoch mean loss trace (normalized units).
#[derive(Debug, Clone)]
pub struct TrainedNet {
    pub params: ConvNetParams,
    pub epoch_loss: Vec<f64>,
}

/// SGD with momentum on the supervised loss.
///
/// The descent direction is the gradient of the per-pixel mean loss on the
/// `io_scale`-normalized images (a constant multiple of the HU-unit loss, so
/// the minimizer is unchanged); this keeps the stated learning-rate schedule
/// on a sane scale. The learning rate decays geometrically from `lr_start`
/// to `lr_end` over all steps. Zero learning rate leaves the parameters
/// bit-identical.
pub fn train_supervised(pairs: &[(Image, Image)], cfg: &TrainConfig) -> Result<TrainedNet> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(CoreError::InvalidParameter("no training pairs".into()));
    }
    let filter = HighFreqFilter::default_log();
    let mut params = ConvNetParams::small_resnet(cfg.seed, cfg.init_std);
    let s = params.io_scale;
    let mut velocity = ConvNetGrads::zeros_like(&params);

    let n_batches_per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * n_batches_per_epoch;
    let mut step = 0usize;
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for _epoch in 0..cfg.epochs {
        let mut epoch_sum = 0.0;
        for chunk in pairs.chunks(cfg.batch_size) {
            let lr = if total_steps <= 1 || cfg.lr_start == 0.0 {
                cfg.lr_start
            } else {
                let t = step as f64 / (total_steps - 1) as f64;
                cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(t)
            };
            let batch: Vec<(&Image, &Image)> = chunk.iter().map(|(a, b)| (a, b)).collect();
            let (loss_hu, grads_hu) = loss_and_grad(&params, &batch, cfg.alpha, &filter)?;
            if !loss_hu.is_finite() {
                return Err(CoreError::NonFinite(format!(
                    "training loss at step {step}; last stable checkpoint is step {}",
                    step.saturating_sub(1)
                )));
            }
            let n_px: usize = chunk.iter().map(|(a, _)| a.pixels.len()).sum();
            let scale = cfg.grad_scale * s * s / n_px as f64;
            epoch_sum += loss_hu * s * s / n_px as f64;

            // v <- m v - lr g; theta <- theta + v.
            for (vl, gl) in velocity.layers.iter_mut().zip(&grads_hu.layers) {
                vl.0.zip_mut_with(&gl.0, |v, &g| *v = cfg.momentum * *v - lr * scale * g);
                vl.1.zip_mut_with(&gl.1, |v, &g| *v = cfg.momentum * *v - lr * scale * g);
            }
            for (layer, vl) in params.layers.iter_mut().zip(&velocity.layers) {
                layer.weight.zip_mut_with(&vl.0, |w, &v| *w += v);
                layer.bias.zip_mut_with(&vl.1, |b, &v| *b += v);
            }
            step += 1;
        }
        epoch_loss.push(epoch_sum / n_batches_per_epoch as f64);
    }
    Ok(TrainedNet { params, epoch_loss })
}
