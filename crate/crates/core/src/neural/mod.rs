//! The supervised module: a small residual CNN with hand-rolled
//! backpropagation, trained by SGD under a squared-error loss with a
//! Laplacian-of-Gaussian high-frequency penalty.

pub(crate) mod conv;
mod filters;
mod train;

pub use filters::{log_kernel, HighFreqFilter};
pub use train::{loss_and_grad, train_supervised, ConvNetGrads, TrainConfig, TrainedNet};

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::ct::Image;
use crate::error::{CoreError, Result};
use crate::rng::named_rng;

/// One 3x3 convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[c_out, c_in, 3, 3]`.
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

/// Parameters of the residual denoising network
/// `G(x) = x + s^{-1} net(s x)` with the fixed preset
/// conv(1->16) - ReLU - conv(16->16) - ReLU - conv(16->1).
///
/// `io_scale` (`s`) moves offset-HU images onto an O(1) activation scale; a
/// zero-weight network is exactly the identity map.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetParams {
    pub layers: Vec<ConvLayer>,
    pub io_scale: f64,
    pub init_seed: u64,
}

const HIDDEN: usize = 16;

impl ConvNetParams {
    /// Fresh network with i.i.d. zero-mean Gaussian filters of the given
    /// standard deviation and zero biases.
    pub fn small_resnet(init_seed: u64, init_std: f64) -> Self {
        let mut rng = named_rng(init_seed, "convnet-init");
        let shapes = [(HIDDEN, 1), (HIDDEN, HIDDEN), (1, HIDDEN)];
        let layers = shapes
            .iter()
            .map(|&(co, ci)| ConvLayer {
                weight: Array4::from_shape_fn((co, ci, 3, 3), |_| {
                    let g: f64 = rng.sample(StandardNormal);
                    init_std * g
                }),
                bias: Array1::zeros(co),
            })
            .collect();
        Self {
            layers,
            io_scale: 1e-3,
            init_seed,
        }
    }

    /// All-zero weights: the identity map.
    pub fn zeroed() -> Self {
        let mut p = Self::small_resnet(0, 0.0);
        for layer in &mut p.layers {
            layer.weight.fill(0.0);
            layer.bias.fill(0.0);
        }
        p
    }

    pub fn n_weights(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(CoreError::InvalidParameter("network has no layers".into()));
        }
        let mut c_in = 1;
        for (i, l) in self.layers.iter().enumerate() {
            let (co, ci, kh, kw) = l.weight.dim();
            if ci != c_in || kh != 3 || kw != 3 || l.bias.len() != co {
                return Err(CoreError::InvalidParameter(format!(
                    "layer {i} shape mismatch"
                )));
            }
            if !l.weight.iter().all(|v| v.is_finite()) || !l.bias.iter().all(|v| v.is_finite()) {
                return Err(CoreError::NonFinite(format!("layer {i} parameters")));
            }
            c_in = co;
        }
        if c_in != 1 {
            return Err(CoreError::InvalidParameter(
                "network must end in a single channel".into(),
            ));
        }
        Ok(())
    }
}

/// Forward activations kept for backpropagation.
pub(crate) struct ForwardCache {
    /// Input of each conv layer, `[c, h, w]`.
    pub inputs: Vec<Array3<f64>>,
    /// Pre-activation output of each conv layer.
    pub pre_acts: Vec<Array3<f64>>,
}

/// Residual branch of the network on an already-scaled image.
pub(crate) fn net_forward(params: &ConvNetParams, x_scaled: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
    let (h, w) = x_scaled.dim();
    let mut cur = Array3::from_shape_fn((1, h, w), |(_, r, c)| x_scaled[[r, c]]);
    let mut cache = ForwardCache {
        inputs: Vec::with_capacity(params.layers.len()),
        pre_acts: Vec::with_capacity(params.layers.len()),
    };
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        cache.inputs.push(cur.clone());
        let mut z = conv::conv3x3_forward(&layer.weight, &layer.bias, &cur);
        cache.pre_acts.push(z.clone());
        if i != last {
            z.mapv_inplace(|v| v.max(0.0));
        }
        cur = z;
    }
    let residual = Array2::from_shape_fn((h, w), |(r, c)| cur[[0, r, c]]);
    (residual, cache)
}

/// Backpropagates a gradient on the residual output into parameter space.
pub(crate) fn net_backward(
    params: &ConvNetParams,
    cache: &ForwardCache,
    g_residual: &Array2<f64>,
) -> ConvNetGrads {
    let (h, w) = g_residual.dim();
    let mut g = Array3::from_shape_fn((1, h, w), |(_, r, c)| g_residual[[r, c]]);
    let last = params.layers.len() - 1;
    let mut grads: Vec<(Array4<f64>, Array1<f64>)> = params
        .layers
        .iter()
        .map(|l| (Array4::zeros(l.weight.dim()), Array1::zeros(l.bias.len())))
        .collect();
    for i in (0..params.layers.len()).rev() {
        if i != last {
            // ReLU mask from the stored pre-activation.
            let pre = &cache.pre_acts[i];
            g.zip_mut_with(pre, |gv, &p| {
                if p <= 0.0 {
                    *gv = 0.0;
                }
            });
        }
        let (g_w, g_b, g_x) =
            conv::conv3x3_backward(&params.layers[i].weight, &cache.inputs[i], &g);
        grads[i] = (g_w, g_b);
        g = g_x;
    }
    ConvNetGrads { layers: grads }
}

/// Applies the network to an offset-HU image:
/// `G(x) = x + s^{-1} net(s x)`. Deterministic; same dimensions as input.
pub fn forward(params: &ConvNetParams, image: &Image) -> Result<Image> {
    params.validate()?;
    if !image.pixels.iter().all(|v| v.is_finite()) {
        return Err(CoreError::NonFinite("network input".into()));
    }
    let s = params.io_scale;
    let x_scaled = image.pixels.mapv(|v| v * s);
    let (residual, _) = net_forward(params, &x_scaled);
    if !residual.iter().all(|v| v.is_finite()) {
        return Err(CoreError::NonFinite("network activations".into()));
    }
    let out = &image.pixels + &residual.mapv(|v| v / s);
    Image::new(image.grid, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ct::ImageGrid;

    fn test_image(seed: u64) -> Image {
        let grid = ImageGrid::new(16, 16, 1.0).unwrap();
        let mut rng = named_rng(seed, "img");
        Image::new(
            grid,
            Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..2000.0)),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_is_identity() {
        let img = test_image(1);
        let out = forward(&ConvNetParams::zeroed(), &img).unwrap();
        assert_eq!(out.pixels, img.pixels);
    }

    #[test]
    fn relu_network_is_not_homogeneous() {
        // Zero-bias ReLU stacks are positively homogeneous, so give the
        // layers nonzero biases before probing the nonlinearity.
        let mut params = ConvNetParams::small_resnet(3, (0.005f64).sqrt());
        for (i, layer) in params.layers.iter_mut().enumerate() {
            layer.bias.mapv_inplace(|_| 0.01 * (i as f64 + 1.0));
        }
        let img = test_image(2);
        let doubled = Image::new(img.grid, img.pixels.mapv(|v| 2.0 * v)).unwrap();
        let f1 = forward(&params, &img).unwrap();
        let f2 = forward(&params, &doubled).unwrap();
        let diff = f2.pixels
            .iter()
            .zip(f1.pixels.iter())
            .map(|(a, b)| (a - 2.0 * b).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-6, "forward(2x) == 2 forward(x): network is linear");
    }

    #[test]
    fn forward_is_deterministic() {
        let params = ConvNetParams::small_resnet(9, (0.005f64).sqrt());
        let img = test_image(3);
        let a = forward(&params, &img).unwrap();
        let b = forward(&params, &img).unwrap();
        assert!(a
            .pixels
            .iter()
            .zip(b.pixels.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        // Same seed rebuilds identical parameters.
        let again = ConvNetParams::small_resnet(9, (0.005f64).sqrt());
        assert_eq!(params, again);
    }
}
