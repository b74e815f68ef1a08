//! Deep boosting baseline: a cascade of networks denoising the strengthened
//! signal `x0 + x_{n-1}`.

use crate::ct::Image;
use crate::error::{CoreError, Result};
use crate::neural::{forward, train_supervised, ConvNetParams, TrainConfig};
use crate::rng::derive_seed;
use crate::sim::Dataset;

/// Ordered boosting stages.
#[derive(Debug, Clone)]
pub struct BoostingModel {
    pub stages: Vec<ConvNetParams>,
}

/// Trains the boosting cascade on the FBP initializations:
/// stage 1 learns `x0 -> x*`, stage n > 1 learns `(x0 + x_{n-1}) -> x*`,
/// each with the plain supervised loss configured in `cfg`.
///
/// A single stage is exactly one supervised training run, so given the same
/// seed it is bit-identical to the standalone supervised module.
pub fn train_boosting(dataset: &Dataset, n_stages: usize, cfg: &TrainConfig) -> Result<BoostingModel> {
    if n_stages == 0 {
        return Err(CoreError::InvalidParameter("need at least one stage".into()));
    }
    if dataset.train.is_empty() {
        return Err(CoreError::InvalidParameter("dataset has no training split".into()));
    }
    let x0: Vec<&Image> = dataset.train.iter().map(|s| &s.fbp_init).collect();
    let refs: Vec<&Image> = dataset.train.iter().map(|s| &s.phantom).collect();

    let mut stages = Vec::with_capacity(n_stages);
    let mut prev: Vec<Image> = Vec::new();
    for n in 1..=n_stages {
        let inputs: Vec<Image> = if n == 1 {
            x0.iter().map(|x| (*x).clone()).collect()
        } else {
            x0.iter()
                .zip(&prev)
                .map(|(x, p)| add_images(x, p))
                .collect()
        };
        let pairs: Vec<(Image, Image)> = inputs
            .iter()
            .zip(&refs)
            .map(|(i, r)| (i.clone(), (*r).clone()))
            .collect();
        let mut stage_cfg = *cfg;
        if n > 1 {
            stage_cfg.seed = derive_seed(cfg.seed, &format!("boost-stage-{n}"));
        }
        let trained = train_supervised(&pairs, &stage_cfg)?;
        prev = inputs
            .iter()
            .map(|i| forward(&trained.params, i))
            .collect::<Result<_>>()?;
        stages.push(trained.params);
    }
    Ok(BoostingModel { stages })
}

/// Replays the boosting recursion `x_1 = G_1(x0)`, `x_n = G_n(x0 + x_{n-1})`.
pub fn apply_boosting(model: &BoostingModel, x0: &Image) -> Result<Image> {
    if model.stages.is_empty() {
        return Err(CoreError::InvalidParameter("boosting model has no stages".into()));
    }
    let mut x = forward(&model.stages[0], x0)?;
    for stage in &model.stages[1..] {
        let strengthened = add_images(x0, &x);
        x = forward(stage, &strengthened)?;
    }
    Ok(x)
}

fn add_images(a: &Image, b: &Image) -> Image {
    Image {
        grid: a.grid,
        pixels: &a.pixels + &b.pixels,
    }
}
