//! Cascaded hybrid reconstruction: per-block combination of a trained
//! denoising network and an MBIR solver with a closed-form combination
//! weight, plus the serial variant and a deep-boosting baseline.

mod boosting;
mod cache;

pub use boosting::{apply_boosting, train_boosting, BoostingModel};
pub use cache::BlockCache;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::ct::{build_system_matrix, FanBeamGeometry, Image, ImageGrid, Sinogram, SystemMatrix};
use crate::error::{CoreError, Result};
use crate::mbir::{pnp_admm_reconstruct, pwls_ultra_reconstruct, AdmmParams, UltraReconParams};
use crate::metrics::rmse_hu;
use crate::neural::{forward, train_supervised, ConvNetParams, TrainConfig};
use crate::rng::derive_seed;
use crate::sim::{Dataset, Sample, WeightVector};

/// Which MBIR solver backs the unsupervised half of each block.
#[derive(Debug, Clone, PartialEq)]
pub enum UnsupParams {
    Ultra(UltraReconParams),
    PnpAdmm(AdmmParams),
}

impl UnsupParams {
    pub fn kind_name(&self) -> &'static str {
        match self {
            UnsupParams::Ultra(_) => "pwls-ultra",
            UnsupParams::PnpAdmm(_) => "pnp-admm",
        }
    }

    /// Runs the solver anchored at (and initialized from) `anchor`.
    pub fn solve(
        &self,
        y: &Sinogram,
        w: &WeightVector,
        a: &SystemMatrix,
        anchor: &Image,
        init: &Image,
    ) -> Result<Image> {
        match self {
            UnsupParams::Ultra(p) => {
                pwls_ultra_reconstruct(y, w, a, p, anchor, init).map(|r| r.image)
            }
            UnsupParams::PnpAdmm(p) => {
                pnp_admm_reconstruct(y, w, a, p, anchor, init).map(|r| r.image)
            }
        }
    }
}

/// One trained block: network parameters plus the combination weight.
#[derive(Debug, Clone)]
pub struct SuperBlock {
    pub theta: ConvNetParams,
    pub lambda: f64,
}

/// Per-block training diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockLog {
    pub block: usize,
    pub lambda: f64,
    /// Mean training RMSE of the network outputs.
    pub rmse_supervised: f64,
    /// Mean training RMSE of the solver outputs.
    pub rmse_unsupervised: f64,
    /// Mean training RMSE of the combined iterate.
    pub rmse_combined: f64,
}

/// Everything logged during a pipeline training run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub blocks: Vec<BlockLog>,
    pub events: Vec<String>,
}

/// An ordered cascade of trained blocks sharing one unsupervised solver
/// configuration.
#[derive(Debug, Clone)]
pub struct SuperPipeline {
    pub blocks: Vec<SuperBlock>,
    pub lambda_lb: f64,
    pub lambda_ub: f64,
    pub unsup: UnsupParams,
    pub geometry: FanBeamGeometry,
    pub grid: ImageGrid,
    pub training_log: TrainingLog,
}

/// Training-time settings shared by the parallel and serial variants.
#[derive(Debug, Clone)]
pub struct SuperTrainConfig {
    pub lambda_lb: f64,
    pub lambda_ub: f64,
    pub unsup: UnsupParams,
    pub train: TrainConfig,
    pub seed: u64,
    /// Per-block solver outputs are cached here when set, so interrupted
    /// runs can resume.
    pub cache_dir: Option<PathBuf>,
}

impl SuperTrainConfig {
    pub fn new(unsup: UnsupParams, train: TrainConfig, seed: u64) -> Self {
        Self {
            lambda_lb: 0.05,
            lambda_ub: 0.95,
            unsup,
            train,
            seed,
            cache_dir: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lambda_lb && self.lambda_lb < self.lambda_ub && self.lambda_ub <= 1.0) {
            return Err(CoreError::InvalidParameter(format!(
                "need 0 <= lambda_lb < lambda_ub <= 1, got [{}, {}]",
                self.lambda_lb, self.lambda_ub
            )));
        }
        self.train.validate()
    }
}

/// Closed-form optimal combination weight for
/// `min_l sum_n || l G_n + (1-l) U_n - x*_n ||^2`, clipped to `[lb, ub]`:
/// `l* = sum_n (U_n - G_n)^T (U_n - x*_n) / sum_n ||G_n - U_n||^2`.
/// A zero denominator (identical module outputs) returns the midpoint.
pub fn solve_lambda(
    sup_outs: &[Image],
    unsup_outs: &[Image],
    refs: &[Image],
    lb: f64,
    ub: f64,
) -> Result<f64> {
    if sup_outs.is_empty() || sup_outs.len() != unsup_outs.len() || sup_outs.len() != refs.len() {
        return Err(CoreError::InvalidParameter(
            "solve_lambda needs equal-length nonempty image lists".into(),
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((g, u), r) in sup_outs.iter().zip(unsup_outs).zip(refs) {
        for ((gv, uv), rv) in g.pixels.iter().zip(u.pixels.iter()).zip(r.pixels.iter()) {
            num += (uv - gv) * (uv - rv);
            den += (gv - uv).powi(2);
        }
    }
    if den == 0.0 {
        return Ok(0.5 * (lb + ub));
    }
    Ok((num / den).clamp(lb, ub))
}

/// Affine combination `lambda * g + (1 - lambda) * u`, evaluated as
/// `u + lambda * (g - u)` so identical module outputs pass through exactly
/// for any weight.
pub fn combine(g: &Image, u: &Image, lambda: f64) -> Image {
    Image {
        grid: g.grid,
        pixels: ndarray::Zip::from(&g.pixels)
            .and(&u.pixels)
            .map_collect(|&gv, &uv| uv + lambda * (gv - uv)),
    }
}

fn step_err(block: usize, step: &'static str) -> impl FnOnce(CoreError) -> CoreError {
    move |e| CoreError::PipelineStep {
        block,
        step,
        source: Box::new(e),
    }
}

/// Outcome of a parallel training run: the frozen pipeline plus the final
/// training iterates (for replay checks).
#[derive(Debug, Clone)]
pub struct ParallelTrainOutcome {
    pub pipeline: SuperPipeline,
    pub final_train_images: Vec<Image>,
}

/// Trains `l_blocks` cascaded blocks on the dataset's training split.
///
/// Per block: (1) solver reconstructions anchored at the previous iterate,
/// (2) fresh supervised training on `(previous iterate, reference)` pairs,
/// (3) the closed-form combination weight, (4) the combined iterate feeding
/// the next block. Deterministic under `cfg.seed`.
pub fn train_parallel_super(
    dataset: &Dataset,
    l_blocks: usize,
    cfg: &SuperTrainConfig,
) -> Result<ParallelTrainOutcome> {
    cfg.validate()?;
    if l_blocks == 0 {
        return Err(CoreError::InvalidParameter("need at least one block".into()));
    }
    if dataset.train.is_empty() {
        return Err(CoreError::InvalidParameter("dataset has no training split".into()));
    }
    let a = build_system_matrix(&dataset.geometry, &dataset.grid)?;
    let cache = BlockCache::new(cfg.cache_dir.clone(), &dataset.geometry, &dataset.grid, cfg)?;

    let samples = &dataset.train;
    let refs: Vec<&Image> = samples.iter().map(|s| &s.phantom).collect();
    let mut current: Vec<Image> = samples.iter().map(|s| s.ep_init.clone()).collect();
    let mut log = TrainingLog::default();
    let mut blocks = Vec::with_capacity(l_blocks);

    for l in 1..=l_blocks {
        let (unsup_outs, events) =
            block_unsupervised(&a, samples, &current, &cfg.unsup, &cache, l)
                .map_err(step_err(l, "unsupervised"))?;
        log.events.extend(events);

        let pairs: Vec<(Image, Image)> = current
            .iter()
            .zip(&refs)
            .map(|(x, r)| (x.clone(), (*r).clone()))
            .collect();
        let mut train_cfg = cfg.train;
        train_cfg.seed = derive_seed(cfg.seed, &format!("block-{l}"));
        let trained = train_supervised(&pairs, &train_cfg).map_err(step_err(l, "supervised"))?;

        let sup_outs: Vec<Image> = current
            .iter()
            .map(|x| forward(&trained.params, x))
            .collect::<Result<_>>()
            .map_err(step_err(l, "supervised"))?;

        let lambda = solve_lambda(
            &sup_outs,
            &unsup_outs,
            &samples.iter().map(|s| s.phantom.clone()).collect::<Vec<_>>(),
            cfg.lambda_lb,
            cfg.lambda_ub,
        )
        .map_err(step_err(l, "lambda"))?;

        current = sup_outs
            .iter()
            .zip(&unsup_outs)
            .map(|(g, u)| combine(g, u, lambda))
            .collect();

        log.blocks.push(BlockLog {
            block: l,
            lambda,
            rmse_supervised: mean_rmse(&sup_outs, &refs)?,
            rmse_unsupervised: mean_rmse(&unsup_outs, &refs)?,
            rmse_combined: mean_rmse(&current, &refs)?,
        });
        blocks.push(SuperBlock {
            theta: trained.params,
            lambda,
        });
    }

    Ok(ParallelTrainOutcome {
        pipeline: SuperPipeline {
            blocks,
            lambda_lb: cfg.lambda_lb,
            lambda_ub: cfg.lambda_ub,
            unsup: cfg.unsup.clone(),
            geometry: dataset.geometry,
            grid: dataset.grid,
            training_log: log,
        },
        final_train_images: current,
    })
}

/// Solver pass of one block over all samples, in parallel, with caching.
fn block_unsupervised(
    a: &SystemMatrix,
    samples: &[Sample],
    current: &[Image],
    unsup: &UnsupParams,
    cache: &BlockCache,
    block: usize,
) -> Result<(Vec<Image>, Vec<String>)> {
    let results: Vec<(Image, Option<String>)> = samples
        .par_iter()
        .zip(current.par_iter())
        .map(|(s, x_prev)| {
            if let Some(img) = cache.load(block, &s.id, x_prev)? {
                return Ok((img, Some(format!("cache hit: block {block} sample {}", s.id))));
            }
            let out = unsup.solve(&s.sino, &s.weights, a, x_prev, x_prev)?;
            cache.store(block, &s.id, x_prev, &out)?;
            Ok((out, None))
        })
        .collect::<Result<_>>()?;
    let mut images = Vec::with_capacity(results.len());
    let mut events = Vec::new();
    for (img, ev) in results {
        images.push(img);
        if let Some(e) = ev {
            events.push(e);
        }
    }
    Ok((images, events))
}

fn mean_rmse(outs: &[Image], refs: &[&Image]) -> Result<f64> {
    let mut total = 0.0;
    for (o, r) in outs.iter().zip(refs) {
        total += rmse_hu(o, r, None)?;
    }
    Ok(total / outs.len() as f64)
}

/// Replays a trained pipeline on new data, returning the final image plus
/// the per-block intermediates.
pub fn apply_parallel_super(
    pipeline: &SuperPipeline,
    y: &Sinogram,
    w: &WeightVector,
    x0: &Image,
) -> Result<(Image, Vec<Image>)> {
    let a = build_system_matrix(&pipeline.geometry, &pipeline.grid)?;
    apply_parallel_super_with(pipeline, &a, y, w, x0)
}

/// [`apply_parallel_super`] with a prebuilt system matrix.
pub fn apply_parallel_super_with(
    pipeline: &SuperPipeline,
    a: &SystemMatrix,
    y: &Sinogram,
    w: &WeightVector,
    x0: &Image,
) -> Result<(Image, Vec<Image>)> {
    if y.geometry != pipeline.geometry || x0.grid != pipeline.grid {
        return Err(CoreError::GeometryMismatch {
            expected: format!("{:?}/{:?}", pipeline.geometry, pipeline.grid),
            found: format!("{:?}/{:?}", y.geometry, x0.grid),
        });
    }
    let mut x = x0.clone();
    let mut trace = Vec::with_capacity(pipeline.blocks.len());
    for (l, block) in pipeline.blocks.iter().enumerate() {
        let u = pipeline
            .unsup
            .solve(y, w, a, &x, &x)
            .map_err(step_err(l + 1, "unsupervised"))?;
        let g = forward(&block.theta, &x).map_err(step_err(l + 1, "supervised"))?;
        x = combine(&g, &u, block.lambda);
        trace.push(x.clone());
    }
    Ok((x, trace))
}

/// Serial variant: denoise, then anchor the solver at the network output.
#[derive(Debug, Clone)]
pub struct SerialPipeline {
    pub blocks: Vec<ConvNetParams>,
    pub unsup: UnsupParams,
    pub geometry: FanBeamGeometry,
    pub grid: ImageGrid,
    pub training_log: TrainingLog,
}

/// Trains the serial cascade: per block the network maps the iterate toward
/// the reference and the solver, anchored at the network output, produces
/// the next iterate. `l_blocks = 0` yields an identity pipeline.
pub fn train_serial_super(
    dataset: &Dataset,
    l_blocks: usize,
    cfg: &SuperTrainConfig,
) -> Result<SerialPipeline> {
    cfg.validate()?;
    if dataset.train.is_empty() && l_blocks > 0 {
        return Err(CoreError::InvalidParameter("dataset has no training split".into()));
    }
    let a = build_system_matrix(&dataset.geometry, &dataset.grid)?;
    let samples = &dataset.train;
    let refs: Vec<&Image> = samples.iter().map(|s| &s.phantom).collect();
    let mut current: Vec<Image> = samples.iter().map(|s| s.ep_init.clone()).collect();
    let mut log = TrainingLog::default();
    let mut blocks = Vec::with_capacity(l_blocks);

    for l in 1..=l_blocks {
        let pairs: Vec<(Image, Image)> = current
            .iter()
            .zip(&refs)
            .map(|(x, r)| (x.clone(), (*r).clone()))
            .collect();
        let mut train_cfg = cfg.train;
        train_cfg.seed = derive_seed(cfg.seed, &format!("serial-block-{l}"));
        let trained = train_supervised(&pairs, &train_cfg).map_err(step_err(l, "supervised"))?;

        let sup_outs: Vec<Image> = current
            .iter()
            .map(|x| forward(&trained.params, x))
            .collect::<Result<_>>()
            .map_err(step_err(l, "supervised"))?;

        current = samples
            .par_iter()
            .zip(sup_outs.par_iter())
            .map(|(s, g)| cfg.unsup.solve(&s.sino, &s.weights, &a, g, g))
            .collect::<Result<_>>()
            .map_err(step_err(l, "unsupervised"))?;

        log.blocks.push(BlockLog {
            block: l,
            lambda: f64::NAN,
            rmse_supervised: mean_rmse(&sup_outs, &refs)?,
            rmse_unsupervised: mean_rmse(&current, &refs)?,
            rmse_combined: mean_rmse(&current, &refs)?,
        });
        blocks.push(trained.params);
    }
    Ok(SerialPipeline {
        blocks,
        unsup: cfg.unsup.clone(),
        geometry: dataset.geometry,
        grid: dataset.grid,
        training_log: log,
    })
}

/// Replays a serial pipeline; with no blocks it returns `x0` unchanged.
pub fn apply_serial_super(
    pipeline: &SerialPipeline,
    y: &Sinogram,
    w: &WeightVector,
    x0: &Image,
) -> Result<(Image, Vec<Image>)> {
    if pipeline.blocks.is_empty() {
        return Ok((x0.clone(), vec![]));
    }
    let a = build_system_matrix(&pipeline.geometry, &pipeline.grid)?;
    let mut x = x0.clone();
    let mut trace = Vec::new();
    for (l, theta) in pipeline.blocks.iter().enumerate() {
        let g = forward(theta, &x).map_err(step_err(l + 1, "supervised"))?;
        x = pipeline
            .unsup
            .solve(y, w, &a, &g, &g)
            .map_err(step_err(l + 1, "unsupervised"))?;
        trace.push(x.clone());
    }
    Ok((x, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ct::ImageGrid;
    use ndarray::Array2;

    fn img(grid: ImageGrid, f: impl Fn(usize, usize) -> f64) -> Image {
        Image::new(grid, Array2::from_shape_fn((grid.n_rows, grid.n_cols), |(r, c)| f(r, c)))
            .unwrap()
    }

    #[test]
    fn lambda_trivial_cases() {
        let grid = ImageGrid::new(4, 4, 1.0).unwrap();
        let x_star = img(grid, |r, c| (r * 4 + c) as f64);
        let u = img(grid, |r, c| (r * 4 + c) as f64 + 5.0);

        // Perfect supervised output: unclipped lambda = 1 -> ub.
        let l = solve_lambda(
            &[x_star.clone()],
            &[u.clone()],
            &[x_star.clone()],
            0.05,
            0.95,
        )
        .unwrap();
        assert_eq!(l, 0.95);

        // Perfect unsupervised output: unclipped lambda = 0 -> lb.
        let g = img(grid, |r, c| (r * 4 + c) as f64 - 3.0);
        let l = solve_lambda(&[g], &[x_star.clone()], &[x_star.clone()], 0.05, 0.95).unwrap();
        assert_eq!(l, 0.05);

        // Identical module outputs: midpoint.
        let l = solve_lambda(&[u.clone()], &[u.clone()], &[x_star], 0.05, 0.95).unwrap();
        assert_eq!(l, 0.5);
    }

    #[test]
    fn combine_is_affine() {
        let grid = ImageGrid::new(4, 4, 1.0).unwrap();
        let a = img(grid, |r, c| (r * 4 + c) as f64 * 0.37 + 0.1);
        for lambda in [0.0, 0.3, 0.5, 0.77, 0.95] {
            let out = combine(&a, &a, lambda);
            assert_eq!(out.pixels, a.pixels);
        }
    }
}
