//! temp: verify final overfit numbers
use superct_core::ct::{FanBeamGeometry, ImageGrid};
use superct_core::mbir::EpParams;
use superct_core::neural::{train_supervised, TrainConfig};
use superct_core::sim::{make_dataset_with, NoiseModel};

fn main() {
    let grid = ImageGrid::desk64();
    let geom = FanBeamGeometry::desk_parallel();
    let nm = NoiseModel::default();
    for steps in [200usize, 1500] {
        let mut ratios = Vec::new();
        for seed in [42u64, 43, 44, 45, 46, 47, 48] {
            let ds = make_dataset_with(1, 0, 0, &grid, &geom, &nm, seed, &EpParams::default()).unwrap();
            let pair = (ds.train[0].ep_init.clone(), ds.train[0].phantom.clone());
            let cfg = TrainConfig { epochs: steps, momentum: 0.9, grad_scale: 32.0, ..TrainConfig::default() };
            match train_supervised(std::slice::from_ref(&pair), &cfg) {
                Ok(out) => ratios.push(out.epoch_loss.last().unwrap() / out.epoch_loss[0]),
                Err(_) => ratios.push(f64::NAN),
            }
        }
        println!("steps {steps:5}: ratios {ratios:.4?}");
    }
}
