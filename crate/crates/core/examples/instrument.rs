//! temp probe: supervised training + one parallel-SUPER mini run
use superct_core::ct::{FanBeamGeometry, ImageGrid};
use superct_core::mbir::EpParams;
use superct_core::metrics::rmse_hu;
use superct_core::neural::{forward, train_supervised, TrainConfig};
use superct_core::pipeline::{train_parallel_super, SuperTrainConfig, UnsupParams};
use superct_core::mbir::UltraReconParams;
use superct_core::sim::{make_dataset_with, NoiseModel};
use superct_core::ultra::{train_ultra, PatchConfig};

fn main() {
    let grid = ImageGrid::desk64();
    let geom = FanBeamGeometry::desk_parallel();
    let nm = NoiseModel::default();
    let ds = make_dataset_with(12, 0, 4, &grid, &geom, &nm, 42, &EpParams::default()).unwrap();

    // Supervised alone: train on (ep_init, phantom) pairs.
    let pairs: Vec<_> = ds
        .train
        .iter()
        .map(|s| (s.ep_init.clone(), s.phantom.clone()))
        .collect();
    let t0 = std::time::Instant::now();
    let cfg = TrainConfig::default();
    let net = train_supervised(&pairs, &cfg).unwrap();
    println!("supervised train: {:?}; epoch losses {:?}", t0.elapsed(), net.epoch_loss);
    for s in ds.train.iter().take(3).chain(ds.test.iter().take(3)) {
        let g = forward(&net.params, &s.ep_init).unwrap();
        println!(
            "{}: ep {:.1} -> net {:.1} HU",
            s.id,
            rmse_hu(&s.ep_init, &s.phantom, None).unwrap(),
            rmse_hu(&g, &s.phantom, None).unwrap()
        );
    }

    // Overfit sanity: single pair, 200 steps.
    let single = vec![pairs[0].clone()];
    let cfg200 = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let net1 = train_supervised(&single, &cfg200).unwrap();
    println!(
        "overfit: first {:.4e} last {:.4e} ratio {:.3}",
        net1.epoch_loss[0],
        net1.epoch_loss[199],
        net1.epoch_loss[199] / net1.epoch_loss[0]
    );

    // Mini parallel SUPER, L = 3.
    let train_imgs: Vec<_> = ds.train.iter().map(|s| s.phantom.clone()).collect();
    let union = train_ultra(&train_imgs, 5, 15, &PatchConfig::default(), 0.0031, 20.0).unwrap();
    let sup_cfg = SuperTrainConfig::new(
        UnsupParams::Ultra(UltraReconParams::with_union(union)),
        TrainConfig::default(),
        7,
    );
    let t1 = std::time::Instant::now();
    let out = train_parallel_super(&ds, 3, &sup_cfg).unwrap();
    println!("parallel super train: {:?}", t1.elapsed());
    for b in &out.pipeline.training_log.blocks {
        println!(
            "block {}: lambda {:.3}, sup {:.1}, unsup {:.1}, combined {:.1}",
            b.block, b.lambda, b.rmse_supervised, b.rmse_unsupervised, b.rmse_combined
        );
    }
    // Test-set replay.
    let a = superct_core::ct::build_system_matrix(&geom, &grid).unwrap();
    for s in &ds.test {
        let (fin, _) = superct_core::pipeline::apply_parallel_super_with(
            &out.pipeline, &a, &s.sino, &s.weights, &s.ep_init,
        )
        .unwrap();
        println!(
            "test {}: ep {:.1} -> super {:.1} HU",
            s.id,
            rmse_hu(&s.ep_init, &s.phantom, None).unwrap(),
            rmse_hu(&fin, &s.phantom, None).unwrap()
        );
    }
}
