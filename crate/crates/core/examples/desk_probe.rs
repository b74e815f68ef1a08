//! Quick desk-scale quality probe: prints RMSEs of FBP, PWLS-EP and
//! PWLS-ULTRA on a small synthetic dataset. Handy when tuning defaults.

use superct_core::ct::{build_system_matrix, FanBeamGeometry, ImageGrid};
use superct_core::mbir::{
    pwls_ultra_reconstruct, EpParams, UltraReconParams,
};
use superct_core::metrics::rmse_hu;
use superct_core::sim::{make_dataset_with, NoiseModel};
use superct_core::ultra::{train_ultra, PatchConfig};

fn main() {
    let grid = ImageGrid::desk64();
    let geom = FanBeamGeometry::desk_parallel();
    let nm = NoiseModel::default();
    let t0 = std::time::Instant::now();
    let ds = make_dataset_with(4, 0, 2, &grid, &geom, &nm, 42, &EpParams::default()).unwrap();
    println!("dataset: {:?}", t0.elapsed());

    let a = build_system_matrix(&geom, &grid).unwrap();
    for s in ds.train.iter().take(2) {
        println!(
            "{}: fbp {:.1} HU, ep {:.1} HU",
            s.id,
            rmse_hu(&s.fbp_init, &s.phantom, None).unwrap(),
            rmse_hu(&s.ep_init, &s.phantom, None).unwrap()
        );
    }

    let t1 = std::time::Instant::now();
    let train_imgs: Vec<_> = ds.train.iter().map(|s| s.phantom.clone()).collect();
    let union = train_ultra(&train_imgs, 5, 12, &PatchConfig::default(), 0.0031, 20.0).unwrap();
    println!("ultra train: {:?}; objective: {:?}", t1.elapsed(), union.training_log);

    let p = UltraReconParams::with_union(union);
    let t2 = std::time::Instant::now();
    for s in ds.train.iter().take(2) {
        let out = pwls_ultra_reconstruct(&s.sino, &s.weights, &a, &p, &s.ep_init, &s.ep_init).unwrap();
        println!(
            "{}: ultra {:.1} HU (obj trace {:?})",
            s.id,
            rmse_hu(&out.image, &s.phantom, None).unwrap(),
            out.report
                .objective_trace
                .iter()
                .map(|v| format!("{v:.4e}"))
                .collect::<Vec<_>>()
        );
    }
    println!("ultra recon: {:?}", t2.elapsed());
}
