//! Simulation oracles: Monte-Carlo means/variances, phantom geometry checks,
//! reproducibility and the noiseless round trip.

use ndarray::Array2;
use superct_core::ct::{build_system_matrix, fbp, FanBeamGeometry, Image, ImageGrid, ScanMode};
use superct_core::metrics::rmse_hu;
use superct_core::sim::{
    compute_weights, make_dataset_with, make_phantom, random_phantom_spec, shepp_logan_spec,
    simulate_sinogram, Ellipse, NoiseModel, PhantomSpec,
};
use superct_core::mbir::EpParams;

fn disk_image(grid: ImageGrid, r_mm: f64, value: f64) -> Image {
    Image::new(
        grid,
        Array2::from_shape_fn((grid.n_rows, grid.n_cols), |(r, c)| {
            let (x, y) = grid.pixel_center(r, c);
            if x * x + y * y <= r_mm * r_mm {
                value
            } else {
                0.0
            }
        }),
    )
    .unwrap()
}

#[test]
fn monte_carlo_mean_matches_deterministic_sinogram() {
    let grid = ImageGrid::new(32, 32, 0.69).unwrap();
    let geom = FanBeamGeometry::new(48, 24, 0.6, 0.0, 0.0, ScanMode::Parallel).unwrap();
    let a = build_system_matrix(&geom, &grid).unwrap();
    let phantom = disk_image(grid, 9.0, 1000.0);

    let det_nm = NoiseModel {
        deterministic_mode: true,
        ..NoiseModel::default()
    };
    let y_det = simulate_sinogram(&phantom, &a, &det_nm).unwrap();

    let n_redraws = 200;
    let n_rays = geom.n_rays();
    let mut sum = vec![0.0f64; n_rays];
    let mut sum_sq = vec![0.0f64; n_rays];
    for k in 0..n_redraws {
        let nm = NoiseModel::default().with_seed(7 + k as u64);
        let y = simulate_sinogram(&phantom, &a, &nm).unwrap();
        for (i, v) in y.values.iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }

    let mut within = 0usize;
    for (i, y0) in y_det.values.iter().enumerate() {
        let mean = sum[i] / n_redraws as f64;
        let var = (sum_sq[i] / n_redraws as f64 - mean * mean).max(0.0);
        let sem = (var / n_redraws as f64).sqrt();
        if (mean - y0).abs() <= 3.0 * sem {
            within += 1;
        }
    }
    let frac = within as f64 / n_rays as f64;
    assert!(
        frac >= 0.99,
        "only {within}/{n_rays} rays within 3 standard errors"
    );
}

#[test]
fn weight_formula_matches_monte_carlo_variance() {
    // Ray with zero line integral: w = I0^2/(I0 + sigma^2) ~ 9975.06, and
    // the Monte-Carlo variance of y matches 1/w within 5%.
    let grid = ImageGrid::new(8, 8, 0.5).unwrap();
    let geom = FanBeamGeometry::new(1, 1, 100.0, 0.0, 0.0, ScanMode::Parallel).unwrap();
    let a = build_system_matrix(&geom, &grid).unwrap();
    let air = Image::zeros(grid);

    let n = 20_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for k in 0..n {
        let nm = NoiseModel::default().with_seed(1000 + k as u64);
        let y = simulate_sinogram(&air, &a, &nm).unwrap();
        let v = y.values[[0, 0]];
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let var = sum_sq / n as f64 - mean * mean;

    let y0 = superct_core::ct::Sinogram::zeros(geom);
    let w = compute_weights(&y0, &NoiseModel::default()).unwrap().values[[0, 0]];
    assert!((w - 1e8 / 10025.0).abs() < 1e-6);
    let rel = (var - 1.0 / w).abs() / (1.0 / w);
    assert!(rel < 0.05, "MC variance {var:.3e} vs 1/w {:.3e}", 1.0 / w);
}

#[test]
fn centered_circle_pixel_count() {
    let grid = ImageGrid::new(64, 64, 1.0).unwrap();
    let spec = PhantomSpec::new(
        grid,
        vec![Ellipse {
            cx_mm: 0.0,
            cy_mm: 0.0,
            a_mm: 10.0,
            b_mm: 10.0,
            angle_rad: 0.0,
            value_hu: 1000.0,
            additive: false,
        }],
        0,
    )
    .unwrap();
    let img = make_phantom(&spec);
    let count = img.pixels.iter().filter(|&&v| v == 1000.0).count() as f64;
    let expect = std::f64::consts::PI * 100.0;
    assert!(
        (count - expect).abs() / expect < 0.04,
        "{count} pixels vs {expect}"
    );
}

#[test]
fn head_phantom_preset_properties() {
    let grid = ImageGrid::new(128, 128, 0.69).unwrap();
    let spec = shepp_logan_spec(grid);
    let img = make_phantom(&spec);

    // Skull rim renders at the 2000 HU maximum.
    let max = img.pixels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(max, 2000.0);

    // The two lateral lobes carry the same value.
    let sx = 0.5 * grid.width_mm();
    let probe = |x: f64, y: f64| {
        let c = (x / grid.pixel_size_mm + (grid.n_cols as f64 - 1.0) / 2.0).round() as usize;
        let r = ((grid.n_rows as f64 - 1.0) / 2.0 - y / grid.pixel_size_mm).round() as usize;
        img.pixels[[r, c]]
    };
    assert_eq!(probe(0.22 * sx, 0.0), 1000.0);
    assert_eq!(probe(-0.22 * sx, 0.0), 1000.0);

    // Rendering is reflection-equivariant: mirroring the ellipse table equals
    // mirroring the rendered image.
    let mirrored_spec = PhantomSpec::new(
        grid,
        spec.ellipses
            .iter()
            .map(|e| Ellipse {
                cx_mm: -e.cx_mm,
                angle_rad: -e.angle_rad,
                ..*e
            })
            .collect(),
        0,
    )
    .unwrap();
    let mirrored = make_phantom(&mirrored_spec);
    for r in 0..grid.n_rows {
        for c in 0..grid.n_cols {
            assert_eq!(mirrored.pixels[[r, c]], img.pixels[[r, grid.n_cols - 1 - c]]);
        }
    }
}

#[test]
fn seeds_reproduce_and_distinguish() {
    let grid = ImageGrid::new(32, 32, 0.69).unwrap();
    let geom = FanBeamGeometry::new(48, 16, 0.6, 0.0, 0.0, ScanMode::Parallel).unwrap();
    let a = build_system_matrix(&geom, &grid).unwrap();
    let phantom = disk_image(grid, 9.0, 1000.0);
    let y1 = simulate_sinogram(&phantom, &a, &NoiseModel::default().with_seed(5)).unwrap();
    let y2 = simulate_sinogram(&phantom, &a, &NoiseModel::default().with_seed(5)).unwrap();
    let y3 = simulate_sinogram(&phantom, &a, &NoiseModel::default().with_seed(6)).unwrap();
    assert!(y1
        .values
        .iter()
        .zip(y2.values.iter())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_ne!(y1.values, y3.values);
}

#[test]
fn noiseless_round_trip_is_accurate() {
    let grid = ImageGrid::new(128, 128, 0.69).unwrap();
    let geom = FanBeamGeometry::new(185, 180, 0.5, 0.0, 0.0, ScanMode::Parallel).unwrap();
    let a = build_system_matrix(&geom, &grid).unwrap();
    let phantom = disk_image(grid, 30.0, 1000.0);
    let nm = NoiseModel {
        deterministic_mode: true,
        ..NoiseModel::default()
    };
    let y = simulate_sinogram(&phantom, &a, &nm).unwrap();
    let recon = fbp(&geom, &grid, &y).unwrap().image;
    let err = rmse_hu(&recon, &phantom, None).unwrap();
    assert!(err < 80.0, "round-trip RMSE {err} HU");
}

#[test]
fn dataset_is_reproducible_and_splits_are_disjoint() {
    let grid = ImageGrid::new(32, 32, 0.69).unwrap();
    let geom = FanBeamGeometry::new(48, 24, 0.6, 0.0, 0.0, ScanMode::Parallel).unwrap();
    let nm = NoiseModel::default();
    let ep = EpParams {
        iters: 10,
        ..EpParams::default()
    };
    let d1 = make_dataset_with(2, 1, 1, &grid, &geom, &nm, 99, &ep).unwrap();
    let d2 = make_dataset_with(2, 1, 1, &grid, &geom, &nm, 99, &ep).unwrap();
    for (a, b) in d1.train.iter().zip(&d2.train) {
        assert_eq!(a.phantom, b.phantom);
        assert_eq!(a.sino, b.sino);
        assert_eq!(a.ep_init, b.ep_init);
    }
    // Different splits share no phantom.
    for tr in &d1.train {
        for te in d1.test.iter().chain(&d1.val) {
            assert_ne!(tr.phantom, te.phantom);
        }
    }
}

#[test]
fn desk_dataset_builds_quickly() {
    let grid = ImageGrid::desk64();
    let geom = FanBeamGeometry::desk_parallel();
    let nm = NoiseModel::default();
    let start = std::time::Instant::now();
    let ds = make_dataset_with(10, 0, 0, &grid, &geom, &nm, 3, &EpParams::default()).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(ds.train.len(), 10);
    assert!(
        elapsed.as_secs_f64() < 60.0,
        "dataset build took {elapsed:?}"
    );
}

#[test]
fn random_phantom_values_stay_in_band() {
    let grid = ImageGrid::desk64();
    for seed in 0..20 {
        let img = make_phantom(&random_phantom_spec(grid, seed));
        assert!(img.pixels.iter().all(|&v| (0.0..=3000.0).contains(&v)));
    }
}
