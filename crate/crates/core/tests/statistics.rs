//! Seeded statistical checks of the simulator and the VP estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xfp::dct::Dct2d;
use xfp::simulator::Region;
use xfp::vp::rmse;
use xfp::{gen_systematic_field, make_mask, simulate, vp_reconstruct, RoGrid, SimConfig, VpConfig};

fn partner_rmse(device: &xfp::DeviceFingerprint, p: usize) -> f64 {
    let half = device.n_paths() / 2;
    rmse(&device.paths[p].grid, &device.paths[p + half].grid)
}

fn fresh_bound(cfg: &SimConfig) -> f64 {
    (2.0 * (cfg.pair_jitter_sigma_mhz.powi(2) + cfg.random_sigma_mhz.powi(2))).sqrt() * 1.25
}

#[test]
fn fresh_partners_stay_within_symmetry_bound() {
    let base = SimConfig {
        n_fresh: 1,
        n_aged: 0,
        ..SimConfig::default()
    };
    let bound = fresh_bound(&base);
    let (mut within, mut total) = (0, 0);
    for seed in 0..50 {
        let ds = simulate(&SimConfig { seed, ..base.clone() }).unwrap();
        let dev = &ds.devices[0];
        for p in 0..dev.n_paths() / 2 {
            total += 1;
            if partner_rmse(dev, p) <= bound {
                within += 1;
            }
        }
    }
    assert!(within as f64 >= 0.99 * total as f64, "{within}/{total} pairs within {bound}");
}

#[test]
fn strong_aging_breaks_partner_symmetry() {
    // 1% of 400 MHz = 4 MHz > 3 * random_sigma.
    let cfg = SimConfig {
        n_fresh: 0,
        n_aged: 1,
        aging_drop_pct: 1.0,
        ..SimConfig::default()
    };
    let bound = fresh_bound(&cfg);
    for seed in 0..10 {
        let ds = simulate(&SimConfig { seed, ..cfg.clone() }).unwrap();
        let dev = &ds.devices[0];
        for p in 0..dev.n_paths() / 2 {
            let r = partner_rmse(dev, p);
            assert!(r > bound, "seed {seed} pair {p}: {r} <= {bound}");
        }
    }
}

#[test]
fn aging_drop_lands_in_stress_region() {
    let cfg = SimConfig {
        rows: 12,
        cols: 18,
        paths: 4,
        n_fresh: 0,
        n_aged: 1,
        aging_drop_pct: 1.0,
        stress_region: Some(Region {
            row_start: 2,
            row_end: 8,
            col_start: 3,
            col_end: 12,
        }),
        ..SimConfig::default()
    };
    let region = cfg.region();
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for seed in 0..40 {
        let ds = simulate(&SimConfig { seed, ..cfg.clone() }).unwrap();
        let dev = &ds.devices[0];
        for p in 0..2 {
            let (lo, hi) = (&dev.paths[p].grid, &dev.paths[p + 2].grid);
            for r in 0..cfg.rows {
                for c in 0..cfg.cols {
                    let d = lo.get(r, c) - hi.get(r, c);
                    if region.contains(r, c) {
                        inside.push(d);
                    } else {
                        outside.push(d);
                    }
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    // Partner difference has sd about 1.5 MHz; thousands of cells pin the mean.
    assert!((mean(&inside) - 4.0).abs() < 0.15, "inside {}", mean(&inside));
    assert!(mean(&outside).abs() < 0.15, "outside {}", mean(&outside));
}

#[test]
fn zero_aging_leaves_aged_devices_symmetric() {
    let cfg = SimConfig {
        n_fresh: 0,
        n_aged: 2,
        aging_drop_pct: 0.0,
        ..SimConfig::default()
    };
    let bound = fresh_bound(&cfg);
    let ds = simulate(&cfg).unwrap();
    for dev in &ds.devices {
        for p in 0..16 {
            assert!(partner_rmse(dev, p) <= bound);
        }
    }
}

#[test]
fn systematic_field_scale_and_smoothness() {
    let dct = Dct2d::new(33, 120);
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = gen_systematic_field(&mut rng, &dct, 9, 4.0);
        let n = f.len() as f64;
        let mean = f.iter().sum::<f64>() / n;
        let sd = (f.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 4.0).abs() <= 0.2, "sd {sd}");
        let coeffs = dct.forward(&f);
        let big = coeffs.iter().filter(|c| c.abs() > 1e-9).count();
        assert!(big <= 9);
    }
}

/// Grid that is exactly `k`-sparse in the DCT domain, each atom carrying at
/// least 1 MHz RMS, on a 400 MHz mean.
fn sparse_grid(rng: &mut ChaCha8Rng, rows: usize, cols: usize, k: usize) -> RoGrid {
    let dct = Dct2d::new(rows, cols);
    let n = rows * cols;
    let mut coeffs = vec![0.0; n];
    coeffs[0] = 400.0 * (n as f64).sqrt();
    let support = rand::seq::index::sample(rng, n - 1, k);
    for i in support.iter() {
        let mag = rng.random_range(1.0..4.0) * (n as f64).sqrt();
        coeffs[i + 1] = if rng.random_bool(0.5) { mag } else { -mag };
    }
    RoGrid::new(rows, cols, dct.inverse(&coeffs)).unwrap()
}

#[test]
fn omp_recovers_sparse_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shapes = [(8, 8), (12, 10), (16, 16), (10, 16)];
    let trials = 160;
    let mut exact = 0;
    for t in 0..trials {
        let (rows, cols) = shapes[t % shapes.len()];
        let fraction = [0.4, 0.5, 0.6][t % 3];
        let mask = make_mask(rows, cols, fraction, 1000 + t as u64).unwrap();
        let k = rng.random_range(1..=mask.len() / 8);
        let grid = sparse_grid(&mut rng, rows, cols, k);
        let est = vp_reconstruct(&grid, &mask, &VpConfig::default()).unwrap();
        if est.rmse_mhz < 1e-6 {
            exact += 1;
        }
    }
    assert!(exact as f64 >= 0.95 * trials as f64, "exact in {exact}/{trials}");
}

#[test]
fn denser_masks_reconstruct_better() {
    let ds = simulate(&SimConfig {
        n_fresh: 1,
        n_aged: 0,
        paths: 2,
        seed: 3,
        ..SimConfig::default()
    })
    .unwrap();
    let grid = &ds.devices[0].paths[0].grid;
    let mean_rmse = |fraction: f64| {
        let cfg = VpConfig {
            fraction,
            ..VpConfig::default()
        };
        let total: f64 = (0..30)
            .map(|s| {
                let mask = make_mask(33, 120, fraction, 500 + s).unwrap();
                vp_reconstruct(grid, &mask, &cfg).unwrap().rmse_mhz
            })
            .sum();
        total / 30.0
    };
    let (dense, sparse) = (mean_rmse(0.2), mean_rmse(0.05));
    assert!(dense <= sparse, "0.2 -> {dense}, 0.05 -> {sparse}");
}
