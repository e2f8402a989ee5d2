//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs the full-scale default experiment for ten seeds.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use xfp::dct::Dct2d;
use xfp::pipeline::{run_experiment, ExperimentOutcome};
use xfp::ulsif::{centers_for, fit, fit_with_centers, gaussian_kernel, loocv_score};
use xfp::{
    audit_comparisons, make_mask, pair_by_rmse, roc_curve, simulate, structural_pairing, vp_reconstruct,
    PipelineConfig, RoGrid, Scorer, SimConfig, UlsifConfig, VpConfig,
};

const SEEDS: std::ops::RangeInclusive<u64> = 1..=10;

// Pinned tolerances.
const RATIO_EXPECTED: f64 = 0.5042;
const RATIO_TOL: f64 = 5e-5;
const FULL_RUN_BUDGET: Duration = Duration::from_secs(30 * 60);
const SMALL_RUN_BUDGET: Duration = Duration::from_secs(10);
const ALPHA_TOL: f64 = 1e-8;
const LOOCV_TOL: f64 = 1e-6;
const ULSIF_INSTANCES: usize = 150;
const RECOVERY_RMSE: f64 = 1e-6;
const RECOVERY_RATE: f64 = 0.95;
const RECOVERY_TRIALS: usize = 120;
const MATCHING_TRIALS: usize = 1000;
const PAIRING_SEEDS_REQUIRED: usize = 9;
const DETECTION_SEEDS_REQUIRED: usize = 8;
const AUC_FLOOR: f64 = 0.95;
const ACCURACY_FLOOR: f64 = 12.0 / 13.0;
const ROC_TOL: f64 = 1e-12;
const ROC_SETS: usize = 200;
const NULL_AUC_RANGE: (f64, f64) = (0.25, 0.75);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn experiment(seed: u64, aging_drop_pct: f64, dir: &Path) -> (ExperimentOutcome, Duration) {
    let mut config = PipelineConfig::default().with_seed(seed);
    config.simulator.aging_drop_pct = aging_drop_pct;
    config.output.out_dir = dir.join(format!("seed-{seed}-drop-{aging_drop_pct}"));
    let start = Instant::now();
    let outcome = run_experiment(&config).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    (outcome, start.elapsed())
}

fn criterion_1(default_runs: &[(ExperimentOutcome, Duration)]) -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    for &(r, c, p) in &[(33usize, 120usize, 32usize), (4, 6, 4), (2, 2, 2)] {
        let audit = audit_comparisons(r, c, p).unwrap();
        // Counts depend on C and P only. Columns need at least 4 samples, so
        // R = 2 is counted on a 4-row grid.
        let rows = r.max(4);
        let cfg = SimConfig {
            rows,
            cols: c,
            paths: p,
            n_fresh: 1,
            n_aged: 0,
            stress_region: None,
            ..SimConfig::default()
        };
        let device = simulate(&cfg).unwrap().devices.remove(0);
        let scorer = Scorer::new(UlsifConfig::default());
        let pairing = structural_pairing(p).unwrap();
        let start = Instant::now();
        scorer.score_device_symmetric(&device, &pairing).unwrap();
        scorer.score_device_baseline(&device).unwrap();
        let elapsed = start.elapsed();
        let exact = scorer.proposed_count() == (c * p / 2) as u64
            && scorer.baseline_count() == ((c - 1) * p) as u64
            && audit.proposed == scorer.proposed_count()
            && audit.baseline == scorer.baseline_count();
        if !exact {
            pass = false;
        }
        if (r, c, p) != (33, 120, 32) && elapsed > SMALL_RUN_BUDGET {
            pass = false;
        }
        notes.push(format!(
            "({r},{c},{p}) proposed {} baseline {}{}",
            scorer.proposed_count(),
            scorer.baseline_count(),
            if rows != r { format!(" (counted at R={rows})") } else { String::new() }
        ));
    }
    let ratio = audit_comparisons(33, 120, 32).unwrap().ratio;
    if (ratio - RATIO_EXPECTED).abs() > RATIO_TOL {
        pass = false;
    }
    let slowest = default_runs.iter().map(|(_, d)| *d).max().unwrap_or_default();
    if slowest > FULL_RUN_BUDGET {
        pass = false;
    }
    for (o, _) in default_runs {
        let r = &o.report;
        if r.comparisons_proposed != 1920
            || r.comparisons_baseline != 3808
            || r.comparisons_performed != 1920 * o.dataset.devices.len() as u64
        {
            pass = false;
        }
    }
    verdict(
        pass,
        format!(
            "{}; ratio {ratio:.4}; slowest full run {:.1}s",
            notes.join("; "),
            slowest.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (mut worst_alpha, mut worst_loo) = (0.0f64, 0.0f64);
    let sigmas = [0.25, 0.5, 0.75, 1.0, 1.5, 2.0];
    let lambdas = [1e-3, 1e-2, 1e-1, 1.0];
    for t in 0..ULSIF_INSTANCES {
        let n_nu = rng.random_range(3..=20);
        let n_de = rng.random_range(3..=30);
        let nu: Vec<f64> = (0..n_nu).map(|_| Normal::new(0.4, 1.0).unwrap().sample(&mut rng)).collect();
        let de: Vec<f64> = (0..n_de).map(|_| Normal::new(0.0, 1.1).unwrap().sample(&mut rng)).collect();
        let (sigma, lambda) = (sigmas[t % 6], lambdas[(t / 6) % 4]);

        let model = fit(&nu, &de, sigma, lambda, 20).unwrap();
        let b = model.centers.len();
        let c = &model.centers;
        let h = DMatrix::from_fn(b, b, |l, m| {
            de.iter()
                .map(|&x| gaussian_kernel(x, c[l], sigma) * gaussian_kernel(x, c[m], sigma))
                .sum::<f64>()
                / n_de as f64
        }) + DMatrix::identity(b, b) * lambda;
        let hv = DVector::from_fn(b, |l, _| {
            nu.iter().map(|&x| gaussian_kernel(x, c[l], sigma)).sum::<f64>() / n_nu as f64
        });
        let oracle = h.lu().solve(&hv).unwrap();
        for (a, o) in model.alpha.iter().zip(oracle.iter()) {
            worst_alpha = worst_alpha.max((a - o).abs() / o.abs().max(1.0));
        }

        let centers = centers_for(&nu, 20);
        let n = n_nu.min(n_de);
        let mut literal = 0.0;
        for i in 0..n {
            let nu_i: Vec<f64> = nu.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x).collect();
            let de_i: Vec<f64> = de.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x).collect();
            let m = fit_with_centers(&centers, &nu_i, &de_i, sigma, lambda).unwrap();
            let (w_de, w_nu) = (m.ratio(de[i]), m.ratio(nu[i]));
            literal += 0.5 * w_de * w_de - w_nu;
        }
        literal /= n as f64;
        let closed = loocv_score(&nu, &de, sigma, lambda, 20).unwrap();
        worst_loo = worst_loo.max((closed - literal).abs());
    }
    verdict(
        worst_alpha < ALPHA_TOL && worst_loo < LOOCV_TOL,
        format!("{ULSIF_INSTANCES} instances; worst alpha error {worst_alpha:.1e}, worst LOOCV gap {worst_loo:.1e}"),
    )
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let shapes = [(8, 8), (16, 16), (12, 16), (16, 10)];
    let mut exact = 0;
    let mut full_zero = true;
    for t in 0..RECOVERY_TRIALS {
        let (rows, cols) = shapes[t % shapes.len()];
        let n = rows * cols;
        let mask = make_mask(rows, cols, [0.4, 0.5, 0.6][t % 3], 3000 + t as u64).unwrap();
        let k = rng.random_range(1..=mask.len() / 8);
        let mut coeffs = vec![0.0; n];
        coeffs[0] = 400.0 * (n as f64).sqrt();
        for i in rand::seq::index::sample(&mut rng, n - 1, k).iter() {
            let mag = rng.random_range(1.0..4.0) * (n as f64).sqrt();
            coeffs[i + 1] = if rng.random_bool(0.5) { mag } else { -mag };
        }
        let grid = RoGrid::new(rows, cols, Dct2d::new(rows, cols).inverse(&coeffs)).unwrap();
        if vp_reconstruct(&grid, &mask, &VpConfig::default()).unwrap().rmse_mhz < RECOVERY_RMSE {
            exact += 1;
        }
        let full = make_mask(rows, cols, 1.0, t as u64).unwrap();
        if vp_reconstruct(&grid, &full, &VpConfig::default()).unwrap().rmse_mhz != 0.0 {
            full_zero = false;
        }
    }
    let rate = exact as f64 / RECOVERY_TRIALS as f64;
    verdict(
        rate >= RECOVERY_RATE && full_zero,
        format!("exact recovery {exact}/{RECOVERY_TRIALS}; full mask RMSE 0: {full_zero}"),
    )
}

fn brute_force(values: &[f64], left: &mut Vec<usize>) -> f64 {
    if left.is_empty() {
        return 0.0;
    }
    let first = left.remove(0);
    let mut best = f64::INFINITY;
    for k in 0..left.len() {
        let other = left.remove(k);
        best = best.min((values[first] - values[other]).abs() + brute_force(values, left));
        left.insert(k, other);
    }
    left.insert(0, first);
    best
}

fn criterion_4(default_runs: &[(ExperimentOutcome, Duration)]) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut optimal = 0;
    for _ in 0..MATCHING_TRIALS {
        let p = 2 * rng.random_range(1..=5);
        let v: Vec<f64> = (0..p).map(|_| rng.random_range(1.0..6.0)).collect();
        let cost: f64 = pair_by_rmse(&v)
            .unwrap()
            .pairs
            .iter()
            .map(|&(a, b)| (v[a - 1] - v[b - 1]).abs())
            .sum();
        if (cost - brute_force(&v, &mut (0..p).collect())).abs() < 1e-12 {
            optimal += 1;
        }
    }
    let structural = structural_pairing(32).unwrap();
    let recovered: Vec<usize> = default_runs
        .iter()
        .map(|(o, _)| {
            o.pairing
                .pairs
                .iter()
                .filter(|p| structural.pairs.contains(p))
                .count()
        })
        .collect();
    let full = recovered.iter().filter(|&&k| k == 16).count();
    verdict(
        optimal == MATCHING_TRIALS && full >= PAIRING_SEEDS_REQUIRED,
        format!(
            "brute-force optimal {optimal}/{MATCHING_TRIALS}; structural CPs recovered per seed {recovered:?} ({full}/10 complete)"
        ),
    )
}

fn criterion_5(default_runs: &[(ExperimentOutcome, Duration)]) -> Verdict {
    let mut good = 0;
    let mut rows = Vec::new();
    for (o, _) in default_runs {
        let r = &o.report;
        let (acc, auc, recall) = (r.accuracy.unwrap(), r.auc.unwrap(), r.aged_recall.unwrap());
        let ok = recall == 1.0 && acc >= ACCURACY_FLOOR - 1e-12 && auc >= AUC_FLOOR;
        if ok {
            good += 1;
        }
        rows.push(format!("acc {:.2}% auc {auc:.3} recall {recall:.2}", acc * 100.0));
    }
    verdict(
        good >= DETECTION_SEEDS_REQUIRED,
        format!("{good}/10 seeds meet all bounds [{}]", rows.join("; ")),
    )
}

fn criterion_6(default_runs: &[(ExperimentOutcome, Duration)]) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut worst = 0.0f64;
    let mut shape_ok = true;
    let check_shape = |pts: &[(f64, f64)]| {
        pts.first() == Some(&(0.0, 0.0))
            && pts.last() == Some(&(1.0, 1.0))
            && pts.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1)
    };
    for t in 0..ROC_SETS {
        let n = rng.random_range(2..=40);
        let mut pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.35)).collect();
        pos[0] = true;
        pos[1] = false;
        let scores: Vec<f64> = if t % 4 == 0 {
            (0..n).map(|_| rng.random_range(0..4) as f64).collect()
        } else {
            (0..n).map(|_| rng.random::<f64>() * 100.0).collect()
        };
        let roc = roc_curve(&scores, &pos).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if pos[i] && !pos[j] {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        worst = worst.max((roc.auc - num / den).abs());
        shape_ok &= check_shape(&roc.points);
    }
    for (o, _) in default_runs {
        shape_ok &= o.report.roc.as_deref().is_some_and(check_shape);
    }
    verdict(
        worst < ROC_TOL && shape_ok,
        format!("{ROC_SETS} random sets; worst AUC gap {worst:.1e}; endpoints and monotonicity hold: {shape_ok}"),
    )
}

fn criterion_7(dir: &Path) -> Verdict {
    let bin = env!("CARGO_BIN_EXE_xfp");
    let mut reports = Vec::new();
    for run in 0..2 {
        let out = dir.join(format!("determinism-{run}"));
        let status = std::process::Command::new(bin)
            .args(["run", "--seed", "7", "--out-dir"])
            .arg(&out)
            .output()
            .expect("binary runs");
        if !status.status.success() {
            return verdict(false, format!("run failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        reports.push(std::fs::read(out.join("report.json")).unwrap());
    }
    verdict(
        reports[0] == reports[1],
        format!("two default-config runs, report.json {} bytes each", reports[0].len()),
    )
}

fn criterion_8(dir: &Path) -> Verdict {
    let aucs: Vec<f64> = SEEDS
        .map(|seed| experiment(seed, 0.0, dir).0.report.auc.unwrap())
        .collect();
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    let within = aucs
        .iter()
        .filter(|a| (NULL_AUC_RANGE.0..=NULL_AUC_RANGE.1).contains(*a))
        .count();
    verdict(
        (NULL_AUC_RANGE.0..=NULL_AUC_RANGE.1).contains(&mean),
        format!(
            "mean AUC over 10 seeds {mean:.3}; per seed {:?} ({within}/10 individually in range)",
            aucs.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let default_runs: Vec<_> = SEEDS.map(|seed| experiment(seed, 0.75, dir.path())).collect();

    let results = [
        ("1 comparison-count audit", criterion_1(&default_runs)),
        ("2 uLSIF oracle equivalence", criterion_2()),
        ("3 VP sparse-recovery exactness", criterion_3()),
        ("4 pairing optimality and recovery", criterion_4(&default_runs)),
        ("5 detection on default simulation", criterion_5(&default_runs)),
        ("6 ROC oracle", criterion_6(&default_runs)),
        ("7 determinism of run", criterion_7(dir.path())),
        ("8 zero-aging null check", criterion_8(dir.path())),
    ];
    println!();
    for (name, v) in &results {
        println!("[{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed = results.iter().filter(|(_, v)| !v.pass).count();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
