//! Column-wise comparisons, per-CP aggregation and classification.
//!
//! The symmetric scheme compares column `c` of path `a` against column `c`
//! of its partner `b` for every CP and column: `C * P / 2` comparisons per
//! device. The adjacent-column baseline compares columns `c` and `c + 1`
//! within every path: `(C - 1) * P` comparisons.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{DeviceFingerprint, RoGrid};
use crate::kmeans::{kmeans_pp_restarts, Clustering};
use crate::pairing::SymmetryPairing;
use crate::ulsif::{anomaly_score, UlsifConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CpScoreVector {
    pub device_id: String,
    /// Maximum anomaly score per CP (or per path for the baseline).
    pub scores: Vec<f64>,
    /// Full `unit x column` score matrix when retained.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_column: Option<Vec<Vec<f64>>>,
}

impl CpScoreVector {
    /// Device-level statistic: the largest CP score.
    pub fn max_score(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Runs uLSIF comparisons and counts every invocation.
#[derive(Debug, Default)]
pub struct Scorer {
    pub config: UlsifConfig,
    pub retain_columns: bool,
    proposed: AtomicU64,
    baseline: AtomicU64,
}

impl Scorer {
    pub fn new(config: UlsifConfig) -> Self {
        Scorer {
            config,
            ..Default::default()
        }
    }

    pub fn retaining_columns(mut self) -> Self {
        self.retain_columns = true;
        self
    }

    /// Comparisons run by [`Scorer::score_device_symmetric`] so far.
    pub fn proposed_count(&self) -> u64 {
        self.proposed.load(Ordering::Relaxed)
    }

    /// Comparisons run by [`Scorer::score_device_baseline`] so far.
    pub fn baseline_count(&self) -> u64 {
        self.baseline.load(Ordering::Relaxed)
    }

    /// One column comparison. Two bit-identical constant columns have no
    /// spread to standardize by; they score the floor value 0.
    fn compare(&self, f: &[f64], f_prime: &[f64]) -> Result<f64> {
        if f == f_prime && f.iter().all(|&x| x == f[0]) {
            return Ok(0.0);
        }
        Ok(anomaly_score(f, f_prime, &self.config)?.score)
    }

    pub fn score_device_symmetric(
        &self,
        device: &DeviceFingerprint,
        pairing: &SymmetryPairing,
    ) -> Result<CpScoreVector> {
        pairing.check(device.n_paths())?;
        let grids: Vec<(&RoGrid, &RoGrid)> = pairing
            .pairs
            .iter()
            .map(|&(a, b)| {
                let ga = device.path(a);
                let gb = device.path(b);
                match (ga, gb) {
                    (Some(ga), Some(gb)) => Ok((ga, gb)),
                    _ => Err(Error::Pairing(format!(
                        "device {} lacks path {a} or {b}",
                        device.device_id
                    ))),
                }
            })
            .collect::<Result<_>>()?;
        let cols = grids[0].0.cols();
        let tasks: Vec<(usize, usize)> = (0..grids.len())
            .flat_map(|k| (0..cols).map(move |c| (k, c)))
            .collect();
        let flat: Vec<f64> = tasks
            .par_iter()
            .map(|&(k, c)| {
                let (ga, gb) = grids[k];
                self.proposed.fetch_add(1, Ordering::Relaxed);
                self.compare(&ga.column(c), &gb.column(c))
            })
            .collect::<Result<_>>()?;
        Ok(self.aggregate(&device.device_id, flat, cols))
    }

    pub fn score_device_baseline(&self, device: &DeviceFingerprint) -> Result<CpScoreVector> {
        let cols = device
            .dims()
            .ok_or_else(|| Error::data(device.device_id.clone(), "device has no paths"))?
            .1;
        let per_path = cols - 1;
        let tasks: Vec<(usize, usize)> = (0..device.n_paths())
            .flat_map(|p| (0..per_path).map(move |c| (p, c)))
            .collect();
        let flat: Vec<f64> = tasks
            .par_iter()
            .map(|&(p, c)| {
                let g = &device.paths[p].grid;
                self.baseline.fetch_add(1, Ordering::Relaxed);
                self.compare(&g.column(c), &g.column(c + 1))
            })
            .collect::<Result<_>>()?;
        Ok(self.aggregate(&device.device_id, flat, per_path))
    }

    fn aggregate(&self, device_id: &str, flat: Vec<f64>, width: usize) -> CpScoreVector {
        let rows: Vec<Vec<f64>> = flat.chunks(width).map(<[f64]>::to_vec).collect();
        let scores = rows
            .iter()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        CpScoreVector {
            device_id: device_id.to_string(),
            scores,
            per_column: self.retain_columns.then_some(rows),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prediction {
    Fresh,
    Recycled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    /// In input order.
    pub labels: Vec<Prediction>,
    pub clustering: Clustering,
    /// Index of the cluster labeled recycled, `None` when one cluster is empty.
    pub recycled_cluster: Option<usize>,
}

/// Seeded k-means++ fits per classification; the lowest inertia wins.
pub const KMEANS_RESTARTS: usize = 10;

/// Two-cluster k-means++ over CP score vectors. The cluster whose centroid
/// has the larger mean component is called recycled; if either cluster ends
/// up empty every device is called fresh.
///
/// Vectors are clustered in `device_id` order, so the result does not depend
/// on the order devices are passed in.
pub fn classify(vectors: &[CpScoreVector], seed: u64) -> Result<Classification> {
    if vectors.len() < 2 {
        return Err(Error::parameter("score_vectors", "need at least 2 devices"));
    }
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&a, &b| vectors[a].device_id.cmp(&vectors[b].device_id).then(a.cmp(&b)));
    let points: Vec<Vec<f64>> = order.iter().map(|&i| vectors[i].scores.clone()).collect();
    let sorted = kmeans_pp_restarts(&points, 2, seed, KMEANS_RESTARTS)?;

    let sizes = sorted.cluster_sizes();
    let recycled_cluster = if sizes.contains(&0) {
        None
    } else {
        let mean = |c: &Vec<f64>| c.iter().sum::<f64>() / c.len().max(1) as f64;
        Some(if mean(&sorted.centroids[1]) > mean(&sorted.centroids[0]) {
            1
        } else {
            0
        })
    };

    let mut assignments = vec![0; vectors.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = sorted.assignments[pos];
    }
    let labels = assignments
        .iter()
        .map(|&a| match recycled_cluster {
            Some(r) if a == r => Prediction::Recycled,
            _ => Prediction::Fresh,
        })
        .collect();
    Ok(Classification {
        labels,
        clustering: Clustering {
            assignments,
            ..sorted
        },
        recycled_cluster,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonAudit {
    pub proposed: u64,
    pub baseline: u64,
    pub ratio: f64,
}

/// Comparisons per device for the symmetric scheme (`C * P / 2`) and the
/// adjacent-column baseline (`(C - 1) * P`).
pub fn audit_comparisons(rows: usize, cols: usize, paths: usize) -> Result<ComparisonAudit> {
    if rows < 2 {
        return Err(Error::parameter("rows", "must be >= 2"));
    }
    if cols < 2 {
        return Err(Error::parameter("cols", "must be >= 2"));
    }
    if paths == 0 || paths % 2 != 0 {
        return Err(Error::parameter("paths", "must be even and positive"));
    }
    let proposed = (cols * paths / 2) as u64;
    let baseline = ((cols - 1) * paths) as u64;
    Ok(ComparisonAudit {
        proposed,
        baseline,
        ratio: proposed as f64 / baseline as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceSummary {
    pub device_id: String,
    pub max_score: f64,
    pub label: Prediction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<crate::fingerprint::Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub labels: BTreeMap<String, Prediction>,
    /// Centroids in cluster order; see `recycled_cluster`.
    pub cluster_means: Vec<Vec<f64>>,
    pub recycled_cluster: Option<usize>,
    pub devices: Vec<DeviceSummary>,
    pub roc: Option<Vec<(f64, f64)>>,
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    /// Share of aged devices labeled recycled.
    pub aged_recall: Option<f64>,
    pub comparisons_proposed: u64,
    pub comparisons_baseline: u64,
    pub comparison_ratio: f64,
    /// Instrumented uLSIF comparisons over all devices.
    pub comparisons_performed: u64,
}
