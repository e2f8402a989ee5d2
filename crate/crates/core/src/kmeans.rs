//! k-means with k-means++ seeding.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{self, Role};

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

impl Clustering {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn check_points(points: &[Vec<f64>], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::parameter("k", "must be >= 1"));
    }
    if k > points.len() {
        return Err(Error::parameter(
            "k",
            format!("k = {k} exceeds the {} points", points.len()),
        ));
    }
    let dim = points[0].len();
    if let Some(i) = points.iter().position(|p| p.len() != dim) {
        return Err(Error::Dimension(format!(
            "point {i} has {} components, expected {dim}",
            points[i].len()
        )));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::data("points", "contain non-finite values"));
    }
    Ok(())
}

/// D^2 seeding: first center uniform, the rest drawn with probability
/// proportional to squared distance from the nearest chosen center.
pub fn plus_plus_seeds<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` past the last positive weight.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            // Every point coincides with a center already.
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    chosen
}

/// Lloyd iterations from the given initial centroids. Points equidistant to
/// several centroids join the lowest-indexed one; an emptied cluster keeps
/// its previous centroid.
pub fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> Clustering {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments: Vec<usize> = vec![usize::MAX; points.len()];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let mut best = 0;
            let mut best_d = sq_dist(p, &centroids[0]);
            for (j, c) in centroids.iter().enumerate().skip(1) {
                let d = sq_dist(p, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    let inertia = assignments
        .iter()
        .zip(points)
        .map(|(&a, p)| sq_dist(p, &centroids[a]))
        .sum();
    Clustering {
        assignments,
        centroids,
        inertia,
        iterations,
    }
}

pub fn kmeans_pp(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    kmeans_pp_restarts(points, k, seed, 1)
}

/// Runs `n_init` seeded k-means++ fits from one stream and keeps the lowest
/// inertia, the earliest on ties.
pub fn kmeans_pp_restarts(points: &[Vec<f64>], k: usize, seed: u64, n_init: usize) -> Result<Clustering> {
    check_points(points, k)?;
    if n_init == 0 {
        return Err(Error::parameter("n_init", "must be >= 1"));
    }
    let mut rng = rng::stream(seed, rng::NONE, rng::NONE, Role::KMeans);
    let mut best: Option<Clustering> = None;
    for _ in 0..n_init {
        let seeds = plus_plus_seeds(points, k, &mut rng);
        let centroids = seeds.iter().map(|&i| points[i].clone()).collect();
        let fit = lloyd(points, centroids);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("n_init >= 1"))
}
