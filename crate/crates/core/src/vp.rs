//! Virtual-Probe reconstruction.
//!
//! A full path grid is estimated from a sparse sample of RO sites by
//! orthogonal matching pursuit over the orthonormal 2-D DCT-II dictionary.
//! The mean is handled outside the pursuit: sampled values and atoms are
//! centered over the sampled sites, the pursuit runs on the non-DC atoms,
//! and the offset is recovered from the fitted coefficients afterwards.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dct::{dot, Dct2d};
use crate::error::{Error, Result};
use crate::fingerprint::{DeviceFingerprint, RoGrid};
use crate::rng::{self, Role};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMask {
    rows: usize,
    cols: usize,
    /// Distinct `(row, col)` sites in row-major order.
    locations: Vec<(usize, usize)>,
    fraction: f64,
}

impl SampleMask {
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn locations(&self) -> &[(usize, usize)] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }
}

/// Number of sites sampled at `fraction` of an `rows x cols` grid.
pub fn mask_size(rows: usize, cols: usize, fraction: f64) -> usize {
    (fraction * (rows * cols) as f64).round() as usize
}

/// Uniform sample without replacement of `round(fraction * R * C)` sites.
pub fn make_mask(rows: usize, cols: usize, fraction: f64, seed: u64) -> Result<SampleMask> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::parameter("fraction", format!("{fraction} is outside (0, 1]")));
    }
    let n = rows * cols;
    let m = mask_size(rows, cols, fraction);
    if m == 0 {
        return Err(Error::parameter(
            "fraction",
            format!("{fraction} of a {rows}x{cols} grid samples no cells"),
        ));
    }
    let mut rng = rng::stream(seed, rng::NONE, rng::NONE, Role::SampleMask);
    let mut flat = index::sample(&mut rng, n, m).into_vec();
    flat.sort_unstable();
    Ok(SampleMask {
        rows,
        cols,
        locations: flat.into_iter().map(|k| (k / cols, k % cols)).collect(),
        fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VpConfig {
    pub fraction: f64,
    /// Pursuit stops once the residual RMS on sampled sites drops below this.
    pub stop_tol_mhz: f64,
    /// Atom cap; `None` means `floor(|mask| / 4)`.
    pub max_atoms: Option<usize>,
}

impl Default for VpConfig {
    fn default() -> Self {
        VpConfig {
            fraction: 0.1,
            stop_tol_mhz: 0.05,
            max_atoms: None,
        }
    }
}

impl VpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::config("vp.fraction", "must lie in (0, 1]"));
        }
        if !(self.stop_tol_mhz.is_finite() && self.stop_tol_mhz >= 0.0) {
            return Err(Error::config("vp.stop_tol_mhz", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VpEstimate {
    pub reconstructed: RoGrid,
    pub rmse_mhz: f64,
    /// Non-DC atoms selected by the pursuit.
    pub n_atoms: usize,
}

/// Root-mean-square difference over all cells.
pub fn rmse(a: &RoGrid, b: &RoGrid) -> f64 {
    let n = a.as_slice().len() as f64;
    let ss: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    (ss / n).sqrt()
}

/// Per-mask state for reconstructing any grid sampled with that mask.
///
/// Atoms are the non-DC DCT basis functions restricted to the sampled
/// sites, centered and scaled to unit norm. They are never materialized:
/// because the residual is centered, its correlation with every atom is a
/// sparse forward DCT of the residual divided by the atom norm.
pub struct VpSolver {
    dct: Dct2d,
    mask: SampleMask,
    /// `col_basis` transposed: entry `c * cols + v` is basis `v` at column `c`.
    col_basis_t: Vec<f64>,
    row_basis: Vec<f64>,
    /// Norm of each centered restricted atom, by flat DCT index; 0 marks an
    /// atom that is constant over the sampled sites (DC included).
    norms: Vec<f64>,
    /// Mean of each raw restricted atom over the sampled sites.
    means: Vec<f64>,
    stop_tol: f64,
    max_atoms: usize,
}

impl VpSolver {
    pub fn new(mask: &SampleMask, config: &VpConfig) -> Self {
        let (rows, cols) = mask.dims();
        let dct = Dct2d::new(rows, cols);
        let m = mask.len() as f64;
        let row_basis = crate::dct::basis_1d(rows);
        let col_basis = crate::dct::basis_1d(cols);
        let mut col_basis_t = vec![0.0; cols * cols];
        for v in 0..cols {
            for c in 0..cols {
                col_basis_t[c * cols + v] = col_basis[v * cols + c];
            }
        }

        // Sums of atom values and squared values over the sampled sites,
        // both separable in (row, col).
        let mut sums = vec![0.0; rows * cols];
        let mut sq_sums = vec![0.0; rows * cols];
        let mut by_row: Vec<Vec<usize>> = vec![Vec::new(); rows];
        for &(r, c) in mask.locations() {
            by_row[r].push(c);
        }
        for (r, row_cols) in by_row.iter().enumerate() {
            if row_cols.is_empty() {
                continue;
            }
            let mut t1 = vec![0.0; cols];
            let mut t2 = vec![0.0; cols];
            for &c in row_cols {
                let bt = &col_basis_t[c * cols..(c + 1) * cols];
                for v in 0..cols {
                    t1[v] += bt[v];
                    t2[v] += bt[v] * bt[v];
                }
            }
            for u in 0..rows {
                let w = row_basis[u * rows + r];
                let w2 = w * w;
                let s1 = &mut sums[u * cols..(u + 1) * cols];
                for (s, t) in s1.iter_mut().zip(&t1) {
                    *s += w * t;
                }
                let s2 = &mut sq_sums[u * cols..(u + 1) * cols];
                for (s, t) in s2.iter_mut().zip(&t2) {
                    *s += w2 * t;
                }
            }
        }
        let means: Vec<f64> = sums.iter().map(|s| s / m).collect();
        let norms: Vec<f64> = sq_sums
            .iter()
            .zip(&means)
            .enumerate()
            .map(|(k, (sq, mean))| {
                let var = sq - m * mean * mean;
                if k == 0 || var <= 1e-12 * sq {
                    0.0
                } else {
                    var.sqrt()
                }
            })
            .collect();

        let max_atoms = config.max_atoms.unwrap_or(mask.len() / 4);
        VpSolver {
            dct,
            mask: mask.clone(),
            col_basis_t,
            row_basis,
            norms,
            means,
            stop_tol: config.stop_tol_mhz,
            max_atoms,
        }
    }

    /// Restricted, centered, unit-norm atom at flat DCT index `k`.
    fn atom(&self, k: usize) -> Vec<f64> {
        let cols = self.dct.cols();
        let (u, v) = (k / cols, k % cols);
        let (mean, norm) = (self.means[k], self.norms[k]);
        self.mask
            .locations()
            .iter()
            .map(|&(r, c)| (self.dct.atom_at(u, v, r, c) - mean) / norm)
            .collect()
    }

    /// `sum_i residual_i * atom_k(site_i)` for every flat index `k`.
    fn correlations(&self, residual: &[f64]) -> Vec<f64> {
        let (rows, cols) = (self.dct.rows(), self.dct.cols());
        let mut tmp = vec![0.0; rows * cols];
        for (&(r, c), &x) in self.mask.locations().iter().zip(residual) {
            let bt = &self.col_basis_t[c * cols..(c + 1) * cols];
            let dst = &mut tmp[r * cols..(r + 1) * cols];
            for (d, b) in dst.iter_mut().zip(bt) {
                *d += x * b;
            }
        }
        let mut out = vec![0.0; rows * cols];
        for u in 0..rows {
            let dst = &mut out[u * cols..(u + 1) * cols];
            for r in 0..rows {
                let w = self.row_basis[u * rows + r];
                let src = &tmp[r * cols..(r + 1) * cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        out
    }

    pub fn reconstruct(&self, grid: &RoGrid) -> Result<VpEstimate> {
        if grid.dims() != self.mask.dims() {
            return Err(Error::Dimension(format!(
                "mask is {:?}, grid is {:?}",
                self.mask.dims(),
                grid.dims()
            )));
        }
        let m = self.mask.len();
        let samples: Vec<f64> = self
            .mask
            .locations()
            .iter()
            .map(|&(r, c)| grid.get(r, c))
            .collect();
        let sample_mean = samples.iter().sum::<f64>() / m as f64;
        let centered: Vec<f64> = samples.iter().map(|s| s - sample_mean).collect();

        let (selected, coeffs) = self.pursue(&centered);

        // Undo centering and normalization: y = offset + sum_k a_k * atom_k.
        let (rows, cols) = grid.dims();
        let mut dct_coeffs = vec![0.0; rows * cols];
        let mut offset = sample_mean;
        for (&k, &b) in selected.iter().zip(&coeffs) {
            let a = b / self.norms[k];
            dct_coeffs[k] = a;
            offset -= a * self.means[k];
        }
        dct_coeffs[0] = offset * ((rows * cols) as f64).sqrt();
        let mut reconstructed = RoGrid::new(rows, cols, self.dct.inverse(&dct_coeffs))?;
        for (&(r, c), &s) in self.mask.locations().iter().zip(&samples) {
            reconstructed.set(r, c, s);
        }
        let rmse_mhz = rmse(&reconstructed, grid);
        Ok(VpEstimate {
            reconstructed,
            rmse_mhz,
            n_atoms: selected.len(),
        })
    }

    /// Orthogonal matching pursuit on centered samples. Returns the flat DCT
    /// indices picked and their least-squares coefficients on the unit-norm
    /// atoms.
    fn pursue(&self, target: &[f64]) -> (Vec<usize>, Vec<f64>) {
        let m = target.len();
        let mut residual = target.to_vec();
        let mut used = vec![false; self.norms.len()];
        let mut selected: Vec<usize> = Vec::new();
        // Thin QR of the selected atoms: q holds orthonormal columns, r is
        // upper triangular stored column by column.
        let mut q: Vec<Vec<f64>> = Vec::new();
        let mut r: Vec<Vec<f64>> = Vec::new();
        let target_norm = dot(target, target).sqrt();

        while selected.len() < self.max_atoms.min(m.saturating_sub(1)) {
            let res_rms = (dot(&residual, &residual) / m as f64).sqrt();
            if res_rms < self.stop_tol || res_rms <= 1e-13 * (1.0 + target_norm) {
                break;
            }
            let corr = self.correlations(&residual);
            let mut best = None;
            let mut best_corr = 0.0;
            for (k, (&c, &norm)) in corr.iter().zip(&self.norms).enumerate() {
                if norm == 0.0 || used[k] {
                    continue;
                }
                let score = c.abs() / norm;
                if score > best_corr {
                    best_corr = score;
                    best = Some(k);
                }
            }
            let Some(k) = best else { break };
            used[k] = true;

            let mut v = self.atom(k);
            let mut col = vec![0.0; q.len() + 1];
            for _ in 0..2 {
                for (i, qi) in q.iter().enumerate() {
                    let proj = dot(qi, &v);
                    col[i] += proj;
                    v.iter_mut().zip(qi).for_each(|(x, y)| *x -= proj * y);
                }
            }
            let norm = dot(&v, &v).sqrt();
            // Already in the span of earlier picks.
            if norm < 1e-10 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            col[q.len()] = norm;
            let proj = dot(&v, &residual);
            residual.iter_mut().zip(&v).for_each(|(x, y)| *x -= proj * y);
            q.push(v);
            r.push(col);
            selected.push(k);
        }

        // Back-substitution for R b = Q^T y.
        let k = selected.len();
        let qty: Vec<f64> = q.iter().map(|qi| dot(qi, target)).collect();
        let mut coeffs = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = qty[i];
            for jj in i + 1..k {
                s -= r[jj][i] * coeffs[jj];
            }
            coeffs[i] = s / r[i][i];
        }
        (selected, coeffs)
    }
}

pub fn vp_reconstruct(grid: &RoGrid, mask: &SampleMask, config: &VpConfig) -> Result<VpEstimate> {
    if grid.dims() != mask.dims() {
        return Err(Error::Dimension(format!(
            "mask is {:?}, grid is {:?}",
            mask.dims(),
            grid.dims()
        )));
    }
    VpSolver::new(mask, config).reconstruct(grid)
}

/// Per-path estimates for one device, all paths sharing `mask`.
pub fn profile_estimates(
    device: &DeviceFingerprint,
    mask: &SampleMask,
    config: &VpConfig,
) -> Result<Vec<VpEstimate>> {
    let solver = VpSolver::new(mask, config);
    device
        .paths
        .par_iter()
        .map(|p| solver.reconstruct(&p.grid))
        .collect()
}

/// RMSE of the VP estimate for every path, in path order.
pub fn rmse_profile(device: &DeviceFingerprint, mask: &SampleMask, config: &VpConfig) -> Result<Vec<f64>> {
    Ok(profile_estimates(device, mask, config)?
        .into_iter()
        .map(|e| e.rmse_mhz)
        .collect())
}
