//! Orthonormal 2-D DCT-II over row-major grids.

use std::f64::consts::PI;

/// Row `k` holds the `k`-th orthonormal DCT-II basis vector of length `n`.
pub fn basis_1d(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    let nf = n as f64;
    for k in 0..n {
        let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for i in 0..n {
            out[k * n + i] = scale * (PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos();
        }
    }
    out
}

/// Separable 2-D transform for one grid shape. Coefficient `(u, v)` lives at
/// index `u * cols + v`, so the coefficient array has the grid's layout.
#[derive(Debug, Clone)]
pub struct Dct2d {
    rows: usize,
    cols: usize,
    row_basis: Vec<f64>,
    col_basis: Vec<f64>,
}

impl Dct2d {
    pub fn new(rows: usize, cols: usize) -> Self {
        Dct2d {
            rows,
            cols,
            row_basis: basis_1d(rows),
            col_basis: basis_1d(cols),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Value of basis function `(u, v)` at cell `(r, c)`.
    #[inline]
    pub fn atom_at(&self, u: usize, v: usize, r: usize, c: usize) -> f64 {
        self.row_basis[u * self.rows + r] * self.col_basis[v * self.cols + c]
    }

    pub fn atom(&self, u: usize, v: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(self.atom_at(u, v, r, c));
            }
        }
        out
    }

    /// Grid to coefficients.
    pub fn forward(&self, grid: &[f64]) -> Vec<f64> {
        assert_eq!(grid.len(), self.rows * self.cols);
        // Along columns first: tmp[r][v] = sum_c grid[r][c] * B_c[v][c].
        let mut tmp = vec![0.0; grid.len()];
        for r in 0..self.rows {
            let row = &grid[r * self.cols..(r + 1) * self.cols];
            for v in 0..self.cols {
                let b = &self.col_basis[v * self.cols..(v + 1) * self.cols];
                tmp[r * self.cols + v] = dot(row, b);
            }
        }
        let mut out = vec![0.0; grid.len()];
        for u in 0..self.rows {
            let b = &self.row_basis[u * self.rows..(u + 1) * self.rows];
            for (r, &w) in b.iter().enumerate() {
                let src = &tmp[r * self.cols..(r + 1) * self.cols];
                let dst = &mut out[u * self.cols..(u + 1) * self.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        out
    }

    /// Coefficients to grid.
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.rows * self.cols);
        // tmp[r][v] = sum_u B_r[u][r] * coeffs[u][v]
        let mut tmp = vec![0.0; coeffs.len()];
        for u in 0..self.rows {
            let src = &coeffs[u * self.cols..(u + 1) * self.cols];
            for r in 0..self.rows {
                let w = self.row_basis[u * self.rows + r];
                if w == 0.0 {
                    continue;
                }
                let dst = &mut tmp[r * self.cols..(r + 1) * self.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        let mut out = vec![0.0; coeffs.len()];
        for r in 0..self.rows {
            let row = &tmp[r * self.cols..(r + 1) * self.cols];
            for c in 0..self.cols {
                let mut acc = 0.0;
                for (v, &t) in row.iter().enumerate() {
                    acc += t * self.col_basis[v * self.cols + c];
                }
                out[r * self.cols + c] = acc;
            }
        }
        out
    }
}

/// The `k` lowest-order `(u, v)` index pairs, ordered by `u + v`, then `u`.
pub fn low_order_indices(rows: usize, cols: usize, k: usize) -> Vec<(usize, usize)> {
    let mut idx: Vec<(usize, usize)> = (0..rows)
        .flat_map(|u| (0..cols).map(move |v| (u, v)))
        .collect();
    idx.sort_by_key(|&(u, v)| (u + v, u));
    idx.truncate(k);
    idx
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
