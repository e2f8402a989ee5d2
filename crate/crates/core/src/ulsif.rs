//! Unconstrained least-squares importance fitting (uLSIF).
//!
//! Models the density ratio `w(x) = p_nu(x) / p_de(x)` as
//! `w(x) = sum_l alpha_l K(x, c_l)` with Gaussian kernels centered on
//! numerator points, and fits `alpha` by the ridge system
//! `(H + lambda I) alpha = h` where
//!
//! ```text
//! H[l][l'] = mean_j K(x_de_j, c_l) K(x_de_j, c_l')
//! h[l]     = mean_i K(x_nu_i, c_l)
//! ```
//!
//! Model selection uses the closed-form leave-one-out criterion: removing
//! sample `i` from both sides is a rank-one update of `H`, so every
//! held-out fit follows from one factorization via Sherman-Morrison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

#[inline]
pub fn gaussian_kernel(x: f64, c: f64, sigma: f64) -> f64 {
    let d = x - c;
    (-d * d / (2.0 * sigma * sigma)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UlsifConfig {
    /// Kernel widths, in standardized units.
    pub sigma_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub max_centers: usize,
    /// Average the scores of both comparison directions.
    pub symmetrize: bool,
}

impl Default for UlsifConfig {
    fn default() -> Self {
        UlsifConfig {
            sigma_grid: vec![0.25, 0.5, 0.75, 1.0, 1.5, 2.0],
            lambda_grid: vec![1e-3, 1e-2, 1e-1, 1.0],
            max_centers: 50,
            symmetrize: true,
        }
    }
}

impl UlsifConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_grid.is_empty() || self.sigma_grid.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config("ulsif.sigma_grid", "must be nonempty with finite values > 0"));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::config("ulsif.lambda_grid", "must be nonempty with finite values > 0"));
        }
        if self.max_centers == 0 {
            return Err(Error::config("ulsif.max_centers", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UlsifModel {
    pub centers: Vec<f64>,
    pub sigma: f64,
    pub lambda: f64,
    pub alpha: Vec<f64>,
}

impl UlsifModel {
    /// Fitted ratio without clamping; uLSIF can go negative.
    pub fn raw_ratio(&self, x: f64) -> f64 {
        self.centers
            .iter()
            .zip(&self.alpha)
            .map(|(&c, &a)| a * gaussian_kernel(x, c, self.sigma))
            .sum()
    }

    /// Fitted ratio clamped below at zero.
    pub fn ratio(&self, x: f64) -> f64 {
        self.raw_ratio(x).max(0.0)
    }
}

fn check_finite(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::data(name, "sample is empty"));
    }
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        return Err(Error::data(name, format!("value {i} is not finite")));
    }
    Ok(())
}

fn check_hyper(sigma: f64, lambda: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::parameter("sigma", format!("{sigma} must be finite and > 0")));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::parameter("lambda", format!("{lambda} must be finite and > 0")));
    }
    Ok(())
}

/// Kernel design for one `sigma`: `k_nu` is `b x n_nu`, `k_de` is `b x n_de`,
/// both row-major, plus the assembled `H` and `h`.
struct Design {
    b: usize,
    n_nu: usize,
    n_de: usize,
    k_nu: Vec<f64>,
    k_de: Vec<f64>,
    h_mat: Vec<f64>,
    h_vec: Vec<f64>,
}

impl Design {
    fn new(centers: &[f64], numerator: &[f64], denominator: &[f64], sigma: f64) -> Self {
        let b = centers.len();
        let (n_nu, n_de) = (numerator.len(), denominator.len());
        let mut k_nu = Vec::with_capacity(b * n_nu);
        let mut k_de = Vec::with_capacity(b * n_de);
        for &c in centers {
            k_nu.extend(numerator.iter().map(|&x| gaussian_kernel(x, c, sigma)));
            k_de.extend(denominator.iter().map(|&x| gaussian_kernel(x, c, sigma)));
        }
        let mut h_mat = vec![0.0; b * b];
        for l in 0..b {
            let rl = &k_de[l * n_de..(l + 1) * n_de];
            for m in 0..=l {
                let rm = &k_de[m * n_de..(m + 1) * n_de];
                let v = rl.iter().zip(rm).map(|(x, y)| x * y).sum::<f64>() / n_de as f64;
                h_mat[l * b + m] = v;
                h_mat[m * b + l] = v;
            }
        }
        let h_vec = (0..b)
            .map(|l| k_nu[l * n_nu..(l + 1) * n_nu].iter().sum::<f64>() / n_nu as f64)
            .collect();
        Design {
            b,
            n_nu,
            n_de,
            k_nu,
            k_de,
            h_mat,
            h_vec,
        }
    }

    /// Cholesky factor of `H + shift * I`.
    fn factor(&self, shift: f64) -> Result<Cholesky> {
        let mut a = self.h_mat.clone();
        for l in 0..self.b {
            a[l * self.b + l] += shift;
        }
        Cholesky::factor(&a, self.b)
    }

    fn de_column(&self, j: usize) -> Vec<f64> {
        (0..self.b).map(|l| self.k_de[l * self.n_de + j]).collect()
    }

    fn nu_column(&self, i: usize) -> Vec<f64> {
        (0..self.b).map(|l| self.k_nu[l * self.n_nu + i]).collect()
    }

    /// Closed-form leave-one-out criterion `mean_i (w_de_i^2 / 2 - w_nu_i)`
    /// over the first `min(n_nu, n_de)` samples of each side, with held-out
    /// ratios clamped at zero.
    ///
    /// With `B = H + lambda (n_de - 1) / n_de I`, dropping pair `i` gives
    /// `alpha_i = s (n_nu a0 - a1)`, `s = (n_de - 1) / (n_de (n_nu - 1))`,
    /// `a0 = B^-1 h + B^-1 phi c0`, `a1 = B^-1 psi + B^-1 phi c1`, where
    /// `c0 = phi' B^-1 h / d`, `c1 = phi' B^-1 psi / d`,
    /// `d = n_de - phi' B^-1 phi`. Only inner products through `B^-1` are
    /// needed, so forward substitution with the Cholesky factor suffices.
    fn loocv(&self, lambda: f64) -> Result<f64> {
        let (n_nu, n_de) = (self.n_nu as f64, self.n_de as f64);
        let n = self.n_nu.min(self.n_de);
        let chol = self.factor(lambda * (n_de - 1.0) / n_de)?;
        let mut g = self.h_vec.clone();
        chol.forward_in_place(&mut g);
        let scale = (n_de - 1.0) / (n_de * (n_nu - 1.0));
        let mut total = 0.0;
        for i in 0..n {
            let mut u = self.de_column(i);
            let mut v = self.nu_column(i);
            chol.forward_in_place(&mut u);
            chol.forward_in_place(&mut v);
            let (uu, ug, uv) = (dot(&u, &u), dot(&u, &g), dot(&u, &v));
            let (vg, vv) = (dot(&v, &g), dot(&v, &v));
            let denom = n_de - uu;
            let c0 = ug / denom;
            let c1 = uv / denom;
            let w_de = scale * (n_nu * (ug + uu * c0) - (uv + uu * c1));
            let w_nu = scale * (n_nu * (vg + uv * c0) - (vv + uv * c1));
            let (w_de, w_nu) = (w_de.max(0.0), w_nu.max(0.0));
            total += 0.5 * w_de * w_de - w_nu;
        }
        Ok(total / n as f64)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Kernel centers for a numerator sample: its first `max_centers` points.
pub fn centers_for(numerator: &[f64], max_centers: usize) -> Vec<f64> {
    numerator[..numerator.len().min(max_centers)].to_vec()
}

/// Fits `alpha` for explicitly given centers.
pub fn fit_with_centers(
    centers: &[f64],
    numerator: &[f64],
    denominator: &[f64],
    sigma: f64,
    lambda: f64,
) -> Result<UlsifModel> {
    check_finite("numerator", numerator)?;
    check_finite("denominator", denominator)?;
    check_finite("centers", centers)?;
    check_hyper(sigma, lambda)?;
    let design = Design::new(centers, numerator, denominator, sigma);
    let alpha = design.factor(lambda)?.solve(&design.h_vec);
    Ok(UlsifModel {
        centers: centers.to_vec(),
        sigma,
        lambda,
        alpha,
    })
}

pub fn fit(
    numerator: &[f64],
    denominator: &[f64],
    sigma: f64,
    lambda: f64,
    max_centers: usize,
) -> Result<UlsifModel> {
    if max_centers == 0 {
        return Err(Error::parameter("max_centers", "must be >= 1"));
    }
    check_finite("numerator", numerator)?;
    fit_with_centers(&centers_for(numerator, max_centers), numerator, denominator, sigma, lambda)
}

/// Closed-form leave-one-out score of one `(sigma, lambda)` setting.
pub fn loocv_score(
    numerator: &[f64],
    denominator: &[f64],
    sigma: f64,
    lambda: f64,
    max_centers: usize,
) -> Result<f64> {
    check_loo_samples(numerator, denominator)?;
    check_hyper(sigma, lambda)?;
    let centers = centers_for(numerator, max_centers.max(1));
    Design::new(&centers, numerator, denominator, sigma).loocv(lambda)
}

fn check_loo_samples(numerator: &[f64], denominator: &[f64]) -> Result<()> {
    check_finite("numerator", numerator)?;
    check_finite("denominator", denominator)?;
    for (name, xs) in [("numerator", numerator), ("denominator", denominator)] {
        if xs.len() < 2 {
            return Err(Error::data(name, "leave-one-out needs at least 2 samples"));
        }
        let first = xs[0];
        if xs.iter().all(|&x| x == first) {
            return Err(Error::data(name, "sample has zero variance"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelChoice {
    pub sigma: f64,
    pub lambda: f64,
    pub loocv: f64,
}

/// Grid search over `(sigma, lambda)` by the closed-form LOOCV score. Ties
/// go to the smallest sigma, then the smallest lambda.
pub fn select_model(
    numerator: &[f64],
    denominator: &[f64],
    sigma_grid: &[f64],
    lambda_grid: &[f64],
    max_centers: usize,
) -> Result<ModelChoice> {
    if sigma_grid.is_empty() {
        return Err(Error::parameter("sigma_grid", "is empty"));
    }
    if lambda_grid.is_empty() {
        return Err(Error::parameter("lambda_grid", "is empty"));
    }
    check_loo_samples(numerator, denominator)?;
    let centers = centers_for(numerator, max_centers.max(1));
    let mut best: Option<ModelChoice> = None;
    for &sigma in sigma_grid {
        for &lambda in lambda_grid {
            check_hyper(sigma, lambda)?;
        }
        let design = Design::new(&centers, numerator, denominator, sigma);
        for &lambda in lambda_grid {
            let loocv = design.loocv(lambda)?;
            let better = match &best {
                None => true,
                Some(b) => {
                    loocv < b.loocv
                        || (loocv == b.loocv
                            && (sigma < b.sigma || (sigma == b.sigma && lambda < b.lambda)))
                }
            };
            if better {
                best = Some(ModelChoice { sigma, lambda, loocv });
            }
        }
    }
    Ok(best.expect("grids are nonempty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnomalyScore {
    pub score: f64,
    pub n_nu: usize,
    pub n_de: usize,
    pub chosen_sigma: f64,
    pub chosen_lambda: f64,
    /// Score of the reverse direction when symmetrized.
    pub reverse: Option<DirectionScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectionScore {
    pub score: f64,
    pub sigma: f64,
    pub lambda: f64,
}

fn direction_score(numerator: &[f64], denominator: &[f64], config: &UlsifConfig) -> Result<DirectionScore> {
    let choice = select_model(
        numerator,
        denominator,
        &config.sigma_grid,
        &config.lambda_grid,
        config.max_centers,
    )?;
    let model = fit(numerator, denominator, choice.sigma, choice.lambda, config.max_centers)?;
    let score = numerator
        .iter()
        .map(|&x| (1.0 - model.ratio(x)).abs())
        .fold(0.0, f64::max);
    Ok(DirectionScore {
        score,
        sigma: choice.sigma,
        lambda: choice.lambda,
    })
}

/// Pooled mean and population standard deviation of two samples.
pub fn pooled_moments(f: &[f64], f_prime: &[f64]) -> (f64, f64) {
    let n = (f.len() + f_prime.len()) as f64;
    let mean = f.iter().chain(f_prime).sum::<f64>() / n;
    let var = f.iter().chain(f_prime).map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Anomaly score of `f` against `f_prime`: both samples are standardized
/// jointly, a model is selected and fitted with `f` as numerator, and the
/// score is the largest `|1 - w(x)|` over points `x` of `f`.
pub fn anomaly_score(f: &[f64], f_prime: &[f64], config: &UlsifConfig) -> Result<AnomalyScore> {
    for (name, xs) in [("f", f), ("f_prime", f_prime)] {
        if xs.len() < 4 {
            return Err(Error::parameter(name, format!("needs >= 4 samples, got {}", xs.len())));
        }
        check_finite(name, xs)?;
    }
    let (mean, sd) = pooled_moments(f, f_prime);
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::data("f, f_prime", "pooled standard deviation is zero"));
    }
    let zf: Vec<f64> = f.iter().map(|x| (x - mean) / sd).collect();
    let zg: Vec<f64> = f_prime.iter().map(|x| (x - mean) / sd).collect();

    let forward = direction_score(&zf, &zg, config)?;
    let (score, reverse) = if config.symmetrize {
        let rev = direction_score(&zg, &zf, config)?;
        (0.5 * (forward.score + rev.score), Some(rev))
    } else {
        (forward.score, None)
    };
    Ok(AnomalyScore {
        score,
        n_nu: f.len(),
        n_de: f_prime.len(),
        chosen_sigma: forward.sigma,
        chosen_lambda: forward.lambda,
        reverse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Role};
    use rand_distr::{Distribution, Normal};

    fn normal_sample(seed: u64, n: usize, mu: f64) -> Vec<f64> {
        let mut rng = stream(seed, 0, 0, Role::Test);
        let d = Normal::new(mu, 1.0).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn identical_samples_give_ratio_near_one() {
        let x = normal_sample(1, 50, 0.0);
        let m = fit(&x, &x, 1.0, 0.01, 50).unwrap();
        for &xi in &x {
            let w = m.ratio(xi);
            assert!((0.5..=2.0).contains(&w), "w({xi}) = {w}");
        }
    }

    #[test]
    fn singleton_grid_returns_its_point() {
        let x = normal_sample(2, 20, 0.0);
        let y = normal_sample(3, 20, 0.5);
        let c = select_model(&x, &y, &[0.7], &[0.05], 50).unwrap();
        assert_eq!((c.sigma, c.lambda), (0.7, 0.05));
    }

    #[test]
    fn selection_is_argmin() {
        let x = normal_sample(4, 25, 0.0);
        let y = normal_sample(5, 25, 1.0);
        let cfg = UlsifConfig::default();
        let c = select_model(&x, &y, &cfg.sigma_grid, &cfg.lambda_grid, 50).unwrap();
        for &s in &cfg.sigma_grid {
            for &l in &cfg.lambda_grid {
                assert!(c.loocv <= loocv_score(&x, &y, s, l, 50).unwrap());
            }
        }
    }

    #[test]
    fn degenerate_inputs() {
        let x = normal_sample(6, 10, 0.0);
        let flat = vec![1.0; 10];
        assert!(matches!(
            select_model(&flat, &x, &[1.0], &[0.1], 50),
            Err(Error::Data { sample, .. }) if sample == "numerator"
        ));
        assert!(matches!(
            select_model(&x, &flat, &[1.0], &[0.1], 50),
            Err(Error::Data { sample, .. }) if sample == "denominator"
        ));
        assert!(matches!(fit(&[f64::NAN], &x, 1.0, 0.1, 5), Err(Error::Data { .. })));
        assert!(matches!(fit(&x, &x, 0.0, 0.1, 5), Err(Error::Parameter { .. })));
        assert!(matches!(
            anomaly_score(&[2.0; 6], &[2.0; 6], &UlsifConfig::default()),
            Err(Error::Data { .. })
        ));
        assert!(matches!(
            anomaly_score(&[1.0, 2.0, 3.0], &x, &UlsifConfig::default()),
            Err(Error::Parameter { .. })
        ));
    }

    #[test]
    fn identical_samples_score_low() {
        let cfg = UlsifConfig::default();
        for seed in 0..20 {
            let x = normal_sample(100 + seed, 33, 0.0);
            let s = anomaly_score(&x, &x, &cfg).unwrap();
            assert!(s.score <= 0.5, "seed {seed}: {}", s.score);
        }
    }

    #[test]
    fn large_shift_scores_high() {
        let cfg = UlsifConfig::default();
        let x = normal_sample(7, 33, 0.0);
        let (_, sd) = pooled_moments(&x, &x);
        let shifted: Vec<f64> = x.iter().map(|v| v + 10.0 * sd).collect();
        let s = anomaly_score(&shifted, &x, &cfg).unwrap();
        assert!(s.score >= 0.9, "{}", s.score);
    }

    #[test]
    fn fit_is_bit_deterministic() {
        let x = normal_sample(8, 30, 0.0);
        let y = normal_sample(9, 30, 0.3);
        let a = fit(&x, &y, 0.5, 0.01, 20).unwrap();
        let b = fit(&x, &y, 0.5, 0.01, 20).unwrap();
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.centers.len(), 20);
    }
}
