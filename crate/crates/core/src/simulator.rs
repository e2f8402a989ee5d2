//! Synthetic fingerprint generator.
//!
//! Each device gets, per symmetric pair, a smooth systematic field built from
//! low-order DCT modes. Both partners `p` and `p + P/2` receive that field
//! plus their own small smooth jitter field. Each pair also carries sparse
//! outlier ROs common to both partners, at a pair-specific rate; they are
//! what gives each pair its own VP error level. Every RO then adds i.i.d.
//! random variation around the base frequency. Aged devices lose a fixed share of
//! the base frequency inside a stress rectangle on a subset of paths, which
//! breaks the partner symmetry.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dct::{low_order_indices, Dct2d};
use crate::error::{Error, Result};
use crate::fingerprint::{
    validate, Dataset, DatasetMeta, DeviceFingerprint, Label, PathFingerprint, RoGrid,
};
use crate::rng::{stream, Role};

/// Half-open rectangle `[row_start, row_end) x [col_start, col_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl Region {
    pub fn central_third(rows: usize, cols: usize) -> Self {
        Region {
            row_start: rows / 3,
            row_end: rows - rows / 3,
            col_start: cols / 3,
            col_end: cols - cols / 3,
        }
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_start..self.row_end).contains(&row) && (self.col_start..self.col_end).contains(&col)
    }

    pub fn n_cells(&self) -> usize {
        self.row_end.saturating_sub(self.row_start) * self.col_end.saturating_sub(self.col_start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgingMode {
    /// The upper partner of every pair takes the full drop.
    #[default]
    OnePartner,
    /// Lower partner takes 30% of the drop, upper partner 70%.
    BothUnequal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub rows: usize,
    pub cols: usize,
    pub paths: usize,
    pub base_freq_mhz: f64,
    pub systematic_sigma_mhz: f64,
    pub random_sigma_mhz: f64,
    pub pair_jitter_sigma_mhz: f64,
    /// Spread of the outlier offsets shared by both partners of a pair.
    pub shared_outlier_sigma_mhz: f64,
    /// Upper bound of the per-pair outlier rate. Each pair draws its rate
    /// uniformly from `[0, shared_outlier_rate]`; each RO is then an outlier
    /// with that probability.
    pub shared_outlier_rate: f64,
    pub aging_drop_pct: f64,
    /// Defaults to the central third of the grid.
    pub stress_region: Option<Region>,
    pub aging_mode: AgingMode,
    /// Number of low-order DCT modes in each systematic field, capped at the
    /// grid's `rows * cols - 1` non-DC modes.
    pub systematic_modes: usize,
    pub n_fresh: usize,
    pub n_aged: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rows: 33,
            cols: 120,
            paths: 32,
            base_freq_mhz: 400.0,
            systematic_sigma_mhz: 4.0,
            random_sigma_mhz: 1.0,
            pair_jitter_sigma_mhz: 0.3,
            shared_outlier_sigma_mhz: 30.0,
            shared_outlier_rate: 0.01,
            aging_drop_pct: 0.75,
            stress_region: None,
            aging_mode: AgingMode::OnePartner,
            systematic_modes: DEFAULT_SYSTEMATIC_MODES,
            n_fresh: 10,
            n_aged: 3,
            seed: 1,
        }
    }
}

pub const DEFAULT_SYSTEMATIC_MODES: usize = 30;

impl SimConfig {
    pub fn region(&self) -> Region {
        self.stress_region
            .unwrap_or_else(|| Region::central_third(self.rows, self.cols))
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 {
            return Err(Error::config("rows", "must be >= 2"));
        }
        if self.cols < 2 {
            return Err(Error::config("cols", "must be >= 2"));
        }
        if self.paths == 0 || self.paths % 2 != 0 {
            return Err(Error::config("paths", "must be even and positive"));
        }
        if !(self.base_freq_mhz.is_finite() && self.base_freq_mhz > 0.0) {
            return Err(Error::config("base_freq_mhz", "must be finite and > 0"));
        }
        for (name, v) in [
            ("systematic_sigma_mhz", self.systematic_sigma_mhz),
            ("random_sigma_mhz", self.random_sigma_mhz),
            ("pair_jitter_sigma_mhz", self.pair_jitter_sigma_mhz),
            ("shared_outlier_sigma_mhz", self.shared_outlier_sigma_mhz),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, "must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.shared_outlier_rate) {
            return Err(Error::config("shared_outlier_rate", "must lie in [0, 1]"));
        }
        if !(self.aging_drop_pct >= 0.0 && self.aging_drop_pct < 100.0) {
            return Err(Error::config("aging_drop_pct", "must lie in [0, 100)"));
        }
        let r = self.region();
        if r.row_start >= r.row_end
            || r.col_start >= r.col_end
            || r.row_end > self.rows
            || r.col_end > self.cols
        {
            return Err(Error::config(
                "stress_region",
                format!("{r:?} is empty or outside the {}x{} grid", self.rows, self.cols),
            ));
        }
        if self.systematic_modes == 0 {
            return Err(Error::config("systematic_modes", "must be >= 1"));
        }
        Ok(())
    }
}

/// A zero-mean field spanned by the `modes` lowest-order non-DC DCT basis
/// functions (all of them on grids with fewer) with standard-normal coefficients, rescaled so its population
/// standard deviation is exactly `sigma`.
pub fn gen_systematic_field<R: Rng + ?Sized>(
    rng: &mut R,
    dct: &Dct2d,
    modes: usize,
    sigma: f64,
) -> Vec<f64> {
    let (rows, cols) = (dct.rows(), dct.cols());
    let mut coeffs = vec![0.0; rows * cols];
    for (u, v) in low_order_indices(rows, cols, modes + 1).into_iter().skip(1) {
        coeffs[u * cols + v] = StandardNormal.sample(rng);
    }
    if sigma == 0.0 {
        return vec![0.0; rows * cols];
    }
    // Orthonormal basis and zero DC: the field's sum of squares equals the
    // coefficient energy, so scale in the coefficient domain.
    let energy: f64 = coeffs.iter().map(|c| c * c).sum();
    if energy == 0.0 {
        return vec![0.0; rows * cols];
    }
    let scale = sigma * ((rows * cols) as f64 / energy).sqrt();
    coeffs.iter_mut().for_each(|c| *c *= scale);
    dct.inverse(&coeffs)
}

/// Stream index for a device. Fresh and aged devices live in disjoint index
/// ranges so that changing one count leaves the other population untouched.
fn device_stream(label: Label, ordinal: usize) -> u64 {
    match label {
        Label::Fresh => ordinal as u64,
        Label::Aged => (1u64 << 32) | ordinal as u64,
    }
}

fn simulate_device(config: &SimConfig, dct: &Dct2d, label: Label, ordinal: usize, id: String) -> DeviceFingerprint {
    let (rows, cols, p_total) = (config.rows, config.cols, config.paths);
    let half = p_total / 2;
    let dev = device_stream(label, ordinal);
    let region = config.region();
    let drop = config.aging_drop_pct * config.base_freq_mhz / 100.0;
    let noise = Normal::new(0.0, config.random_sigma_mhz).expect("sigma validated");

    let shared: Vec<Vec<f64>> = (0..half)
        .map(|k| {
            let mut rng = stream(config.seed, dev, k as u64, Role::SystematicField);
            let mut field =
                gen_systematic_field(&mut rng, dct, config.systematic_modes, config.systematic_sigma_mhz);
            let mut outlier_rng = stream(config.seed, dev, k as u64, Role::SharedOutlier);
            let rate = config.shared_outlier_rate * outlier_rng.random::<f64>();
            for f in &mut field {
                let hit = outlier_rng.random::<f64>() < rate;
                let z: f64 = outlier_rng.sample(StandardNormal);
                if hit {
                    *f += config.shared_outlier_sigma_mhz * z;
                }
            }
            field
        })
        .collect();

    let paths = (0..p_total)
        .map(|p| {
            let mut jitter_rng = stream(config.seed, dev, p as u64, Role::PairJitter);
            let jitter = gen_systematic_field(
                &mut jitter_rng,
                dct,
                config.systematic_modes,
                config.pair_jitter_sigma_mhz,
            );
            let mut noise_rng = stream(config.seed, dev, p as u64, Role::RandomVariation);
            let system = &shared[p % half];
            let path_drop = match (label, config.aging_mode) {
                (Label::Fresh, _) => 0.0,
                (Label::Aged, AgingMode::OnePartner) => {
                    if p >= half {
                        drop
                    } else {
                        0.0
                    }
                }
                (Label::Aged, AgingMode::BothUnequal) => {
                    if p >= half {
                        0.7 * drop
                    } else {
                        0.3 * drop
                    }
                }
            };
            let grid = RoGrid::from_fn(rows, cols, |r, c| {
                let k = r * cols + c;
                let mut f = config.base_freq_mhz + system[k] + jitter[k] + noise.sample(&mut noise_rng);
                if path_drop != 0.0 && region.contains(r, c) {
                    f -= path_drop;
                }
                f
            });
            PathFingerprint {
                path_index: p + 1,
                grid,
            }
        })
        .collect();

    DeviceFingerprint {
        device_id: id,
        paths,
        ground_truth: Some(label),
    }
}

/// Generates `n_fresh` fresh devices followed by `n_aged` aged ones.
pub fn simulate(config: &SimConfig) -> Result<Dataset> {
    config.validate()?;
    let dct = Dct2d::new(config.rows, config.cols);
    let plan: Vec<(Label, usize)> = (0..config.n_fresh)
        .map(|i| (Label::Fresh, i))
        .chain((0..config.n_aged).map(|i| (Label::Aged, i)))
        .collect();
    let devices: Vec<DeviceFingerprint> = plan
        .par_iter()
        .enumerate()
        .map(|(pos, &(label, ordinal))| {
            simulate_device(config, &dct, label, ordinal, format!("dev-{:02}", pos + 1))
        })
        .collect();
    let dataset = Dataset {
        meta: DatasetMeta {
            rows: config.rows,
            cols: config.cols,
            paths: config.paths,
            provenance: format!(
                "simulated: seed={} fresh={} aged={} aging_drop_pct={}",
                config.seed, config.n_fresh, config.n_aged, config.aging_drop_pct
            ),
        },
        devices,
    };
    let violations = validate(&dataset);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(dataset)
}
