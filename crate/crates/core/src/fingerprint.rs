//! Fingerprint and dataset types.
//!
//! A device carries one frequency grid per LUT path. Grids are row-major,
//! `rows` along the vertical CLB index and `cols` along the horizontal one;
//! "columns" in comparison counting always refers to the second dimension.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Fresh,
    Aged,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Fresh => f.write_str("fresh"),
            Label::Aged => f.write_str("aged"),
        }
    }
}

/// A rectangular grid of ring-oscillator frequencies in MHz.
#[derive(Debug, Clone, PartialEq)]
pub struct RoGrid {
    rows: usize,
    cols: usize,
    freqs: Vec<f64>,
}

impl RoGrid {
    /// Wraps a row-major buffer. Only the shape is checked here; value
    /// invariants are reported by [`validate`].
    pub fn new(rows: usize, cols: usize, freqs: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("grid must be non-empty, got {rows}x{cols}")));
        }
        if freqs.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "grid {rows}x{cols} needs {} values, got {}",
                rows * cols,
                freqs.len()
            )));
        }
        Ok(RoGrid { rows, cols, freqs })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut freqs = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                freqs.push(f(r, c));
            }
        }
        RoGrid { rows, cols, freqs }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        RoGrid {
            rows,
            cols,
            freqs: vec![value; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != n_cols) {
            return Err(Error::Dimension(format!(
                "row {r} has {} values, expected {n_cols}",
                row.len()
            )));
        }
        RoGrid::new(n_rows, n_cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.freqs[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.freqs[row * self.cols + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.freqs
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.freqs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.freqs
    }

    /// The `R` samples of column `col`, top to bottom.
    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.freqs.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn mean(&self) -> f64 {
        self.freqs.iter().sum::<f64>() / self.freqs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathFingerprint {
    /// 1-based LUT path index.
    pub path_index: usize,
    pub grid: RoGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceFingerprint {
    pub device_id: String,
    pub paths: Vec<PathFingerprint>,
    /// Simulator metadata. Detection code never reads it.
    pub ground_truth: Option<Label>,
}

impl DeviceFingerprint {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    /// Grid of the 1-based `path_index`.
    pub fn path(&self, path_index: usize) -> Option<&RoGrid> {
        self.paths
            .iter()
            .find(|p| p.path_index == path_index)
            .map(|p| &p.grid)
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.paths.first().map(|p| p.grid.dims())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub rows: usize,
    pub cols: usize,
    pub paths: usize,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub devices: Vec<DeviceFingerprint>,
}

/// One broken invariant, located as precisely as possible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub device_id: Option<String>,
    pub path_index: Option<usize>,
    pub cell: Option<(usize, usize)>,
    pub message: String,
}

impl Violation {
    fn dataset(message: impl Into<String>) -> Self {
        Violation {
            device_id: None,
            path_index: None,
            cell: None,
            message: message.into(),
        }
    }

    fn device(device_id: &str, message: impl Into<String>) -> Self {
        Violation {
            device_id: Some(device_id.to_string()),
            ..Violation::dataset(message)
        }
    }

    fn path(device_id: &str, path_index: usize, message: impl Into<String>) -> Self {
        Violation {
            path_index: Some(path_index),
            ..Violation::device(device_id, message)
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(id) = &self.device_id {
            write!(f, "device {id}")?;
            if let Some(p) = self.path_index {
                write!(f, " path {p}")?;
            }
            if let Some((r, c)) = self.cell {
                write!(f, " cell ({r},{c})")?;
            }
            f.write_str(": ")?;
        }
        f.write_str(&self.message)
    }
}

/// Every invariant violation in `dataset`; empty iff the dataset is valid.
pub fn validate(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let meta = &dataset.meta;
    if meta.rows < 2 {
        out.push(Violation::dataset(format!("rows must be >= 2, got {}", meta.rows)));
    }
    if meta.cols < 2 {
        out.push(Violation::dataset(format!("cols must be >= 2, got {}", meta.cols)));
    }
    if meta.paths == 0 || meta.paths % 2 != 0 {
        out.push(Violation::dataset(format!(
            "P must be even and positive, meta declares {}",
            meta.paths
        )));
    }

    let mut seen = HashSet::new();
    for device in &dataset.devices {
        let id = device.device_id.as_str();
        if !seen.insert(id) {
            out.push(Violation::device(id, "duplicate device_id"));
        }
        validate_device(device, meta, &mut out);
    }
    out
}

fn validate_device(device: &DeviceFingerprint, meta: &DatasetMeta, out: &mut Vec<Violation>) {
    let id = device.device_id.as_str();
    let p = device.paths.len();
    if p % 2 != 0 {
        out.push(Violation::device(id, format!("P must be even, device has {p} paths")));
    }
    if p != meta.paths {
        out.push(Violation::device(
            id,
            format!("device has {p} paths, meta declares {}", meta.paths),
        ));
    }

    let mut indices = HashSet::new();
    for (pos, path) in device.paths.iter().enumerate() {
        let pi = path.path_index;
        if !indices.insert(pi) {
            out.push(Violation::path(id, pi, "duplicate path_index"));
        }
        if pi != pos + 1 {
            out.push(Violation::path(
                id,
                pi,
                format!("path_index at position {pos} must be {}", pos + 1),
            ));
        }
        let grid = &path.grid;
        if grid.rows() < 2 || grid.cols() < 2 {
            out.push(Violation::path(
                id,
                pi,
                format!("grid {}x{} is smaller than 2x2", grid.rows(), grid.cols()),
            ));
        }
        if grid.dims() != (meta.rows, meta.cols) {
            out.push(Violation::path(
                id,
                pi,
                format!(
                    "grid is {}x{}, dataset is {}x{}",
                    grid.rows(),
                    grid.cols(),
                    meta.rows,
                    meta.cols
                ),
            ));
        }
        for (k, &v) in grid.as_slice().iter().enumerate() {
            if !v.is_finite() || v <= 0.0 {
                out.push(Violation {
                    cell: Some((k / grid.cols(), k % grid.cols())),
                    ..Violation::path(id, pi, format!("frequency {v} is not finite and positive"))
                });
            }
        }
    }
}

// On-disk schema. Kept separate from the domain types so that shape errors
// surface as schema errors and value errors as validation errors.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    meta: DatasetMeta,
    devices: Vec<DeviceFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceFile {
    id: String,
    ground_truth: Option<Label>,
    paths: Vec<PathFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathFile {
    path_index: usize,
    freqs_mhz: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn to_json(&self) -> Result<String> {
        let file = DatasetFile {
            meta: self.meta.clone(),
            devices: self
                .devices
                .iter()
                .map(|d| DeviceFile {
                    id: d.device_id.clone(),
                    ground_truth: d.ground_truth,
                    paths: d
                        .paths
                        .iter()
                        .map(|p| PathFile {
                            path_index: p.path_index,
                            freqs_mhz: p.grid.to_rows(),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&file).map_err(|e| Error::Numeric(format!("serializing dataset: {e}")))
    }

    /// Parses and validates a dataset document.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text).map_err(|e| Error::Schema {
            location: format!("line {} column {}", e.line(), e.column()),
            reason: e.to_string(),
        })?;
        let mut devices = Vec::with_capacity(file.devices.len());
        for (di, dev) in file.devices.into_iter().enumerate() {
            let mut paths = Vec::with_capacity(dev.paths.len());
            for (pi, path) in dev.paths.into_iter().enumerate() {
                let grid = RoGrid::from_rows(&path.freqs_mhz).map_err(|e| Error::Schema {
                    location: format!("devices[{di}].paths[{pi}].freqs_mhz"),
                    reason: e.to_string(),
                })?;
                paths.push(PathFingerprint {
                    path_index: path.path_index,
                    grid,
                });
            }
            devices.push(DeviceFingerprint {
                device_id: dev.id,
                paths,
                ground_truth: dev.ground_truth,
            });
        }
        let dataset = Dataset {
            meta: file.meta,
            devices,
        };
        let violations = validate(&dataset);
        if violations.is_empty() {
            Ok(dataset)
        } else {
            Err(Error::Validation(violations))
        }
    }

    /// One row per RO: `device_id,path_index,row,col,freq_mhz`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("device_id,path_index,row,col,freq_mhz\n");
        for d in &self.devices {
            for p in &d.paths {
                for r in 0..p.grid.rows() {
                    for c in 0..p.grid.cols() {
                        out.push_str(&format!(
                            "{},{},{},{},{}\n",
                            d.device_id,
                            p.path_index,
                            r,
                            c,
                            p.grid.get(r, c)
                        ));
                    }
                }
            }
        }
        out
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_json(&text)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = dataset.to_json()?;
    write_file(path, json.as_bytes())
}

/// Writes `bytes` to `path`, mapping failures to `Error::Io`.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
