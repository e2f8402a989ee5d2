//! End-to-end experiment: simulate (or load), estimate, pair, score,
//! classify, and report.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{
    audit_comparisons, classify, CpScoreVector, DetectionReport, DeviceSummary, Prediction, Scorer,
};
use crate::error::{Error, Result};
use crate::fingerprint::{load_dataset, save_dataset, write_file, Dataset, Label};
use crate::pairing::{consensus_pairing, pair_by_rmse, structural_pairing, SymmetryPairing};
use crate::rng::{self, Role};
use crate::roc::{roc_curve, RocCurve};
use crate::simulator::{simulate, SimConfig};
use crate::ulsif::UlsifConfig;
use crate::vp::{make_mask, profile_estimates, VpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Consensus of per-device RMSE pairings over devices labeled fresh.
    #[default]
    FreshReference,
    /// Consensus over every device under test, labels unused.
    Population,
    /// Fixed `(p, p + P/2)` pairs.
    Structural,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingConfig {
    pub mode: PairingMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub out_dir: PathBuf,
    /// Keep the full CP x column score matrices in memory and in scores.csv.
    pub retain_columns: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            out_dir: PathBuf::from("out"),
            retain_columns: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for sample masks and clustering.
    pub seed: u64,
    /// Load this dataset instead of simulating one.
    pub dataset: Option<PathBuf>,
    pub simulator: SimConfig,
    pub vp: VpConfig,
    pub ulsif: UlsifConfig,
    pub pairing: PairingConfig,
    pub output: OutputConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            dataset: None,
            simulator: SimConfig::default(),
            vp: VpConfig::default(),
            ulsif: UlsifConfig::default(),
            pairing: PairingConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads TOML, or JSON when the file extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    /// Sets both the simulation and the pipeline seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.simulator.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_none() {
            self.simulator.validate()?;
        }
        self.vp.validate()?;
        self.ulsif.validate()
    }
}

/// Mask seed of the device at position `device` in a dataset.
pub fn device_mask_seed(seed: u64, device: usize) -> u64 {
    use rand::Rng;
    rng::stream(seed, device as u64, rng::NONE, Role::SampleMask).random()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub device_id: String,
    pub path_index: usize,
    pub rmse_mhz: f64,
    pub n_atoms: usize,
}

/// VP RMSE of every path of every device, one mask per device.
pub fn estimate_dataset(dataset: &Dataset, vp: &VpConfig, seed: u64) -> Result<Vec<RmseRow>> {
    let per_device: Vec<Vec<RmseRow>> = dataset
        .devices
        .par_iter()
        .enumerate()
        .map(|(d, device)| {
            let (rows, cols) = device
                .dims()
                .ok_or_else(|| Error::data(device.device_id.clone(), "device has no paths"))?;
            let mask = make_mask(rows, cols, vp.fraction, device_mask_seed(seed, d))?;
            let estimates = profile_estimates(device, &mask, vp)?;
            Ok(device
                .paths
                .iter()
                .zip(estimates)
                .map(|(p, e)| RmseRow {
                    device_id: device.device_id.clone(),
                    path_index: p.path_index,
                    rmse_mhz: e.rmse_mhz,
                    n_atoms: e.n_atoms,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_device.into_iter().flatten().collect())
}

/// Groups RMSE rows into per-device profiles ordered by path index, keeping
/// the first-seen device order.
pub fn rmse_profiles(rows: &[RmseRow]) -> Result<Vec<(String, Vec<f64>)>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_device: BTreeMap<&str, Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        let entry = by_device.entry(&r.device_id).or_insert_with(|| {
            order.push(r.device_id.clone());
            Vec::new()
        });
        entry.push((r.path_index, r.rmse_mhz));
    }
    order
        .into_iter()
        .map(|id| {
            let mut v = by_device.remove(id.as_str()).unwrap_or_default();
            v.sort_by_key(|&(p, _)| p);
            if v.iter().enumerate().any(|(i, &(p, _))| p != i + 1) {
                return Err(Error::data(id.clone(), "path indices are not exactly 1..P"));
            }
            Ok((id, v.into_iter().map(|(_, r)| r).collect()))
        })
        .collect()
}

/// Consensus RMSE pairing over the given profiles.
pub fn pairing_from_profiles(profiles: &[(String, Vec<f64>)]) -> Result<SymmetryPairing> {
    let per_device = profiles
        .iter()
        .map(|(_, rmse)| pair_by_rmse(rmse))
        .collect::<Result<Vec<_>>>()?;
    consensus_pairing(&per_device)
}

pub fn derive_pairing(dataset: &Dataset, rmse: &[RmseRow], mode: PairingMode) -> Result<SymmetryPairing> {
    match mode {
        PairingMode::Structural => structural_pairing(dataset.meta.paths),
        PairingMode::Population => pairing_from_profiles(&rmse_profiles(rmse)?),
        PairingMode::FreshReference => {
            let fresh: Vec<&str> = dataset
                .devices
                .iter()
                .filter(|d| d.ground_truth == Some(Label::Fresh))
                .map(|d| d.device_id.as_str())
                .collect();
            if fresh.is_empty() {
                return Err(Error::config(
                    "pairing.mode",
                    "fresh_reference needs devices labeled fresh; use population or structural",
                ));
            }
            let profiles: Vec<(String, Vec<f64>)> = rmse_profiles(rmse)?
                .into_iter()
                .filter(|(id, _)| fresh.contains(&id.as_str()))
                .collect();
            pairing_from_profiles(&profiles)
        }
    }
}

/// Symmetric CP scores for every device, in dataset order.
pub fn score_dataset(dataset: &Dataset, pairing: &SymmetryPairing, scorer: &Scorer) -> Result<Vec<CpScoreVector>> {
    dataset
        .devices
        .par_iter()
        .map(|d| scorer.score_device_symmetric(d, pairing))
        .collect()
}

/// Classifies scored devices and assembles the report. Ground truth, when
/// every device carries it, feeds only the ROC and the accuracy figures.
pub fn build_report(
    dataset: &Dataset,
    scores: &[CpScoreVector],
    comparisons_performed: u64,
    seed: u64,
) -> Result<(DetectionReport, Option<RocCurve>)> {
    let audit = audit_comparisons(dataset.meta.rows, dataset.meta.cols, dataset.meta.paths)?;
    let classification = classify(scores, seed)?;
    let truth: Option<Vec<Label>> = dataset.devices.iter().map(|d| d.ground_truth).collect();

    let max_scores: Vec<f64> = scores.iter().map(CpScoreVector::max_score).collect();
    let roc = match &truth {
        Some(t) if t.contains(&Label::Aged) && t.contains(&Label::Fresh) => {
            let positive: Vec<bool> = t.iter().map(|&l| l == Label::Aged).collect();
            Some(roc_curve(&max_scores, &positive)?)
        }
        _ => None,
    };
    let (accuracy, aged_recall) = match &truth {
        Some(t) => {
            let correct = t
                .iter()
                .zip(&classification.labels)
                .filter(|(l, p)| matches!((l, p), (Label::Aged, Prediction::Recycled) | (Label::Fresh, Prediction::Fresh)))
                .count();
            let aged = t.iter().filter(|&&l| l == Label::Aged).count();
            let caught = t
                .iter()
                .zip(&classification.labels)
                .filter(|(l, p)| **l == Label::Aged && **p == Prediction::Recycled)
                .count();
            (
                Some(correct as f64 / t.len() as f64),
                (aged > 0).then(|| caught as f64 / aged as f64),
            )
        }
        None => (None, None),
    };

    let devices = dataset
        .devices
        .iter()
        .zip(&max_scores)
        .zip(&classification.labels)
        .map(|((d, &max_score), &label)| DeviceSummary {
            device_id: d.device_id.clone(),
            max_score,
            label,
            ground_truth: d.ground_truth,
        })
        .collect();
    let report = DetectionReport {
        labels: scores
            .iter()
            .zip(&classification.labels)
            .map(|(s, &l)| (s.device_id.clone(), l))
            .collect(),
        cluster_means: classification.clustering.centroids.clone(),
        recycled_cluster: classification.recycled_cluster,
        devices,
        roc: roc.as_ref().map(|r| r.points.clone()),
        auc: roc.as_ref().map(|r| r.auc),
        accuracy,
        aged_recall,
        comparisons_proposed: audit.proposed,
        comparisons_baseline: audit.baseline,
        comparison_ratio: audit.ratio,
        comparisons_performed,
    };
    Ok((report, roc))
}

pub fn rmse_csv(rows: &[RmseRow]) -> Result<String> {
    to_csv(rows)
}

pub fn parse_rmse_csv(text: &str) -> Result<Vec<RmseRow>> {
    from_csv(text, "rmse.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub device_id: String,
    pub cp_index: usize,
    pub score: f64,
}

#[derive(Serialize)]
struct ColumnScoreRow<'a> {
    device_id: &'a str,
    cp_index: usize,
    column: usize,
    score: f64,
}

pub fn scores_csv(scores: &[CpScoreVector]) -> Result<String> {
    let rows: Vec<ScoreRow> = scores
        .iter()
        .flat_map(|s| {
            s.scores.iter().enumerate().map(|(k, &score)| ScoreRow {
                device_id: s.device_id.clone(),
                cp_index: k + 1,
                score,
            })
        })
        .collect();
    to_csv(&rows)
}

/// Per-column scores, `device_id,cp_index,column,score`.
pub fn column_scores_csv(scores: &[CpScoreVector]) -> Result<String> {
    let rows: Vec<ColumnScoreRow> = scores
        .iter()
        .flat_map(|s| {
            s.per_column.iter().flat_map(move |m| {
                m.iter().enumerate().flat_map(move |(k, row)| {
                    row.iter().enumerate().map(move |(c, &score)| ColumnScoreRow {
                        device_id: &s.device_id,
                        cp_index: k + 1,
                        column: c,
                        score,
                    })
                })
            })
        })
        .collect();
    to_csv(&rows)
}

pub fn parse_scores_csv(text: &str) -> Result<Vec<ScoreRow>> {
    from_csv(text, "scores.csv")
}

/// Rebuilds per-device CP vectors from score rows, in first-seen order.
pub fn score_vectors_from_rows(rows: &[ScoreRow]) -> Result<Vec<CpScoreVector>> {
    let mut out: Vec<CpScoreVector> = Vec::new();
    for r in rows {
        let pos = match out.iter().position(|v| v.device_id == r.device_id) {
            Some(p) => p,
            None => {
                out.push(CpScoreVector {
                    device_id: r.device_id.clone(),
                    scores: Vec::new(),
                    per_column: None,
                });
                out.len() - 1
            }
        };
        let v = &mut out[pos];
        if r.cp_index != v.scores.len() + 1 {
            return Err(Error::data(
                r.device_id.clone(),
                format!("cp_index {} out of sequence", r.cp_index),
            ));
        }
        v.scores.push(r.score);
    }
    Ok(out)
}

pub fn roc_csv(roc: &RocCurve) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for (t, (fpr, tpr)) in roc.thresholds.iter().zip(&roc.points) {
        out.push_str(&format!("{t},{fpr},{tpr}\n"));
    }
    out
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Numeric(format!("writing csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numeric(format!("writing csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn from_csv<T: for<'de> Deserialize<'de>>(text: &str, name: &str) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Schema {
                location: format!("{name} record {}", i + 1),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Error from one pipeline stage.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone, Serialize)]
struct ManifestEntry {
    name: &'static str,
    path: String,
}

#[derive(Debug, Default, Serialize)]
struct Manifest {
    status: &'static str,
    failed_stage: Option<&'static str>,
    error: Option<String>,
    /// Artifacts written before the failure, if any; a failed run's
    /// artifacts are partial.
    partial: bool,
    artifacts: Vec<ManifestEntry>,
}

pub struct ExperimentOutcome {
    pub dataset: Dataset,
    pub rmse: Vec<RmseRow>,
    pub pairing: SymmetryPairing,
    pub scores: Vec<CpScoreVector>,
    pub report: DetectionReport,
    pub out_dir: PathBuf,
}

struct ArtifactWriter {
    dir: PathBuf,
    manifest: Manifest,
}

impl ArtifactWriter {
    fn write(&mut self, name: &'static str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        write_file(&path, bytes)?;
        self.record(name);
        Ok(())
    }

    fn record(&mut self, name: &'static str) {
        self.manifest.artifacts.push(ManifestEntry {
            name,
            path: self.dir.join(name).display().to_string(),
        });
    }

    fn finish(&mut self, failure: Option<&StageError>) {
        match failure {
            None => self.manifest.status = "ok",
            Some(e) => {
                self.manifest.status = "failed";
                self.manifest.failed_stage = Some(e.stage);
                self.manifest.error = Some(e.source.to_string());
                self.manifest.partial = !self.manifest.artifacts.is_empty();
            }
        }
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        // Best effort: the manifest must not mask the original failure.
        let _ = write_file(&self.dir.join("manifest.json"), json.as_bytes());
    }
}

/// Runs the whole pipeline and writes `dataset.json`, `rmse.csv`,
/// `pairing.json`, `scores.csv`, `roc.csv` (with ground truth),
/// `report.json` and `manifest.json` into `config.output.out_dir`.
pub fn run_experiment(config: &PipelineConfig) -> std::result::Result<ExperimentOutcome, StageError> {
    config.validate().stage("config")?;
    let dir = config.output.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e)).stage("setup")?;
    let mut writer = ArtifactWriter {
        dir: dir.clone(),
        manifest: Manifest::default(),
    };
    let result = run_stages(config, &mut writer);
    writer.finish(result.as_ref().err());
    result
}

fn run_stages(
    config: &PipelineConfig,
    writer: &mut ArtifactWriter,
) -> std::result::Result<ExperimentOutcome, StageError> {
    let dataset = match &config.dataset {
        Some(path) => load_dataset(path).stage("load")?,
        None => simulate(&config.simulator).stage("simulate")?,
    };
    save_dataset(&dataset, writer.dir.join("dataset.json")).stage("simulate")?;
    writer.record("dataset.json");

    let rmse = estimate_dataset(&dataset, &config.vp, config.seed).stage("estimate")?;
    writer
        .write("rmse.csv", rmse_csv(&rmse).stage("estimate")?.as_bytes())
        .stage("estimate")?;

    let pairing = derive_pairing(&dataset, &rmse, config.pairing.mode).stage("pair")?;
    writer.write("pairing.json", pairing.to_json().as_bytes()).stage("pair")?;

    let mut scorer = Scorer::new(config.ulsif.clone());
    scorer.retain_columns = config.output.retain_columns;
    let scores = score_dataset(&dataset, &pairing, &scorer).stage("score")?;
    let expected = audit_comparisons(dataset.meta.rows, dataset.meta.cols, dataset.meta.paths)
        .stage("score")?
        .proposed
        * dataset.devices.len() as u64;
    if scorer.proposed_count() != expected {
        return Err(Error::Numeric(format!(
            "performed {} comparisons, expected {expected}",
            scorer.proposed_count()
        )))
        .stage("score");
    }
    writer
        .write("scores.csv", scores_csv(&scores).stage("score")?.as_bytes())
        .stage("score")?;
    if config.output.retain_columns {
        writer
            .write("column_scores.csv", column_scores_csv(&scores).stage("score")?.as_bytes())
            .stage("score")?;
    }

    let (report, roc) = build_report(&dataset, &scores, scorer.proposed_count(), config.seed).stage("detect")?;
    if let Some(roc) = &roc {
        writer.write("roc.csv", roc_csv(roc).as_bytes()).stage("roc")?;
    }
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Numeric(e.to_string()))
        .stage("report")?;
    writer.write("report.json", json.as_bytes()).stage("report")?;

    Ok(ExperimentOutcome {
        dataset,
        rmse,
        pairing,
        scores,
        report,
        out_dir: writer.dir.clone(),
    })
}
