//! Unsupervised recycled-FPGA detection from ring-oscillator path
//! fingerprints.
//!
//! The pipeline reconstructs each path's frequency grid from a sparse sample
//! (Virtual Probe), pairs paths whose reconstruction errors match, compares
//! each pair column by column with uLSIF density-ratio anomaly scores, and
//! clusters the per-pair maxima with k-means++.

pub mod dct;
pub mod detector;
pub mod error;
pub mod fingerprint;
pub mod kmeans;
pub mod linalg;
pub mod pairing;
pub mod pipeline;
pub mod rng;
pub mod roc;
pub mod simulator;
pub mod ulsif;
pub mod vp;

pub use detector::{
    audit_comparisons, classify, ComparisonAudit, CpScoreVector, DetectionReport, Prediction, Scorer,
};
pub use error::{Error, Result};
pub use fingerprint::{
    load_dataset, save_dataset, validate, Dataset, DatasetMeta, DeviceFingerprint, Label, PathFingerprint,
    RoGrid, Violation,
};
pub use pairing::{consensus_pairing, pair_by_rmse, structural_pairing, PairingSource, SymmetryPairing};
pub use pipeline::{run_experiment, PipelineConfig};
pub use roc::{roc_curve, RocCurve};
pub use simulator::{gen_systematic_field, simulate, SimConfig};
pub use ulsif::{anomaly_score, fit, select_model, AnomalyScore, UlsifConfig, UlsifModel};
pub use vp::{make_mask, rmse_profile, vp_reconstruct, SampleMask, VpConfig, VpEstimate};
