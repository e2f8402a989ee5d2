use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use xfp::detector::{audit_comparisons, Scorer};
use xfp::error::{Error, Result};
use xfp::fingerprint::{load_dataset, save_dataset, write_file, Label};
use xfp::pairing::{structural_pairing, SymmetryPairing};
use xfp::pipeline::{
    build_report, column_scores_csv, estimate_dataset, pairing_from_profiles, parse_rmse_csv,
    parse_scores_csv, rmse_csv, rmse_profiles, roc_csv, run_experiment, score_dataset,
    score_vectors_from_rows, scores_csv, PipelineConfig,
};
use xfp::roc::roc_curve;
use xfp::simulator::simulate;

#[derive(Parser)]
#[command(name = "xfp", version, about = "Recycled-FPGA detection from RO path fingerprints")]
struct Cli {
    /// Pipeline config (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory for `run`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairMode {
    Rmse,
    Structural,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Also write one CSV row per RO.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Virtual-Probe RMSE per device and path.
    Estimate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive comparison pairs from an RMSE table.
    Pair {
        #[arg(long)]
        rmse: PathBuf,
        #[arg(long, value_enum, default_value = "rmse")]
        mode: PairMode,
        /// Restrict the RMSE consensus to these device ids (comma separated).
        #[arg(long, value_delimiter = ',')]
        devices: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-CP anomaly scores (or per-path adjacent-column scores with --baseline).
    Score {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, required_unless_present = "baseline")]
        pairing: Option<PathBuf>,
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        out: PathBuf,
        /// Also write the full per-column score matrix.
        #[arg(long)]
        columns: Option<PathBuf>,
    },
    /// Score, classify and report.
    Detect {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        pairing: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        emit_scores: Option<PathBuf>,
    },
    /// ROC curve from a scores table and the dataset's ground truth.
    Roc {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Comparison counts of the symmetric scheme against the adjacent-column baseline.
    Audit {
        #[arg(long, conflicts_with_all = ["rows", "cols", "paths"])]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 33)]
        rows: usize,
        #[arg(long, default_value_t = 120)]
        cols: usize,
        #[arg(long, default_value_t = 32)]
        paths: usize,
    },
    /// End-to-end experiment.
    Run {
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long)]
        paths: Option<usize>,
        /// Use this dataset instead of simulating.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    if let Some(dir) = &cli.out_dir {
        config.output.out_dir = dir.clone();
    }
    Ok(config)
}

fn override_dims(config: &mut PipelineConfig, rows: Option<usize>, cols: Option<usize>, paths: Option<usize>) {
    let sim = &mut config.simulator;
    if let Some(r) = rows {
        sim.rows = r;
    }
    if let Some(c) = cols {
        sim.cols = c;
    }
    if let Some(p) = paths {
        sim.paths = p;
    }
    // A stress region sized for other dimensions would not fit.
    if rows.is_some() || cols.is_some() {
        sim.stress_region = None;
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn execute(cli: &Cli) -> std::result::Result<(), (String, Error)> {
    let stage = |name: &str| {
        let name = name.to_string();
        move |e: Error| (name, e)
    };
    let mut config = load_config(cli).map_err(stage("config"))?;

    match &cli.command {
        Command::Simulate {
            out,
            csv,
            rows,
            cols,
            paths,
        } => {
            override_dims(&mut config, *rows, *cols, *paths);
            let ds = simulate(&config.simulator).map_err(stage("simulate"))?;
            save_dataset(&ds, out).map_err(stage("simulate"))?;
            if let Some(csv) = csv {
                write_text(csv, &ds.to_csv()).map_err(stage("simulate"))?;
            }
            println!("wrote {} devices to {}", ds.devices.len(), out.display());
        }
        Command::Estimate { dataset, fraction, out } => {
            let ds = load_dataset(dataset).map_err(stage("load"))?;
            if let Some(f) = fraction {
                config.vp.fraction = *f;
            }
            config.vp.validate().map_err(stage("config"))?;
            let rows = estimate_dataset(&ds, &config.vp, config.seed).map_err(stage("estimate"))?;
            write_text(out, &rmse_csv(&rows).map_err(stage("estimate"))?).map_err(stage("estimate"))?;
            println!("wrote {} RMSE rows to {}", rows.len(), out.display());
        }
        Command::Pair {
            rmse,
            mode,
            devices,
            out,
        } => {
            let rows = parse_rmse_csv(&read_text(rmse).map_err(stage("load"))?).map_err(stage("load"))?;
            let mut profiles = rmse_profiles(&rows).map_err(stage("pair"))?;
            if let Some(keep) = devices {
                profiles.retain(|(id, _)| keep.contains(id));
            }
            let pairing = match mode {
                PairMode::Rmse => pairing_from_profiles(&profiles),
                PairMode::Structural => {
                    let p = profiles.first().map_or(0, |(_, r)| r.len());
                    structural_pairing(p)
                }
            }
            .map_err(stage("pair"))?;
            pairing.save(out).map_err(stage("pair"))?;
            println!("wrote {} pairs to {}", pairing.pairs.len(), out.display());
        }
        Command::Score {
            dataset,
            pairing,
            baseline,
            out,
            columns,
        } => {
            let ds = load_dataset(dataset).map_err(stage("load"))?;
            let mut scorer = Scorer::new(config.ulsif.clone());
            scorer.retain_columns = columns.is_some();
            let scores = if *baseline {
                ds.devices
                    .iter()
                    .map(|d| scorer.score_device_baseline(d))
                    .collect::<Result<Vec<_>>>()
            } else {
                let path = pairing.as_ref().expect("clap enforces --pairing");
                let pairing = SymmetryPairing::load(path).map_err(stage("load"))?;
                score_dataset(&ds, &pairing, &scorer)
            }
            .map_err(stage("score"))?;
            write_text(out, &scores_csv(&scores).map_err(stage("score"))?).map_err(stage("score"))?;
            if let Some(path) = columns {
                write_text(path, &column_scores_csv(&scores).map_err(stage("score"))?)
                    .map_err(stage("score"))?;
            }
            println!(
                "{} comparisons ({}), wrote {}",
                scorer.proposed_count() + scorer.baseline_count(),
                if *baseline { "baseline" } else { "symmetric" },
                out.display()
            );
        }
        Command::Detect {
            dataset,
            pairing,
            out,
            emit_scores,
        } => {
            let ds = load_dataset(dataset).map_err(stage("load"))?;
            let pairing = SymmetryPairing::load(pairing).map_err(stage("load"))?;
            let scorer = Scorer::new(config.ulsif.clone());
            let scores = score_dataset(&ds, &pairing, &scorer).map_err(stage("score"))?;
            if let Some(path) = emit_scores {
                write_text(path, &scores_csv(&scores).map_err(stage("score"))?).map_err(stage("score"))?;
            }
            let (report, _) =
                build_report(&ds, &scores, scorer.proposed_count(), config.seed).map_err(stage("detect"))?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write_text(out, &json).map_err(stage("report"))?;
            let recycled = report
                .labels
                .values()
                .filter(|&&l| l == xfp::Prediction::Recycled)
                .count();
            println!("{recycled} of {} devices labeled recycled; report in {}", report.labels.len(), out.display());
        }
        Command::Roc { scores, dataset, out } => {
            let ds = load_dataset(dataset).map_err(stage("load"))?;
            let rows = parse_scores_csv(&read_text(scores).map_err(stage("load"))?).map_err(stage("load"))?;
            let vectors = score_vectors_from_rows(&rows).map_err(stage("load"))?;
            let mut max_scores = Vec::new();
            let mut positive = Vec::new();
            for v in &vectors {
                let device = ds
                    .devices
                    .iter()
                    .find(|d| d.device_id == v.device_id)
                    .ok_or_else(|| Error::data(v.device_id.clone(), "not in dataset"))
                    .map_err(stage("roc"))?;
                let truth = device
                    .ground_truth
                    .ok_or_else(|| Error::data(v.device_id.clone(), "has no ground truth"))
                    .map_err(stage("roc"))?;
                max_scores.push(v.max_score());
                positive.push(truth == Label::Aged);
            }
            let roc = roc_curve(&max_scores, &positive).map_err(stage("roc"))?;
            write_text(out, &roc_csv(&roc)).map_err(stage("roc"))?;
            println!("AUC {:.6}; curve in {}", roc.auc, out.display());
        }
        Command::Audit {
            dataset,
            rows,
            cols,
            paths,
        } => {
            let (r, c, p) = match dataset {
                Some(path) => {
                    let ds = load_dataset(path).map_err(stage("load"))?;
                    (ds.meta.rows, ds.meta.cols, ds.meta.paths)
                }
                None => (*rows, *cols, *paths),
            };
            let audit = audit_comparisons(r, c, p).map_err(stage("audit"))?;
            println!("dims: R={r} C={c} P={p}");
            println!("proposed (C*P/2):   {}", audit.proposed);
            println!("baseline ((C-1)*P): {}", audit.baseline);
            println!("ratio:              {:.4}", audit.ratio);
            println!("savings:            {:.2}%", (1.0 - audit.ratio) * 100.0);
        }
        Command::Run {
            rows,
            cols,
            paths,
            dataset,
        } => {
            override_dims(&mut config, *rows, *cols, *paths);
            if let Some(d) = dataset {
                config.dataset = Some(d.clone());
            }
            let outcome = run_experiment(&config).map_err(|e| (e.stage.to_string(), e.source))?;
            let r = &outcome.report;
            println!(
                "{} devices, {} CPs, {} comparisons per device (baseline {})",
                r.labels.len(),
                outcome.pairing.pairs.len(),
                r.comparisons_proposed,
                r.comparisons_baseline
            );
            if let (Some(acc), Some(auc)) = (r.accuracy, r.auc) {
                println!("accuracy {:.2}%  AUC {:.4}", acc * 100.0, auc);
            }
            println!("artifacts in {}", outcome.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: stage `config`: cannot size worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((stage, e)) => {
            eprintln!("error: stage `{stage}`: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
