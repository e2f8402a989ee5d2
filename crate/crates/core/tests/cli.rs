use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn xfp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xfp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn tiny_end_to_end_run_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = xfp(
        dir.path(),
        &["run", "--paths", "2", "--rows", "4", "--cols", "4", "--seed", "3", "--out-dir", "out"],
    );
    ok(&out);
    assert!(start.elapsed() < Duration::from_secs(5), "took {:?}", start.elapsed());
    for name in ["dataset.json", "rmse.csv", "pairing.json", "scores.csv", "report.json", "manifest.json"] {
        assert!(dir.path().join("out").join(name).is_file(), "missing {name}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["comparisons_proposed"], 4);
    assert_eq!(report["comparisons_baseline"], 6);
    assert_eq!(report["labels"].as_object().unwrap().len(), 13);
}

#[test]
fn staged_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = "[simulator]\nrows = 6\ncols = 5\npaths = 4\nn_fresh = 4\nn_aged = 2\naging_drop_pct = 3.0\n";
    std::fs::write(d.join("cfg.toml"), cfg).unwrap();
    let c = ["--config", "cfg.toml"];
    ok(&xfp(d, &[&c[..], &["simulate", "--out", "ds.json", "--csv", "ds.csv"]].concat()));
    ok(&xfp(d, &[&c[..], &["estimate", "--dataset", "ds.json", "--fraction", "0.5", "--out", "rmse.csv"]].concat()));
    ok(&xfp(d, &["pair", "--rmse", "rmse.csv", "--mode", "structural", "--out", "pairing.json"]));
    ok(&xfp(d, &["pair", "--rmse", "rmse.csv", "--out", "rmse_pairing.json", "--devices", "dev-01,dev-02"]));
    ok(&xfp(
        d,
        &[&c[..], &["detect", "--dataset", "ds.json", "--pairing", "pairing.json", "--out", "report.json", "--emit-scores", "scores.csv"]]
            .concat(),
    ));
    ok(&xfp(d, &["roc", "--scores", "scores.csv", "--dataset", "ds.json", "--out", "roc.csv"]));
    ok(&xfp(d, &["score", "--dataset", "ds.json", "--baseline", "--out", "base.csv"]));

    let rmse = std::fs::read_to_string(d.join("rmse.csv")).unwrap();
    assert!(rmse.starts_with("device_id,path_index,rmse_mhz,n_atoms"));
    assert_eq!(rmse.lines().count(), 1 + 6 * 4);
    let pairing: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("pairing.json")).unwrap()).unwrap();
    assert_eq!(pairing["source"], "structural");
    assert_eq!(pairing["pairs"], serde_json::json!([[1, 3], [2, 4]]));
    let scores = std::fs::read_to_string(d.join("scores.csv")).unwrap();
    assert!(scores.starts_with("device_id,cp_index,score"));
    assert_eq!(scores.lines().count(), 1 + 6 * 2);
    assert_eq!(std::fs::read_to_string(d.join("base.csv")).unwrap().lines().count(), 1 + 6 * 4);
    let roc = std::fs::read_to_string(d.join("roc.csv")).unwrap();
    assert!(roc.lines().count() >= 3);
}

#[test]
fn audit_prints_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = xfp(dir.path(), &["audit"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("1920"), "{text}");
    assert!(text.contains("3808"), "{text}");
    assert!(text.contains("0.5042"), "{text}");
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    std::fs::write(d.join("bad.toml"), "[simulator]\npaths = 3\n").unwrap();
    let out = xfp(d, &["--config", "bad.toml", "simulate", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("paths"), "{err}");

    let out = xfp(d, &["estimate", "--dataset", "missing.json", "--out", "r.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("load"));

    std::fs::write(d.join("broken.json"), "{\"meta\": 1}").unwrap();
    let out = xfp(d, &["estimate", "--dataset", "broken.json", "--out", "r.csv"]);
    assert_eq!(out.status.code(), Some(3));

    let out = xfp(d, &["audit", "--paths", "5"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(d.join("unknown.toml"), "[simulator]\nfoo = 1\n").unwrap();
    let out = xfp(d, &["--config", "unknown.toml", "audit"]);
    assert_eq!(out.status.code(), Some(2));
}
