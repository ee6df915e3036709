use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workdir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn fcs(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcs"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .output()
        .unwrap()
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_owned).collect()
}

fn summary(path: &Path) -> Vec<(String, String, f64)> {
    data_lines(path)
        .iter()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_owned(), f[1].to_owned(), f[2].parse().unwrap())
        })
        .collect()
}

fn metric(rows: &[(String, String, f64)], name: &str, band: &str) -> f64 {
    rows.iter().find(|r| r.0 == name && r.1 == band).unwrap_or_else(|| panic!("no {name} [{band}]")).2
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn simulate_with_minimal_config() {
    let dir = workdir("simulate");
    let cfg = write_config(&dir, r#"{"scenario": {"rng_seed": 1, "baseline_m": 2.0, "forward_span_m": 2.0, "keyframe_step_m": 0.1}}"#);
    let out = fcs(&["simulate"], &cfg, &dir.join("out"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["truth.csv", "imu.csv", "uwb.csv", "config_resolved.json"] {
        assert!(dir.join("out").join(name).exists(), "{name} missing");
    }
    let truth = fs::read_to_string(dir.join("out/truth.csv")).unwrap();
    assert!(truth.starts_with("# config_hash: "));
}

#[test]
fn missing_field_is_a_config_error() {
    let dir = workdir("missing");
    let cfg = write_config(&dir, r#"{"scenario": {"baseline_m": 2.0, "forward_span_m": 2.0, "keyframe_step_m": 0.1}}"#);
    let out = fcs(&["pipeline"], &cfg, &dir.join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rng_seed"));
    assert!(!dir.join("out/estimates.csv").exists());
}

#[test]
fn invalid_values_and_stages_are_config_errors() {
    let dir = workdir("invalid");
    let cfg = write_config(&dir, r#"{"scenario": {"rng_seed": 1, "baseline_m": -2.0, "forward_span_m": 2.0, "keyframe_step_m": 0.1}}"#);
    assert_eq!(fcs(&["pipeline"], &cfg, &dir.join("out")).status.code(), Some(2));
    let out = fcs(&["analyze", "--stage", "everything"], &repo_config("default.json"), &dir.join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("baseline_search"));
    assert!(!dir.join("out").exists());
}

#[test]
fn mapping_failure_is_numerical_and_keeps_partial_outputs() {
    let dir = workdir("numerical");
    let cfg = write_config(
        &dir,
        r#"{"scenario": {"rng_seed": 1, "baseline_m": 3.0, "forward_span_m": 0.2, "keyframe_step_m": 0.1},
            "pipeline": {"mapping_window": 50}}"#,
    );
    let out = fcs(&["pipeline", "--stage", "mapping"], &cfg, &dir.join("out"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("out/estimates.csv").exists());
}

#[test]
fn same_seed_same_hash_and_bytes() {
    let dir = workdir("determinism");
    let run = |name: &str| {
        let out = fcs(&["pipeline", "--stage", "relpose"], &repo_config("default.json"), &dir.join(name));
        assert!(out.status.success());
        fs::read(dir.join(name).join("estimates.csv")).unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a, b);
    let other = fcs(&["pipeline", "--stage", "relpose", "--seed-override", "5"], &repo_config("default.json"), &dir.join("c"));
    assert!(other.status.success());
    let c = fs::read(dir.join("c/estimates.csv")).unwrap();
    let first = |bytes: &[u8]| String::from_utf8_lossy(bytes).lines().next().unwrap().to_owned();
    assert_ne!(first(&a), first(&c), "seed override must change the config hash");
}

#[test]
fn noiseless_pipeline_is_exact() {
    let dir = workdir("noiseless");
    let out = fcs(&["pipeline", "--stage", "mapping"], &repo_config("noiseless.json"), &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = summary(&dir.join("summary.csv"));
    assert!(metric(&rows, "position_mae_m", "all") < 1e-6);
    assert!(metric(&rows, "covisible_landmark_error_m", "all") < 1e-6);
}

#[test]
fn default_pipeline_reports_every_band() {
    let dir = workdir("default");
    let out = fcs(&["pipeline", "--stage", "mapping"], &repo_config("default.json"), &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = summary(&dir.join("summary.csv"));
    for band in ["0-10", "10-30", "30-50", "50-70"] {
        assert!(rows.iter().any(|r| r.0 == "ucd_exp_m" && r.1 == band), "band {band} missing");
    }
    assert!(metric(&rows, "position_mae_m", "all") < 0.05);
    assert!(metric(&rows, "inheritance_violations", "all") == 0.0);
    for name in ["landmarks.ply", "dense.ply", "depth_metric.fcsd", "tracks.csv"] {
        assert!(dir.join(name).exists(), "{name} missing");
    }
    let ply = fs::read_to_string(dir.join("landmarks.ply")).unwrap();
    assert!(ply.starts_with("ply\nformat ascii 1.0\n"));
}

#[test]
fn analysis_stage_skips_estimation() {
    let dir = workdir("analysis_stage");
    let out = fcs(&["pipeline", "--stage", "analysis"], &repo_config("default.json"), &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.join("estimates.csv").exists());
    assert!(dir.join("analysis/best_baseline.csv").exists());
}

#[test]
fn analyze_writes_study_tables() {
    let dir = workdir("analyze");
    let out = fcs(&["analyze"], &repo_config("default.json"), &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let matrix = data_lines(&dir.join("analysis/condition_costereo.csv"));
    assert_eq!(matrix[0].split(',').count(), 6);
    assert_eq!(matrix.len() - 1, 91);

    let sens = data_lines(&dir.join("analysis/sensitivity.csv"));
    let header: Vec<&str> = sens[0].split(',').collect();
    assert_eq!(&header[3..], &["t_x", "t_y", "t_z", "R_x", "R_y", "R_z"]);

    let best = data_lines(&dir.join("analysis/best_baseline.csv"));
    assert_eq!(best.len() - 1, 7);

    let only = fcs(&["analyze", "--stage", "sensitivity"], &repo_config("default.json"), &dir.join("only"));
    assert!(only.status.success());
    assert!(dir.join("only/analysis/sensitivity.csv").exists());
    assert!(!dir.join("only/analysis/best_baseline.csv").exists());
}
