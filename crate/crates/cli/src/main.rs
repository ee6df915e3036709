//! `fcs`: batch entry point for simulation, the full estimation and mapping pipeline,
//! and the numerical studies.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure, 1 I/O failure.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};
use thiserror::Error;

use fcs_core::analysis::{condition_sweep, optimal_baseline_search, summarize_sensitivity, AnalysisError};
use fcs_core::io::{self as fio, CloudPoint};
use fcs_core::pipeline::{
    run_cross_association, run_mapping, run_relpose, summary_rows, MappingOutput, PipelineError, RunConfig,
};
use fcs_core::seed::derive_seed;
use fcs_core::sim::{gen_parallel_flight, SimError};
use fcs_core::triangulate::{sensitivity_gradient, LandmarkSource, SENSITIVITY_LABELS};

#[derive(Parser, Debug)]
#[command(name = "fcs", version, about = "Collaborative stereo simulation, estimation and mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Pipeline: all | relpose | mapping | analysis. Analyze: all | condition | sensitivity | baseline_search.
    #[arg(long, global = true)]
    stage: Option<String>,
    /// Replaces the scenario's root seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    Simulate,
    Pipeline,
    Analyze,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum PipelineStage {
    All,
    Relpose,
    Mapping,
    Analysis,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Study {
    All,
    Condition,
    Sensitivity,
    #[value(name = "baseline_search", alias = "baseline-search")]
    BaselineSearch,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Io(_) => 1,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Sim(s) => s.into(),
            other => Self::Numerical(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        Self::Config(e.to_string())
    }
}

fn parse_stage<T: ValueEnum>(stage: Option<&str>, default: T) -> Result<T, CliError> {
    match stage {
        None => Ok(default),
        Some(s) => T::from_str(s, true).map_err(|_| {
            let names: Vec<String> =
                T::value_variants().iter().filter_map(|v| v.to_possible_value()).map(|p| p.get_name().to_owned()).collect();
            CliError::Config(format!("stage: unknown value `{s}`, expected one of {}", names.join(", ")))
        }),
    }
}

fn load_config(path: Option<&Path>, seed_override: Option<u64>) -> Result<RunConfig, CliError> {
    let path = path.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        if at == "." {
            CliError::Config(e.inner().to_string())
        } else {
            CliError::Config(format!("{at}: {}", e.inner()))
        }
    })?;
    if let Some(seed) = seed_override {
        cfg.scenario.rng_seed = seed;
    }
    cfg.analysis.baseline_search.seed = derive_seed(cfg.scenario.rng_seed, "analysis/baseline_search");
    cfg.scenario.validate()?;
    cfg.pipeline.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn config_hash(cfg: &RunConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

struct Outputs {
    dir: PathBuf,
    hash: String,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path, hash: String) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_owned(), hash, written: Vec::new() })
    }

    fn write<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>, &str) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w, &self.hash)?;
        w.flush()?;
        self.written.push(path);
        Ok(())
    }

    fn echo_config(&mut self, cfg: &RunConfig) -> Result<(), CliError> {
        let doc = serde_json::json!({ "config_hash": self.hash, "config": cfg });
        self.write("config_resolved.json", |w, _| {
            serde_json::to_writer_pretty(&mut *w, &doc).map_err(std::io::Error::other)?;
            writeln!(w)
        })
    }
}

fn cmd_simulate(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let stream = gen_parallel_flight(&cfg.scenario)?;
    for (name, bytes) in fio::stream_csvs(&stream, &out.hash)? {
        out.write(name, |w, _| w.write_all(&bytes))?;
    }
    Ok(())
}

fn write_summary(out: &mut Outputs, rows: &[(String, String, f64)]) -> Result<(), CliError> {
    out.write("summary.csv", |w, hash| {
        fio::write_hash_line(w, hash)?;
        writeln!(w, "metric,band,value")?;
        for (m, b, v) in rows {
            writeln!(w, "{m},{b},{v}")?;
        }
        Ok(())
    })
}

fn write_mapping(out: &mut Outputs, m: &MappingOutput) -> Result<(), CliError> {
    let sparse: Vec<CloudPoint> = m
        .landmarks
        .iter()
        .map(|l| CloudPoint { position: l.world, source: l.landmark.source, condition: l.landmark.condition_number })
        .collect();
    out.write("landmarks.csv", |w, h| fio::write_landmarks_csv(w, h, &sparse))?;
    out.write("landmarks.ply", |w, h| fio::write_ply(w, h, &sparse))?;
    let dense: Vec<CloudPoint> = m
        .dense_cloud
        .iter()
        .map(|p| CloudPoint { position: *p, source: LandmarkSource::Covisible, condition: 0.0 })
        .collect();
    out.write("dense.ply", |w, h| fio::write_ply(w, h, &dense))?;
    let f = m.fits.exp;
    let fit_meta = vec![
        ("model", "exponential".to_owned()),
        ("a", f.a.to_string()),
        ("b", f.b.to_string()),
        ("c", f.c.to_string()),
        ("offset", f.offset.to_string()),
        ("fit_rms_m", f.rms.to_string()),
        ("samples", f.samples.to_string()),
        ("anchor_frame", m.anchor_frame.to_string()),
    ];
    for (name, img, meta) in [
        ("depth_mono", &m.mono, vec![("content", "monocular".to_owned())]),
        ("depth_metric", &m.metric, [vec![("content", "metric_m".to_owned())], fit_meta.clone()].concat()),
        ("depth_truth", &m.truth_depth, vec![("content", "truth_m".to_owned())]),
    ] {
        out.write(&format!("{name}.fcsd"), |w, _| fio::write_depth(w, img))?;
        out.write(&format!("{name}.txt"), |w, h| fio::write_depth_sidecar(w, h, img, &meta))?;
    }
    Ok(())
}

fn cmd_pipeline(cfg: &RunConfig, stage: PipelineStage, out: &mut Outputs) -> Result<(), CliError> {
    if stage == PipelineStage::Analysis {
        return cmd_analyze(cfg, Study::All, out);
    }
    let stream = gen_parallel_flight(&cfg.scenario)?;
    let relpose = run_relpose(&stream)?;
    out.write("estimates.csv", |w, h| fio::write_estimates_csv(w, h, &relpose.estimates))?;
    if stage == PipelineStage::Relpose {
        return write_summary(out, &summary_rows(Some(&relpose), None, None));
    }
    let association = run_cross_association(&stream, &cfg.pipeline)?;
    out.write("tracks.csv", |w, h| fio::write_tracks_csv(w, h, association.ledger.tracks()))?;
    let mapping = match run_mapping(&stream, &relpose.estimates, &association, &cfg.pipeline) {
        Ok(m) => m,
        Err(e) => {
            write_summary(out, &summary_rows(Some(&relpose), Some(&association), None))?;
            return Err(e.into());
        }
    };
    write_mapping(out, &mapping)?;
    write_summary(out, &summary_rows(Some(&relpose), Some(&association), Some(&mapping)))?;
    if stage == PipelineStage::All {
        cmd_analyze(cfg, Study::All, out)?;
    }
    Ok(())
}

fn cmd_analyze(cfg: &RunConfig, study: Study, out: &mut Outputs) -> Result<(), CliError> {
    let a = &cfg.analysis;
    if matches!(study, Study::All | Study::Condition) {
        let sweep = condition_sweep(&a.condition)?;
        out.write("analysis/condition_costereo.csv", |w, h| fio::write_sweep_matrix(w, h, &sweep.co_stereo))?;
        out.write("analysis/condition_costereo_long.csv", |w, h| fio::write_sweep_long(w, h, &sweep.co_stereo))?;
        out.write("analysis/condition_single.csv", |w, h| fio::write_sweep_matrix(w, h, &sweep.single_agent))?;
    }
    if matches!(study, Study::All | Study::Sensitivity) {
        let scfg = a.sensitivity.to_config()?;
        let rows = sensitivity_gradient(&scfg);
        let summary = summarize_sensitivity(&rows, &scfg.c1_position);
        out.write("analysis/sensitivity.csv", |w, h| fio::write_sensitivity_csv(w, h, &rows))?;
        out.write("analysis/sensitivity_summary.csv", |w, h| {
            fio::write_hash_line(w, h)?;
            writeln!(w, "metric,value")?;
            for (label, m) in SENSITIVITY_LABELS.iter().zip(summary.mean_abs) {
                writeln!(w, "mean_abs_{label},{m}")?;
            }
            writeln!(w, "center_lower_fraction,{}", summary.center_fraction())
        })?;
    }
    if matches!(study, Study::All | Study::BaselineSearch) {
        let search = optimal_baseline_search(&a.baseline_search)?;
        out.write("analysis/baseline_errors.csv", |w, h| fio::write_sweep_matrix(w, h, &search.errors))?;
        out.write("analysis/baseline_errors_long.csv", |w, h| fio::write_sweep_long(w, h, &search.errors))?;
        out.write("analysis/best_baseline.csv", |w, h| fio::write_best_baseline(w, h, &search))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<Outputs, CliError> {
    let cfg = load_config(cli.config.as_deref(), cli.seed_override)?;
    let stage = cli.stage.as_deref();
    let (pipeline_stage, study) = match cli.command {
        Command::Simulate => (PipelineStage::All, Study::All),
        Command::Pipeline => (parse_stage(stage, PipelineStage::All)?, Study::All),
        Command::Analyze => (PipelineStage::All, parse_stage(stage, Study::All)?),
    };
    let mut out = Outputs::new(&cli.out_dir, config_hash(&cfg))?;
    out.echo_config(&cfg)?;
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg, &mut out)?,
        Command::Pipeline => cmd_pipeline(&cfg, pipeline_stage, &mut out)?,
        Command::Analyze => cmd_analyze(&cfg, study, &mut out)?,
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            println!("wrote {} files to {} (config {})", out.written.len(), out.dir.display(), &out.hash[..12]);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fcs: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
