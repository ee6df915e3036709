//! Numerical studies of collaborative triangulation: condition-number sweeps over
//! baseline and forward motion, sensitivity summaries, the side-camera baseline noise
//! model, and a Monte-Carlo search for the best baseline per scene depth.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{mount, BearingObs, Rotation};
use crate::seed::{derive_seed, rng_indexed};
use crate::sim::gen_landmark_plane;
use crate::triangulate::{
    condition_number, two_view_closed_form, RayObs, SensitivityConfig, SensitivityRow, SENSITIVITY_STEP,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid noise model: {0}")]
    InvalidModel(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}

/// Pixel noise of the side camera propagated to the second camera's position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineNoiseModel {
    pub l: f64,
    pub f: f64,
    pub du: f64,
    pub dv: f64,
}

impl BaselineNoiseModel {
    pub fn new(l: f64, f: f64, du: f64, dv: f64) -> Result<Self, AnalysisError> {
        if !(l > 0.0 && f > 0.0) {
            return Err(AnalysisError::InvalidModel(format!("need l > 0 and f > 0, got l = {l}, f = {f}")));
        }
        Ok(Self { l, f, du, dv })
    }

    /// Draws `du, dv ~ N(0, sigma^2)`.
    pub fn sample<R: Rng + ?Sized>(l: f64, f: f64, sigma: f64, rng: &mut R) -> Result<Self, AnalysisError> {
        let (du, dv) = if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).map_err(|e| AnalysisError::InvalidModel(e.to_string()))?;
            (n.sample(rng), n.sample(rng))
        } else {
            (0.0, 0.0)
        };
        Self::new(l, f, du, dv)
    }
}

/// `(l du / f, l^2 sqrt(du^2 + dv^2) / f, l dv / f)` in (lateral, along-baseline, vertical) axes.
pub fn perturb_baseline(model: &BaselineNoiseModel) -> Vector3<f64> {
    let BaselineNoiseModel { l, f, du, dv } = *model;
    Vector3::new(l * du / f, l * l * du.hypot(dv) / f, l * dv / f)
}

/// Grid statistic: `values[row][col]`, with non-finite entries counted in `rejected`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub row_label: String,
    pub rows: Vec<f64>,
    pub col_label: String,
    pub cols: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Standard error of each cell (zero for deterministic statistics).
    pub std_error: Vec<Vec<f64>>,
    pub rejected: Vec<Vec<usize>>,
    pub trials: usize,
}

impl SweepResult {
    pub fn value(&self, row: f64, col: f64) -> Option<f64> {
        let r = self.rows.iter().position(|x| (x - row).abs() < 1e-9)?;
        let c = self.cols.iter().position(|x| (x - col).abs() < 1e-9)?;
        Some(self.values[r][c])
    }
}

/// Order-independent sum: values are sorted before accumulation.
pub fn stable_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// `start, start + step, ..., end` without accumulated rounding.
pub fn linspace_step(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaneConfig {
    pub depth: f64,
    pub size: f64,
    pub spacing: f64,
}

impl Default for PlaneConfig {
    fn default() -> Self {
        Self { depth: 30.0, size: 20.0, spacing: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionSweepConfig {
    pub baselines: Vec<f64>,
    pub forward_spans: Vec<f64>,
    pub keyframe_step: f64,
    pub plane: PlaneConfig,
}

impl Default for ConditionSweepConfig {
    fn default() -> Self {
        Self {
            baselines: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            forward_spans: linspace_step(1.0, 10.0, 0.1),
            keyframe_step: 0.1,
            plane: PlaneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSweep {
    /// Rows: forward span; columns: baseline.
    pub co_stereo: SweepResult,
    /// Rows: forward span; single column.
    pub single_agent: SweepResult,
}

/// Per-landmark condition numbers after each forward span, accumulating keyframes
/// `0, step, 2 step, ...` along the optical axis; `lateral` adds a second camera per keyframe.
fn conditions_along_track(point: &Vector3<f64>, lateral: Option<f64>, spans: &[f64], step: f64) -> Vec<f64> {
    let mut m = nalgebra::Matrix3::zeros();
    let mut added = 0usize;
    let mut out = Vec::with_capacity(spans.len());
    for &span in spans {
        let needed = (span / step + 1e-9).floor() as usize + 1;
        while added < needed {
            let s = added as f64 * step;
            let mut centers = vec![Vector3::new(0.0, 0.0, s)];
            if let Some(l) = lateral {
                centers.push(Vector3::new(0.0, -l, s));
            }
            for c in centers {
                let n = RayObs::towards(c, point).bearing.ortho;
                m += n.transpose() * n;
            }
            added += 1;
        }
        out.push(condition_number(&m));
    }
    out
}

/// Mean `cond(A^T A)` over the landmark plane for every (forward span, baseline), plus the
/// single-agent reference. Non-finite condition numbers are excluded from the mean and counted.
pub fn condition_sweep(cfg: &ConditionSweepConfig) -> Result<ConditionSweep, AnalysisError> {
    if cfg.forward_spans.windows(2).any(|w| w[1] < w[0]) || cfg.forward_spans.iter().any(|s| *s < 0.0) {
        return Err(AnalysisError::InvalidSweep("forward spans must be non-negative and ascending".into()));
    }
    if !(cfg.keyframe_step > 0.0) {
        return Err(AnalysisError::InvalidSweep("keyframe step must be positive".into()));
    }
    let plane = gen_landmark_plane(cfg.plane.depth, cfg.plane.size, cfg.plane.spacing);
    let spans = &cfg.forward_spans;
    let summarize = |per_landmark: Vec<Vec<f64>>| -> (Vec<f64>, Vec<usize>) {
        (0..spans.len())
            .map(|j| {
                let finite: Vec<f64> = per_landmark.iter().map(|c| c[j]).filter(|c| c.is_finite()).collect();
                let rejected = per_landmark.len() - finite.len();
                let n = finite.len();
                let mean = if n == 0 { f64::INFINITY } else { stable_sum(finite) / n as f64 };
                (mean, rejected)
            })
            .unzip()
    };
    let columns: Vec<(Vec<f64>, Vec<usize>)> = cfg
        .baselines
        .par_iter()
        .map(|&l| summarize(plane.iter().map(|p| conditions_along_track(p, Some(l), spans, cfg.keyframe_step)).collect()))
        .collect();
    let single = summarize(plane.par_iter().map(|p| conditions_along_track(p, None, spans, cfg.keyframe_step)).collect());

    let nrows = spans.len();
    let co_stereo = SweepResult {
        row_label: "forward_m".into(),
        rows: spans.clone(),
        col_label: "baseline_m".into(),
        cols: cfg.baselines.clone(),
        values: (0..nrows).map(|j| columns.iter().map(|c| c.0[j]).collect()).collect(),
        std_error: vec![vec![0.0; cfg.baselines.len()]; nrows],
        rejected: (0..nrows).map(|j| columns.iter().map(|c| c.1[j]).collect()).collect(),
        trials: 1,
    };
    let single_agent = SweepResult {
        row_label: "forward_m".into(),
        rows: spans.clone(),
        col_label: "baseline_m".into(),
        cols: vec![0.0],
        values: single.0.iter().map(|v| vec![*v]).collect(),
        std_error: vec![vec![0.0]; nrows],
        rejected: single.1.iter().map(|v| vec![*v]).collect(),
        trials: 1,
    };
    Ok(ConditionSweep { co_stereo, single_agent })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySummary {
    /// Mean `|d p / d theta_k|` over the plane.
    pub mean_abs: [f64; 6],
    pub rows: usize,
    /// Rows whose landmark midway between the cameras is less sensitive than both row ends.
    pub rows_center_lower: usize,
}

impl SensitivitySummary {
    pub fn center_fraction(&self) -> f64 {
        self.rows_center_lower as f64 / self.rows.max(1) as f64
    }
}

/// Two parallel cameras `baseline_m` apart observing a landmark plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityStudyConfig {
    pub baseline_m: f64,
    pub plane: PlaneConfig,
    pub step: f64,
}

impl Default for SensitivityStudyConfig {
    fn default() -> Self {
        Self { baseline_m: 3.0, plane: PlaneConfig::default(), step: SENSITIVITY_STEP }
    }
}

impl SensitivityStudyConfig {
    pub fn to_config(&self) -> Result<SensitivityConfig, AnalysisError> {
        let PlaneConfig { depth, size, spacing } = self.plane;
        if !(self.baseline_m > 0.0 && self.step > 0.0 && depth > 0.0 && spacing > 0.0 && size >= spacing) {
            return Err(AnalysisError::InvalidSweep("sensitivity study needs positive baseline, step and plane".into()));
        }
        Ok(SensitivityConfig {
            c1_position: Vector3::new(0.0, -self.baseline_m, 0.0),
            c1_rotation: Rotation::identity(),
            landmarks: gen_landmark_plane(depth, size, spacing),
            step: self.step,
        })
    }
}

/// Settings for all three studies; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub condition: ConditionSweepConfig,
    pub sensitivity: SensitivityStudyConfig,
    pub baseline_search: BaselineSearchConfig,
}

fn total_sensitivity(r: &SensitivityRow) -> f64 {
    r.gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Plane means per component and the centre-versus-edge ordering per row. A row holds the
/// landmarks sharing the vertical coordinate; its centre is the landmark closest to the
/// midpoint of the two cameras along the baseline.
pub fn summarize_sensitivity(rows: &[SensitivityRow], c1_position: &Vector3<f64>) -> SensitivitySummary {
    let mut mean_abs = [0.0; 6];
    for (k, m) in mean_abs.iter_mut().enumerate() {
        *m = stable_sum(rows.iter().map(|r| r.gradient[k]).collect()) / rows.len().max(1) as f64;
    }
    let mid = c1_position.y / 2.0;
    let mut keys: Vec<i64> = rows.iter().map(|r| (r.landmark.x * 1e6).round() as i64).collect();
    keys.sort_unstable();
    keys.dedup();
    let mut lower = 0;
    for key in &keys {
        let row: Vec<&SensitivityRow> = rows.iter().filter(|r| (r.landmark.x * 1e6).round() as i64 == *key).collect();
        let by_y = |a: &&&SensitivityRow, b: &&&SensitivityRow| a.landmark.y.total_cmp(&b.landmark.y);
        let (Some(lo), Some(hi)) = (row.iter().min_by(by_y), row.iter().max_by(by_y)) else { continue };
        let center = row.iter().min_by(|a, b| (a.landmark.y - mid).abs().total_cmp(&(b.landmark.y - mid).abs())).unwrap();
        let c = total_sensitivity(center);
        if c < total_sensitivity(lo) && c < total_sensitivity(hi) {
            lower += 1;
        }
    }
    SensitivitySummary { mean_abs, rows: keys.len(), rows_center_lower: lower }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSearchConfig {
    pub baselines: Vec<f64>,
    pub depths: Vec<f64>,
    pub trials: usize,
    /// Derived from the run's root seed rather than configured directly.
    #[serde(skip)]
    pub seed: u64,
    /// Side-camera marker pixel noise driving the baseline error.
    pub pixel_sigma: f64,
    pub side_focal: f64,
    pub front_focal: f64,
    /// Optional pixel noise on the landmark observations themselves; zero keeps the
    /// bearings exact so only the baseline error propagates.
    pub landmark_pixel_sigma: f64,
    pub plane_size: f64,
    pub plane_spacing: f64,
}

impl Default for BaselineSearchConfig {
    fn default() -> Self {
        Self {
            baselines: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            depths: vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0],
            trials: 100,
            seed: 0,
            pixel_sigma: 1.0,
            side_focal: 380.0,
            front_focal: 380.0,
            landmark_pixel_sigma: 0.0,
            plane_size: 20.0,
            plane_spacing: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSearch {
    /// Rows: depth; columns: baseline; mean landmark error in meters.
    pub errors: SweepResult,
    /// `(depth, best baseline)`.
    pub best: Vec<(f64, f64)>,
}

fn landmark_key(p: &Vector3<f64>) -> String {
    format!("{:.6},{:.6}", p.x, p.y)
}

/// Noisy normalised bearing of `p` seen from `center` with pixel noise `(du, dv)`.
fn noisy_bearing(p: &Vector3<f64>, center: &Vector3<f64>, f: f64, du: f64, dv: f64) -> BearingObs {
    let d = p - center;
    BearingObs::new(Vector3::new(d.x / d.z + du / f, d.y / d.z + dv / f, 1.0))
}

/// Mean landmark error of one Monte-Carlo trial at one (baseline, depth) cell. The baseline
/// draw depends only on `(seed, trial)` so every cell sees common random numbers.
pub fn baseline_trial_error(cfg: &BaselineSearchConfig, baseline: f64, depth: f64, trial: usize) -> f64 {
    let mut rng = rng_indexed(cfg.seed, "analysis/baseline_search", trial as u64);
    let model = BaselineNoiseModel::sample(baseline, cfg.side_focal, cfg.pixel_sigma, &mut rng).expect("validated search config");
    let dp_body = perturb_baseline(&model);
    let dp = mount::front_camera().inverse().rotate(&dp_body);
    let c1 = Vector3::new(0.0, -baseline, 0.0);
    let c1_est = c1 + dp;
    let plane = gen_landmark_plane(depth, cfg.plane_size, cfg.plane_spacing);
    let trial_seed = derive_seed(cfg.seed, &format!("analysis/landmark_noise/{trial}"));
    let errors: Vec<f64> = plane
        .iter()
        .map(|p| {
            let (b0, b1) = if cfg.landmark_pixel_sigma > 0.0 {
                let mut r: ChaCha8Rng = rand::SeedableRng::seed_from_u64(derive_seed(trial_seed, &landmark_key(p)));
                let n = Normal::new(0.0, cfg.landmark_pixel_sigma).expect("positive sigma");
                let f = cfg.front_focal;
                (
                    noisy_bearing(p, &Vector3::zeros(), f, n.sample(&mut r), n.sample(&mut r)),
                    noisy_bearing(p, &c1, f, n.sample(&mut r), n.sample(&mut r)),
                )
            } else {
                (BearingObs::new(*p), BearingObs::new(p - c1))
            };
            two_view_closed_form(&b0, &b1, &c1_est).map(|est| (est - p).norm()).unwrap_or(f64::NAN)
        })
        .collect();
    let finite: Vec<f64> = errors.into_iter().filter(|e| e.is_finite()).collect();
    let n = finite.len();
    stable_sum(finite) / n.max(1) as f64
}

/// Mean landmark error over `trials` for every (depth, baseline) and the best baseline per depth.
pub fn optimal_baseline_search(cfg: &BaselineSearchConfig) -> Result<BaselineSearch, AnalysisError> {
    if cfg.trials == 0 {
        return Err(AnalysisError::InvalidSweep("trials must be positive".into()));
    }
    if cfg.baselines.is_empty() || cfg.baselines.iter().any(|l| !(*l > 0.0)) {
        return Err(AnalysisError::InvalidSweep("baselines must be positive".into()));
    }
    if !(cfg.side_focal > 0.0 && cfg.front_focal > 0.0) {
        return Err(AnalysisError::InvalidSweep("focal lengths must be positive".into()));
    }
    let cells: Vec<(usize, usize)> =
        (0..cfg.depths.len()).flat_map(|r| (0..cfg.baselines.len()).map(move |c| (r, c))).collect();
    let stats: Vec<(f64, f64)> = cells
        .par_iter()
        .map(|&(r, c)| {
            let per_trial: Vec<f64> =
                (0..cfg.trials).into_par_iter().map(|t| baseline_trial_error(cfg, cfg.baselines[c], cfg.depths[r], t)).collect();
            mean_and_std_error(&per_trial)
        })
        .collect();
    let ncols = cfg.baselines.len();
    let values: Vec<Vec<f64>> = (0..cfg.depths.len()).map(|r| (0..ncols).map(|c| stats[r * ncols + c].0).collect()).collect();
    let std_error: Vec<Vec<f64>> = (0..cfg.depths.len()).map(|r| (0..ncols).map(|c| stats[r * ncols + c].1).collect()).collect();
    let best = cfg
        .depths
        .iter()
        .zip(&values)
        .map(|(d, row)| {
            let (i, _) = row.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty baselines");
            (*d, cfg.baselines[i])
        })
        .collect();
    Ok(BaselineSearch {
        errors: SweepResult {
            row_label: "depth_m".into(),
            rows: cfg.depths.clone(),
            col_label: "baseline_m".into(),
            cols: cfg.baselines.clone(),
            values,
            std_error,
            rejected: vec![vec![0; ncols]; cfg.depths.len()],
            trials: cfg.trials,
        },
        best,
    })
}

/// Sample mean and standard error of the mean.
pub fn mean_and_std_error(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = stable_sum(x.to_vec()) / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = stable_sum(x.iter().map(|v| (v - mean).powi(2)).collect()) / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn noise_model_examples() {
        let p = perturb_baseline(&BaselineNoiseModel::new(3.0, 380.0, 1.0, 0.0).unwrap());
        assert_relative_eq!(p, Vector3::new(3.0 / 380.0, 9.0 / 380.0, 0.0), epsilon = 1e-15);
        assert!((p.x - 0.007895).abs() < 5e-7 && (p.y - 0.023684).abs() < 5e-7);
        let p = perturb_baseline(&BaselineNoiseModel::new(3.0, 380.0, 1.0, 1.0).unwrap());
        assert_relative_eq!(p, Vector3::new(3.0 / 380.0, 9.0 * 2f64.sqrt() / 380.0, 3.0 / 380.0), epsilon = 1e-15);
        // 0.033494 is the six-decimal truncation of 9 sqrt(2) / 380
        assert!((0.0..1e-6).contains(&(p.y - 0.033494)) && (p.z - 0.007895).abs() < 5e-7);
        assert_eq!(perturb_baseline(&BaselineNoiseModel::new(3.0, 380.0, 0.0, 0.0).unwrap()), Vector3::zeros());
        assert!(BaselineNoiseModel::new(0.0, 380.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn noise_model_scaling_is_exact() {
        let a = perturb_baseline(&BaselineNoiseModel::new(1.5, 380.0, 0.7, -0.3).unwrap());
        let b = perturb_baseline(&BaselineNoiseModel::new(3.0, 380.0, 0.7, -0.3).unwrap());
        assert_eq!(b.x, 2.0 * a.x);
        assert_eq!(b.y, 4.0 * a.y);
        assert_eq!(b.z, 2.0 * a.z);
    }

    #[test]
    fn linspace_is_exact() {
        let s = linspace_step(1.0, 10.0, 0.1);
        assert_eq!(s.len(), 91);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[90], 10.0);
        assert_eq!(s[13], 2.3);
    }

    #[test]
    fn along_track_matches_direct_stack() {
        let p = Vector3::new(2.0, -3.0, 30.0);
        let spans = [0.0, 0.5, 1.0];
        let got = conditions_along_track(&p, Some(2.0), &spans, 0.1);
        let centers: Vec<Vector3<f64>> = (0..=10)
            .flat_map(|k| [Vector3::new(0.0, 0.0, 0.1 * k as f64), Vector3::new(0.0, -2.0, 0.1 * k as f64)])
            .collect();
        let direct = crate::triangulate::point_condition(&p, &centers);
        assert_relative_eq!(got[2], direct, max_relative = 1e-9);
        assert!(got[0] > got[1] && got[1] > got[2]);
    }

    #[test]
    fn sweep_is_order_invariant() {
        let mut a = vec![1e16, 1.0, -1e16, 3.5, 2.25];
        let s = stable_sum(a.clone());
        a.reverse();
        assert_eq!(s, stable_sum(a));
    }
}
