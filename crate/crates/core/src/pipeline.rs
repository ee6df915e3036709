//! End-to-end run: relative pose estimation, cross-agent association, collaborative
//! triangulation over the final window, exponential densification and map metrics.

use nalgebra::Vector3;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisConfig;
use crate::assoc::{run_association, AssociationConfig, AssociationMode, AssociationRun, GuidanceSchedule};
use crate::densefit::{
    apply_model, fit_exponential, fit_linear, fit_quadratic, DepthImage, DepthModel, DepthSample, ExpFitParams,
    FitError, LinearFit, NearestIndex, QuadraticFit,
};
use crate::geom::{mount, CameraIntrinsics, PixelObs, Pose};
use crate::relpose::{error_stats, estimate_stream, EstimatorConfig, EstimatorMode, PoseErrorStats, RelPoseError, RelPoseEstimate};
use crate::seed::rng_for;
use crate::sim::{gen_parallel_flight, synth_monodepth, ScenarioConfig, SensorStream, SimError};
use crate::timesync::{interp_sequence, StampedPose};
use crate::triangulate::{refine_gn, triangulate, Landmark, LandmarkSource, RayObs, DEFAULT_COND_THRESHOLD};

/// Depth bands used for landmark counts and per-band map error, meters.
pub const DEPTH_BANDS: [(f64, f64); 4] = [(0.0, 10.0), (10.0, 30.0), (30.0, 50.0), (50.0, 70.0)];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("relative pose: {0}")]
    RelPose(#[from] RelPoseError),
    #[error("depth fit: {0}")]
    Fit(#[from] FitError),
    #[error("association: {0}")]
    Assoc(String),
    #[error("mapping: {0}")]
    Mapping(String),
}

fn d_window() -> usize {
    10
}
fn d_cond() -> f64 {
    DEFAULT_COND_THRESHOLD
}
fn d_refine() -> usize {
    10
}
fn d_stride() -> u32 {
    4
}
fn d_latency() -> f64 {
    crate::assoc::DEFAULT_GUIDANCE_LATENCY_S
}
fn d_dropout() -> f64 {
    0.05
}
fn d_capacity() -> usize {
    crate::assoc::DEFAULT_PAIR_CAPACITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Frames (association steps) used for triangulation, ending at the last step.
    #[serde(default = "d_window")]
    pub mapping_window: usize,
    #[serde(default = "d_cond")]
    pub cond_threshold: f64,
    #[serde(default = "d_refine")]
    pub refine_iterations: usize,
    /// Pixel stride of the exported dense cloud.
    #[serde(default = "d_stride")]
    pub dense_stride: u32,
    #[serde(default = "d_latency")]
    pub guidance_latency_s: f64,
    #[serde(default = "d_dropout")]
    pub flow_dropout: f64,
    #[serde(default = "d_capacity")]
    pub track_capacity: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mapping_window: d_window(),
            cond_threshold: d_cond(),
            refine_iterations: d_refine(),
            dense_stride: d_stride(),
            guidance_latency_s: d_latency(),
            flow_dropout: d_dropout(),
            track_capacity: d_capacity(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.mapping_window < 2 {
            return Err("pipeline.mapping_window must be at least 2".into());
        }
        if !(self.cond_threshold >= 1.0) {
            return Err("pipeline.cond_threshold must be at least 1".into());
        }
        if self.dense_stride == 0 {
            return Err("pipeline.dense_stride must be positive".into());
        }
        if !(self.guidance_latency_s >= 0.0 && self.guidance_latency_s.is_finite()) {
            return Err("pipeline.guidance_latency_s must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.flow_dropout) {
            return Err("pipeline.flow_dropout must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// The single configuration document of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelPoseStage {
    pub estimates: Vec<RelPoseEstimate>,
    pub stats: PoseErrorStats,
}

pub fn run_relpose(stream: &SensorStream) -> Result<RelPoseStage, PipelineError> {
    let cfg = EstimatorConfig::from_scenario(&stream.config, EstimatorMode::Fusion);
    let estimates = estimate_stream(stream, &cfg)?;
    let stats = error_stats(&estimates, stream);
    Ok(RelPoseStage { estimates, stats })
}

pub fn run_cross_association(stream: &SensorStream, cfg: &PipelineConfig) -> Result<AssociationRun, PipelineError> {
    let schedule = GuidanceSchedule::new(stream.config.frame_rate_hz, cfg.guidance_latency_s)
        .map_err(|e| PipelineError::Assoc(e.to_string()))?;
    let acfg = AssociationConfig {
        schedule,
        mode: AssociationMode::GuidancePlusPrediction,
        dropout: cfg.flow_dropout,
        capacity: cfg.track_capacity,
        max_frames: usize::MAX,
    };
    Ok(run_association(stream, &acfg))
}

/// A mapped landmark with its scene id and ground truth (world frame) when known.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedLandmark {
    pub scene_id: u64,
    pub landmark: Landmark,
    pub world: Vector3<f64>,
    pub truth: Option<Vector3<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandStats {
    pub lo: f64,
    pub hi: f64,
    pub landmarks: usize,
    pub dense_points: usize,
    pub ucd_exp: f64,
    /// Same metric with the fit trained on near-field odometry landmarks only.
    pub ucd_vio_only: f64,
}

/// Dense RMS depth error of each fitted model against the true depth image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitComparison {
    pub rms_exp: f64,
    pub rms_linear: f64,
    pub rms_quadratic: f64,
    pub exp: ExpFitParams,
    pub linear: LinearFit,
    pub quadratic: QuadraticFit,
}

impl FitComparison {
    pub fn reduction_vs_linear(&self) -> f64 {
        1.0 - self.rms_exp / self.rms_linear
    }

    pub fn reduction_vs_quadratic(&self) -> f64 {
        1.0 - self.rms_exp / self.rms_quadratic
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingOutput {
    /// Leader frame whose front camera defines the anchor.
    pub anchor_frame: usize,
    /// World pose of the anchor camera from leader odometry.
    pub anchor_pose: Pose,
    pub landmarks: Vec<MappedLandmark>,
    /// Pairs failing the condition gate or degenerate.
    pub rejected: usize,
    /// Pairs with fewer than two usable views in the window.
    pub single_view: usize,
    pub truth_depth: DepthImage,
    pub mono: DepthImage,
    pub metric: DepthImage,
    pub fits: FitComparison,
    pub vio_fit: Option<ExpFitParams>,
    /// Dense cloud in the world frame.
    pub dense_cloud: Vec<Vector3<f64>>,
    pub bands: Vec<BandStats>,
    pub coverage_area: f64,
}

impl MappingOutput {
    /// Mean distance between mapped co-visible landmarks and their ground truth.
    pub fn covisible_error(&self) -> f64 {
        let errs: Vec<f64> = self
            .landmarks
            .iter()
            .filter(|m| m.landmark.source == LandmarkSource::Covisible)
            .filter_map(|m| m.truth.map(|t| (m.world - t).norm()))
            .collect();
        crate::analysis::stable_sum(errs.clone()) / errs.len().max(1) as f64
    }
}

fn front_camera_pose(body: &Pose) -> Pose {
    body.compose(&Pose::new(mount::front_camera(), Vector3::zeros()))
}

fn band_of(z: f64) -> Option<usize> {
    DEPTH_BANDS.iter().position(|(lo, hi)| z >= *lo && z < *hi)
}

/// Depth samples at the pixels of anchor-frame points.
fn depth_samples<'a>(
    points: impl Iterator<Item = &'a Vector3<f64>>,
    mono: &DepthImage,
    k: &CameraIntrinsics,
) -> Vec<DepthSample> {
    points
        .filter(|p| p.z > 0.0)
        .filter_map(|p| {
            let px = k.project_raw(p);
            mono.sample(px.x, px.y).map(|d| DepthSample::new(p.z, d))
        })
        .collect()
}

fn dense_rms<M: DepthModel + ?Sized>(truth: &DepthImage, mono: &DepthImage, model: &M) -> f64 {
    let pred = apply_model(mono, model);
    let mut sq: Vec<f64> = Vec::new();
    for (t, p) in truth.data.iter().zip(&pred.data) {
        if t.is_finite() && p.is_finite() {
            sq.push((t - p).powi(2));
        }
    }
    (crate::analysis::stable_sum(sq.clone()) / sq.len().max(1) as f64).sqrt()
}

/// Fits all three models on `samples` and scores them densely against `truth`.
pub fn compare_fits(truth: &DepthImage, mono: &DepthImage, samples: &[DepthSample]) -> Result<FitComparison, PipelineError> {
    let exp = fit_exponential(samples)?;
    let linear = fit_linear(samples)?;
    let quadratic = fit_quadratic(samples)?;
    Ok(FitComparison {
        rms_exp: dense_rms(truth, mono, &exp),
        rms_linear: dense_rms(truth, mono, &linear),
        rms_quadratic: dense_rms(truth, mono, &quadratic),
        exp,
        linear,
        quadratic,
    })
}

/// Warped-depth scene seen from the leader's first frame: true depth, simulated
/// monocular values, and samples at the exact scene landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct FitScene {
    pub truth: DepthImage,
    pub mono: DepthImage,
    pub samples: Vec<DepthSample>,
}

pub fn canonical_fit_scene(seed: u64) -> Result<FitScene, PipelineError> {
    let cfg = ScenarioConfig::with_seed(seed, 3.0);
    let stream = gen_parallel_flight(&cfg)?;
    let k = &cfg.intrinsics_front;
    let cam = front_camera_pose(&stream.frames[0].leader.pose);
    let truth = stream.scene.render_depth(&stream.frames[0].leader.pose, k);
    let mono = synth_monodepth(&truth, &cfg.mono_warp, cfg.mono_noise_sigma, &mut rng_for(seed, "pipeline/canonical_mono"))?;
    let cam_inv = cam.inverse();
    let local: Vec<Vector3<f64>> = stream.landmarks.iter().map(|l| cam_inv.transform_point(&l.position)).collect();
    let samples = depth_samples(local.iter(), &mono, k);
    Ok(FitScene { truth, mono, samples })
}

fn gaussian3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("finite sigma");
        Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
    } else {
        Vector3::zeros()
    }
}

/// Triangulates live cross pairs over the final `mapping_window` association steps in the
/// anchor frame of the oldest step, adds near-field odometry landmarks, fits the monocular
/// depth of the anchor view and evaluates the resulting dense map.
pub fn run_mapping(
    stream: &SensorStream,
    estimates: &[RelPoseEstimate],
    association: &AssociationRun,
    cfg: &PipelineConfig,
) -> Result<MappingOutput, PipelineError> {
    let scfg = &stream.config;
    let k = &scfg.intrinsics_front;
    let steps = association.frames.len();
    if steps < cfg.mapping_window {
        return Err(PipelineError::Mapping(format!("{steps} associated frames, window needs {}", cfg.mapping_window)));
    }
    let first_step = steps - cfg.mapping_window;
    let anchor_frame = association.frames[first_step];
    let anchor_pose = front_camera_pose(&stream.frames[anchor_frame].leader_odometry);
    let anchor_inv = anchor_pose.inverse();

    let odometry: Vec<StampedPose> = stream.frames.iter().map(|f| StampedPose::new(f.time, f.leader_odometry)).collect();
    let relative: Vec<StampedPose> =
        estimates.iter().map(|e| StampedPose::new(e.time, Pose::new(e.orientation.rotation(), e.position))).collect();
    let follower_camera = |t: f64| -> Option<Pose> {
        let body0 = interp_sequence(&odometry, t).ok()?;
        let rel = interp_sequence(&relative, t).ok()?;
        Some(anchor_inv.compose(&front_camera_pose(&body0.compose(&rel))))
    };

    let truth_by_id: std::collections::BTreeMap<u64, Vector3<f64>> =
        stream.landmarks.iter().map(|l| (l.id, l.position)).collect();
    let mut landmarks = Vec::new();
    let mut rejected = 0;
    let mut single_view = 0;
    for pair in association.ledger.live_pairs() {
        let (Some(t0), Some(t1)) = (association.ledger.track(pair.track_id_0), association.ledger.track(pair.track_id_1)) else {
            continue;
        };
        let mut pixels: Vec<PixelObs> = Vec::new();
        let mut poses: Vec<Pose> = Vec::new();
        let mut frames = Vec::new();
        for step in first_step..steps {
            let leader = stream.frames[association.frames[step]].leader_odometry;
            if let Some(o) = t0.observation_at(step) {
                pixels.push(*o);
                poses.push(anchor_inv.compose(&front_camera_pose(&leader)));
                frames.push(step);
            }
            if let Some(o) = t1.observation_at(step) {
                if let Some(p) = follower_camera(o.timestamp) {
                    pixels.push(*o);
                    poses.push(p);
                    frames.push(step);
                }
            }
        }
        let rays: Vec<RayObs> = pixels.iter().zip(&poses).map(|(o, p)| RayObs::from_pixel(o.u, o.v, k, p)).collect();
        if rays.len() < 2 {
            single_view += 1;
            continue;
        }
        let Ok(linear) = triangulate(&rays, cfg.cond_threshold) else {
            rejected += 1;
            continue;
        };
        let mut lm = refine_gn(&linear, &pixels, &poses, k, cfg.refine_iterations).unwrap_or(linear);
        frames.dedup();
        lm.observing_frames = frames;
        lm.source = LandmarkSource::Covisible;
        landmarks.push(MappedLandmark {
            scene_id: t0.landmark,
            world: anchor_pose.transform_point(&lm.position),
            truth: truth_by_id.get(&t0.landmark).copied(),
            landmark: lm,
        });
    }

    let mut vio_rng = rng_for(scfg.rng_seed, "pipeline/vio");
    let leader_center = anchor_pose.translation;
    for l in stream.landmarks.iter().filter(|l| l.source == LandmarkSource::SelfVio) {
        let range = (l.position - leader_center).norm();
        let world = l.position + gaussian3(&mut vio_rng, scfg.vio_landmark_sigma * range);
        let local = anchor_inv.transform_point(&world);
        if local.z <= 0.0 {
            continue;
        }
        landmarks.push(MappedLandmark {
            scene_id: l.id,
            landmark: Landmark {
                position: local,
                observing_frames: vec![first_step],
                condition_number: 0.0,
                refined: false,
                source: LandmarkSource::SelfVio,
            },
            world,
            truth: Some(l.position),
        });
    }
    landmarks.sort_by_key(|m| m.scene_id);

    let true_anchor = front_camera_pose(&stream.frames[anchor_frame].leader.pose);
    let truth_depth = stream.scene.render_depth(&stream.frames[anchor_frame].leader.pose, k);
    let mono = synth_monodepth(&truth_depth, &scfg.mono_warp, scfg.mono_noise_sigma, &mut rng_for(scfg.rng_seed, "pipeline/mono"))?;
    let samples = depth_samples(landmarks.iter().map(|m| &m.landmark.position), &mono, k);
    let fits = compare_fits(&truth_depth, &mono, &samples)?;
    let vio_samples = depth_samples(
        landmarks.iter().filter(|m| m.landmark.source == LandmarkSource::SelfVio).map(|m| &m.landmark.position),
        &mono,
        k,
    );
    let vio_fit = fit_exponential(&vio_samples).ok();
    let metric = apply_model(&mono, &fits.exp);
    let vio_metric = vio_fit.map(|f| apply_model(&mono, &f));

    let mut gt_cloud = Vec::with_capacity(truth_depth.data.len());
    for v in 0..truth_depth.height {
        for u in 0..truth_depth.width {
            let z = truth_depth.get(u, v);
            if z.is_finite() {
                gt_cloud.push(true_anchor.transform_point(&k.unproject(u as f64 + 0.5, v as f64 + 0.5, z)));
            }
        }
    }
    let index = NearestIndex::new(&gt_cloud);

    let mut dense_cloud = Vec::new();
    let mut exp_dist: Vec<Vec<f64>> = vec![Vec::new(); DEPTH_BANDS.len()];
    let mut vio_dist: Vec<Vec<f64>> = vec![Vec::new(); DEPTH_BANDS.len()];
    for v in (0..metric.height).step_by(cfg.dense_stride as usize) {
        for u in (0..metric.width).step_by(cfg.dense_stride as usize) {
            let band = band_of(truth_depth.get(u, v));
            let (uc, vc) = (u as f64 + 0.5, v as f64 + 0.5);
            let z = metric.get(u, v);
            if z.is_finite() {
                let p = anchor_pose.transform_point(&k.unproject(uc, vc, z));
                if let Some(b) = band {
                    exp_dist[b].push(index.distance(&p));
                }
                dense_cloud.push(p);
            }
            if let (Some(b), Some(vm)) = (band, &vio_metric) {
                let z = vm.get(u, v);
                if z.is_finite() {
                    vio_dist[b].push(index.distance(&anchor_pose.transform_point(&k.unproject(uc, vc, z))));
                }
            }
        }
    }
    let mean = |d: &Vec<f64>| if d.is_empty() { f64::NAN } else { crate::analysis::stable_sum(d.clone()) / d.len() as f64 };
    let bands = DEPTH_BANDS
        .iter()
        .enumerate()
        .map(|(b, &(lo, hi))| BandStats {
            lo,
            hi,
            landmarks: landmarks.iter().filter(|m| band_of(m.landmark.position.z) == Some(b)).count(),
            dense_points: exp_dist[b].len(),
            ucd_exp: mean(&exp_dist[b]),
            ucd_vio_only: mean(&vio_dist[b]),
        })
        .collect();
    let coverage_area = crate::densefit::coverage_area(&dense_cloud);

    Ok(MappingOutput {
        anchor_frame,
        anchor_pose,
        landmarks,
        rejected,
        single_view,
        truth_depth,
        mono,
        metric,
        fits,
        vio_fit,
        dense_cloud,
        bands,
        coverage_area,
    })
}

/// `(metric, band, value)` rows of the run summary.
pub fn summary_rows(
    relpose: Option<&RelPoseStage>,
    association: Option<&AssociationRun>,
    mapping: Option<&MappingOutput>,
) -> Vec<(String, String, f64)> {
    let mut rows = Vec::new();
    let mut push = |m: &str, b: &str, v: f64| rows.push((m.to_owned(), b.to_owned(), v));
    if let Some(r) = relpose {
        push("position_mae_m", "all", r.stats.position_mae);
        push("position_rmse_m", "all", r.stats.position_rmse);
        push("yaw_mae_deg", "all", r.stats.yaw_mae.to_degrees());
        push("estimates", "all", r.stats.count as f64);
    }
    if let Some(a) = association {
        push("association_rate_hz", "all", a.measured_rate_hz);
        push("inheritance_violations", "all", a.inheritance_violations as f64);
    }
    if let Some(m) = mapping {
        let count = |s: LandmarkSource| m.landmarks.iter().filter(|l| l.landmark.source == s).count() as f64;
        push("landmarks_covisible", "all", count(LandmarkSource::Covisible));
        push("landmarks_vio", "all", count(LandmarkSource::SelfVio));
        push("landmarks_rejected", "all", m.rejected as f64);
        push("pairs_single_view", "all", m.single_view as f64);
        push("covisible_landmark_error_m", "all", m.covisible_error());
        push("dense_rms_exp_m", "all", m.fits.rms_exp);
        push("dense_rms_linear_m", "all", m.fits.rms_linear);
        push("dense_rms_quadratic_m", "all", m.fits.rms_quadratic);
        for b in &m.bands {
            let band = format!("{}-{}", b.lo, b.hi);
            push("landmarks", &band, b.landmarks as f64);
            push("dense_points", &band, b.dense_points as f64);
            push("ucd_exp_m", &band, b.ucd_exp);
            push("ucd_vio_only_m", &band, b.ucd_vio_only);
        }
        push("coverage_area_m2", "all", m.coverage_area);
    }
    rows
}
