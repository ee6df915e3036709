//! Deterministic two-agent scenario generator.
//!
//! Produces ground-truth trajectories for a leader/follower pair flying in
//! parallel, landmark fields, and noisy sensor channels (side-camera marker
//! pixels, body accelerations, UWB ranges, roll/pitch readings, front-camera
//! features and warped monocular depth). Everything is seeded from
//! [`ScenarioConfig::rng_seed`]; identical configs give bitwise identical streams.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densefit::{DepthImage, ExpFitParams};
use crate::geom::{mount, project, CameraIntrinsics, PixelObs, Pose, Rotation};
use crate::seed::rng_for;
use crate::triangulate::LandmarkSource;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("invalid depth warp: {0}")]
    InvalidWarp(String),
}

fn d_plane_depth() -> f64 {
    30.0
}
fn d_plane_size() -> f64 {
    20.0
}
fn d_plane_spacing() -> f64 {
    0.5
}
fn d_pixel_sigma() -> f64 {
    1.0
}
fn d_uwb_sigma() -> f64 {
    0.05
}
fn d_accel_sigma() -> f64 {
    0.02
}
fn d_attitude_sigma_deg() -> f64 {
    0.05
}
fn d_frame_rate() -> f64 {
    30.0
}
fn d_imu_rate() -> f64 {
    200.0
}
fn d_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::vga(380.0)
}
fn d_speed() -> f64 {
    2.0
}
fn d_height() -> f64 {
    3.0
}
fn d_backdrop() -> f64 {
    65.0
}
fn d_wobble_amp() -> f64 {
    0.15
}
fn d_wobble_period() -> f64 {
    2.5
}
fn d_marker_size() -> f64 {
    0.5
}
fn d_time_offset() -> f64 {
    0.004
}
fn d_time_jitter() -> f64 {
    0.001
}
fn d_warp() -> ExpFitParams {
    ExpFitParams::new(5.0, 1.0, 0.0, 5.0)
}
fn d_mono_sigma() -> f64 {
    0.005
}
fn d_covisible() -> usize {
    200
}
fn d_vio() -> usize {
    60
}
fn d_vio_sigma() -> f64 {
    0.02
}

/// Scenario description. Only the seed and the flight geometry are required; everything
/// else has documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub rng_seed: u64,
    /// Lateral separation of the two agents (the baseline length), meters.
    pub baseline_m: f64,
    pub forward_span_m: f64,
    pub keyframe_step_m: f64,
    #[serde(default = "d_plane_depth")]
    pub plane_depth_m: f64,
    #[serde(default = "d_plane_size")]
    pub plane_size_m: f64,
    #[serde(default = "d_plane_spacing")]
    pub plane_spacing_m: f64,
    #[serde(default = "d_pixel_sigma")]
    pub pixel_noise_sigma: f64,
    #[serde(default = "d_uwb_sigma")]
    pub uwb_noise_sigma: f64,
    #[serde(default = "d_accel_sigma")]
    pub accel_noise_sigma: f64,
    /// Noise on the gravity-aligned roll/pitch readings, degrees.
    #[serde(default = "d_attitude_sigma_deg")]
    pub attitude_noise_deg: f64,
    #[serde(default = "d_frame_rate")]
    pub frame_rate_hz: f64,
    #[serde(default = "d_imu_rate")]
    pub imu_rate_hz: f64,
    #[serde(default = "d_intrinsics")]
    pub intrinsics_front: CameraIntrinsics,
    #[serde(default = "d_intrinsics")]
    pub intrinsics_side: CameraIntrinsics,
    #[serde(default = "d_speed")]
    pub forward_speed_mps: f64,
    /// Height of both agents above the ground plane.
    #[serde(default = "d_height")]
    pub flight_height_m: f64,
    /// Distance of the backdrop wall beyond the end of the flight.
    #[serde(default = "d_backdrop")]
    pub backdrop_depth_m: f64,
    /// Amplitude of the follower's relative wobble around the nominal formation.
    #[serde(default = "d_wobble_amp")]
    pub wobble_amplitude_m: f64,
    #[serde(default = "d_wobble_period")]
    pub wobble_period_s: f64,
    /// Leader attitude `[roll, pitch, yaw]`, degrees, held constant.
    #[serde(default)]
    pub leader_attitude_deg: [f64; 3],
    #[serde(default)]
    pub follower_attitude_deg: [f64; 3],
    #[serde(default = "d_marker_size")]
    pub marker_square_m: f64,
    /// Random-walk drift of the leader odometry, m/sqrt(s).
    #[serde(default)]
    pub odometry_drift: f64,
    /// Exposure offset of the follower's front camera relative to the leader's.
    #[serde(default = "d_time_offset")]
    pub follower_time_offset_s: f64,
    #[serde(default = "d_time_jitter")]
    pub timestamp_jitter_s: f64,
    /// Exponential warp applied to true depth to emulate a monocular network.
    #[serde(default = "d_warp")]
    pub mono_warp: ExpFitParams,
    #[serde(default = "d_mono_sigma")]
    pub mono_noise_sigma: f64,
    #[serde(default = "d_covisible")]
    pub covisible_landmarks: usize,
    #[serde(default = "d_vio")]
    pub vio_landmarks: usize,
    /// Relative noise of near-field odometry landmarks (fraction of depth).
    #[serde(default = "d_vio_sigma")]
    pub vio_landmark_sigma: f64,
}

impl ScenarioConfig {
    /// Default scenario for a given seed and baseline.
    pub fn with_seed(rng_seed: u64, baseline_m: f64) -> Self {
        Self {
            rng_seed,
            baseline_m,
            forward_span_m: 10.0,
            keyframe_step_m: 0.1,
            plane_depth_m: d_plane_depth(),
            plane_size_m: d_plane_size(),
            plane_spacing_m: d_plane_spacing(),
            pixel_noise_sigma: d_pixel_sigma(),
            uwb_noise_sigma: d_uwb_sigma(),
            accel_noise_sigma: d_accel_sigma(),
            attitude_noise_deg: d_attitude_sigma_deg(),
            frame_rate_hz: d_frame_rate(),
            imu_rate_hz: d_imu_rate(),
            intrinsics_front: d_intrinsics(),
            intrinsics_side: d_intrinsics(),
            forward_speed_mps: d_speed(),
            flight_height_m: d_height(),
            backdrop_depth_m: d_backdrop(),
            wobble_amplitude_m: d_wobble_amp(),
            wobble_period_s: d_wobble_period(),
            leader_attitude_deg: [0.0; 3],
            follower_attitude_deg: [0.0; 3],
            marker_square_m: d_marker_size(),
            odometry_drift: 0.0,
            follower_time_offset_s: d_time_offset(),
            timestamp_jitter_s: d_time_jitter(),
            mono_warp: d_warp(),
            mono_noise_sigma: d_mono_sigma(),
            covisible_landmarks: d_covisible(),
            vio_landmarks: d_vio(),
            vio_landmark_sigma: d_vio_sigma(),
        }
    }

    /// Same scenario with every noise source switched off.
    pub fn noiseless(mut self) -> Self {
        self.pixel_noise_sigma = 0.0;
        self.uwb_noise_sigma = 0.0;
        self.accel_noise_sigma = 0.0;
        self.attitude_noise_deg = 0.0;
        self.odometry_drift = 0.0;
        self.timestamp_jitter_s = 0.0;
        self.follower_time_offset_s = 0.0;
        self.mono_noise_sigma = 0.0;
        self.vio_landmark_sigma = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("baseline_m", self.baseline_m),
            ("forward_span_m", self.forward_span_m),
            ("keyframe_step_m", self.keyframe_step_m),
            ("plane_depth_m", self.plane_depth_m),
            ("plane_size_m", self.plane_size_m),
            ("plane_spacing_m", self.plane_spacing_m),
            ("frame_rate_hz", self.frame_rate_hz),
            ("imu_rate_hz", self.imu_rate_hz),
            ("forward_speed_mps", self.forward_speed_mps),
            ("flight_height_m", self.flight_height_m),
            ("backdrop_depth_m", self.backdrop_depth_m),
            ("marker_square_m", self.marker_square_m),
            ("wobble_period_s", self.wobble_period_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("pixel_noise_sigma", self.pixel_noise_sigma),
            ("uwb_noise_sigma", self.uwb_noise_sigma),
            ("accel_noise_sigma", self.accel_noise_sigma),
            ("attitude_noise_deg", self.attitude_noise_deg),
            ("odometry_drift", self.odometry_drift),
            ("timestamp_jitter_s", self.timestamp_jitter_s),
            ("mono_noise_sigma", self.mono_noise_sigma),
            ("wobble_amplitude_m", self.wobble_amplitude_m),
            ("vio_landmark_sigma", self.vio_landmark_sigma),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.keyframe_step_m > self.forward_span_m {
            return Err(SimError::InvalidConfig("keyframe_step_m exceeds forward_span_m".into()));
        }
        if self.plane_size_m < self.plane_spacing_m {
            return Err(SimError::InvalidConfig("plane_size_m must be at least plane_spacing_m".into()));
        }
        if self.timestamp_jitter_s * 6.0 >= 1.0 / self.frame_rate_hz {
            return Err(SimError::InvalidConfig("timestamp_jitter_s too large for frame rate".into()));
        }
        self.intrinsics_front
            .validate()
            .map_err(|e| SimError::InvalidConfig(format!("intrinsics_front: {e}")))?;
        self.intrinsics_side
            .validate()
            .map_err(|e| SimError::InvalidConfig(format!("intrinsics_side: {e}")))?;
        self.mono_warp
            .validate_warp()
            .map_err(|e| SimError::InvalidConfig(format!("mono_warp: {e}")))?;
        Ok(())
    }

    pub fn leader_attitude(&self) -> Rotation {
        let [r, p, y] = self.leader_attitude_deg.map(f64::to_radians);
        Rotation::from_euler(r, p, y)
    }

    pub fn follower_attitude(&self) -> Rotation {
        let [r, p, y] = self.follower_attitude_deg.map(f64::to_radians);
        Rotation::from_euler(r, p, y)
    }

    pub fn duration_s(&self) -> f64 {
        self.forward_span_m / self.forward_speed_mps
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s() * self.frame_rate_hz + 1e-9).floor() as usize + 1
    }

    pub fn keyframe_count(&self) -> usize {
        (self.forward_span_m / self.keyframe_step_m + 1e-9).floor() as usize + 1
    }
}

/// Five coplanar markers in a body frame: four corners of a square and the centre.
/// The plane is the body x-z plane (a side panel); the centre sits at the side
/// camera's optical centre so it can stand in for it.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerLayout {
    pub points: [Vector3<f64>; 5],
    pub center: usize,
}

impl MarkerLayout {
    pub fn square(side: f64) -> Self {
        let h = side / 2.0;
        Self {
            points: [
                Vector3::new(h, 0.0, h),
                Vector3::new(-h, 0.0, h),
                Vector3::new(-h, 0.0, -h),
                Vector3::new(h, 0.0, -h),
                Vector3::zeros(),
            ],
            center: 4,
        }
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }
}

/// Grid of `(floor(size/spacing)+1)^2` landmarks on the fronto-parallel plane `z = depth`,
/// centred on the optical axis of the anchor camera.
pub fn gen_landmark_plane(depth: f64, size: f64, spacing: f64) -> Vec<Vector3<f64>> {
    assert!(spacing > 0.0 && size >= spacing, "spacing must be positive and not exceed size");
    let n = (size / spacing + 1e-9).floor() as usize + 1;
    let half = (n - 1) as f64 * spacing / 2.0;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(Vector3::new(i as f64 * spacing - half, j as f64 * spacing - half, depth));
        }
    }
    out
}

/// Exact inverse of the exponential depth model: `d(z) = c + ln((z + offset) / a) / b`,
/// plus optional i.i.d. Gaussian noise. NaN depths stay NaN.
pub fn synth_monodepth(
    true_depth: &DepthImage,
    warp: &ExpFitParams,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DepthImage, SimError> {
    warp.validate_warp().map_err(SimError::InvalidWarp)?;
    let normal = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let mut data = Vec::with_capacity(true_depth.data.len());
    for &z in &true_depth.data {
        if z.is_nan() {
            data.push(f64::NAN);
            continue;
        }
        let d = warp
            .inverse(z)
            .ok_or_else(|| SimError::InvalidWarp(format!("depth {z} + offset {} is not positive", warp.offset)))?;
        let n = if noise_sigma > 0.0 { normal.sample(rng) } else { 0.0 };
        data.push(d + n);
    }
    Ok(DepthImage { width: true_depth.width, height: true_depth.height, data })
}

/// Projects every marker of `observed` into the side camera of `observer`, adding pixel noise.
/// Markers behind the camera or outside the image are returned flagged invalid.
pub fn observe_markers(
    observer: &Pose,
    observed: &Pose,
    camera_mount: &Rotation,
    layout: &MarkerLayout,
    k: &CameraIntrinsics,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<PixelObs> {
    let world_from_cam = observer.compose(&Pose::new(*camera_mount, Vector3::zeros()));
    let cam_from_world = world_from_cam.inverse();
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    layout
        .points
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let p_cam = cam_from_world.transform_point(&observed.transform_point(m));
            let (du, dv) = if sigma > 0.0 { (normal.sample(rng), normal.sample(rng)) } else { (0.0, 0.0) };
            match project(&p_cam, k) {
                Ok(obs) if obs.valid => {
                    let mut o = PixelObs::new(obs.u + du, obs.v + dv).with_id(i as u64);
                    o.valid = k.contains(o.u, o.v);
                    o
                }
                _ => PixelObs::invalid().with_id(i as u64),
            }
        })
        .collect()
}

/// Piecewise-linear world acceleration on a uniform grid, integrated exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    acc: Vec<Vector3<f64>>,
    vel: Vec<Vector3<f64>>,
    pos: Vec<Vector3<f64>>,
    pub attitude: Rotation,
}

impl Trajectory {
    pub fn new(dt: f64, acc: Vec<Vector3<f64>>, p0: Vector3<f64>, v0: Vector3<f64>, attitude: Rotation) -> Self {
        let mut vel = Vec::with_capacity(acc.len());
        let mut pos = Vec::with_capacity(acc.len());
        vel.push(v0);
        pos.push(p0);
        for j in 0..acc.len() - 1 {
            let (a0, a1) = (acc[j], acc[j + 1]);
            let (v, p) = (vel[j], pos[j]);
            vel.push(v + (a0 + a1) * (dt / 2.0));
            pos.push(p + v * dt + (a0 * 2.0 + a1) * (dt * dt / 6.0));
        }
        Self { dt, acc, vel, pos, attitude }
    }

    /// `(position, velocity, acceleration)` in the world frame at time `t`.
    pub fn state(&self, t: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let last = self.acc.len() - 1;
        let j = ((t / self.dt).floor().max(0.0) as usize).min(last - 1);
        let tau = t - j as f64 * self.dt;
        let a0 = self.acc[j];
        let slope = (self.acc[j + 1] - a0) / self.dt;
        let a = a0 + slope * tau;
        let v = self.vel[j] + a0 * tau + slope * (tau * tau / 2.0);
        let p = self.pos[j] + self.vel[j] * tau + a0 * (tau * tau / 2.0) + slope * (tau * tau * tau / 6.0);
        (p, v, a)
    }

    pub fn pose(&self, t: f64) -> Pose {
        Pose::new(self.attitude, self.state(t).0)
    }

    pub fn grid_dt(&self) -> f64 {
        self.dt
    }

    pub fn grid_len(&self) -> usize {
        self.acc.len()
    }

    pub fn grid_acc(&self, j: usize) -> Vector3<f64> {
        self.acc[j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub time: f64,
    /// Gravity-compensated, bias-free body acceleration.
    pub accel: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentTruth {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
}

/// Everything recorded at one leader camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub time: f64,
    pub leader: AgentTruth,
    pub follower: AgentTruth,
    /// Follower position in the leader body frame.
    pub rel_position: Vector3<f64>,
    pub rel_velocity: Vector3<f64>,
    /// Follower orientation relative to the leader body frame.
    pub rel_rotation: Rotation,
    /// Follower markers seen by the leader's side camera.
    pub leader_marker_obs: Vec<PixelObs>,
    /// Leader markers seen by the follower's side camera.
    pub follower_marker_obs: Vec<PixelObs>,
    pub uwb_range: f64,
    pub leader_roll_pitch: (f64, f64),
    pub follower_roll_pitch: (f64, f64),
    /// Leader odometry: ground truth plus optional random-walk drift.
    pub leader_odometry: Pose,
    /// Exposure time of the follower's front camera for this frame.
    pub follower_front_time: f64,
    pub leader_front: Vec<PixelObs>,
    pub follower_front: Vec<PixelObs>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframeRecord {
    pub index: usize,
    pub time: f64,
    pub leader: Pose,
    pub follower: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneLandmark {
    pub id: u64,
    pub position: Vector3<f64>,
    pub source: LandmarkSource,
}

/// Ground plane at world `z = 0` plus a backdrop wall facing the flight direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappingScene {
    pub wall_x: f64,
}

impl MappingScene {
    /// Distance along `dir` from `origin` to the first surface, if any.
    pub fn ray_cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let mut best = f64::INFINITY;
        if dir.z < 0.0 {
            best = best.min(-origin.z / dir.z);
        }
        if dir.x > 0.0 {
            best = best.min((self.wall_x - origin.x) / dir.x);
        }
        (best.is_finite() && best > 0.0).then_some(best)
    }

    /// True depth image of a front camera with body pose `body` (camera at the body origin).
    pub fn render_depth(&self, body: &Pose, k: &CameraIntrinsics) -> DepthImage {
        let world_r_cam = body.rotation.compose(&mount::front_camera());
        let mut data = Vec::with_capacity((k.width * k.height) as usize);
        for v in 0..k.height {
            for u in 0..k.width {
                let ray = k.normalized(u as f64 + 0.5, v as f64 + 0.5);
                // ray has unit z, so the hit parameter is the camera-frame depth
                let dir = world_r_cam.rotate(&ray);
                data.push(self.ray_cast(&body.translation, &dir).unwrap_or(f64::NAN));
            }
        }
        DepthImage { width: k.width, height: k.height, data }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    pub config: ScenarioConfig,
    pub layout: MarkerLayout,
    pub frames: Vec<FrameRecord>,
    pub leader_imu: Vec<ImuSample>,
    pub follower_imu: Vec<ImuSample>,
    pub keyframes: Vec<KeyframeRecord>,
    pub landmarks: Vec<SceneLandmark>,
    pub scene: MappingScene,
    leader_traj: Trajectory,
    follower_traj: Trajectory,
}

impl SensorStream {
    pub fn leader_trajectory(&self) -> &Trajectory {
        &self.leader_traj
    }

    pub fn follower_trajectory(&self) -> &Trajectory {
        &self.follower_traj
    }
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    }
}

fn gaussian3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    Vector3::new(gaussian(rng, sigma), gaussian(rng, sigma), gaussian(rng, sigma))
}

fn project_front(body: &Pose, k: &CameraIntrinsics, world: &Vector3<f64>) -> Option<Vector2<f64>> {
    let cam = body.compose(&Pose::new(mount::front_camera(), Vector3::zeros())).inverse();
    let p = cam.transform_point(world);
    project(&p, k).ok().filter(|o| o.valid).map(|o| o.pixel())
}

/// Two agents flying forward in parallel, `baseline_m` apart laterally (follower on the
/// leader's right), with a smooth relative wobble. Forward speed is constant so keyframes
/// fall every `keyframe_step_m` of travel.
pub fn gen_parallel_flight(cfg: &ScenarioConfig) -> Result<SensorStream, SimError> {
    cfg.validate()?;
    let dt_imu = 1.0 / cfg.imu_rate_hz;
    let duration = cfg.duration_s();
    let n_imu = (duration / dt_imu).ceil() as usize + 3;

    let omega = 2.0 * std::f64::consts::PI / cfg.wobble_period_s;
    let amp = cfg.wobble_amplitude_m;
    // relative wobble p(t) = amp * (0.3 sin(0.7wt), sin(wt), 0.4 sin(1.3wt)); sampled acceleration
    let wobble_acc = |t: f64| {
        Vector3::new(
            -0.3 * amp * (0.7 * omega).powi(2) * (0.7 * omega * t).sin(),
            -amp * omega * omega * (omega * t).sin(),
            -0.4 * amp * (1.3 * omega).powi(2) * (1.3 * omega * t).sin(),
        )
    };
    let wobble_vel0 = Vector3::new(0.3 * amp * 0.7 * omega, amp * omega, 0.4 * amp * 1.3 * omega);
    let leader_acc: Vec<Vector3<f64>> = (0..n_imu).map(|_| Vector3::zeros()).collect();
    let follower_acc: Vec<Vector3<f64>> = (0..n_imu).map(|j| wobble_acc(j as f64 * dt_imu)).collect();
    let v_fwd = Vector3::new(cfg.forward_speed_mps, 0.0, 0.0);
    let leader_traj = Trajectory::new(
        dt_imu,
        leader_acc,
        Vector3::new(0.0, 0.0, cfg.flight_height_m),
        v_fwd,
        cfg.leader_attitude(),
    );
    let follower_traj = Trajectory::new(
        dt_imu,
        follower_acc,
        Vector3::new(0.0, -cfg.baseline_m, cfg.flight_height_m),
        v_fwd + wobble_vel0,
        cfg.follower_attitude(),
    );

    let mut imu_rng = rng_for(cfg.rng_seed, "sim/imu");
    let imu_len = ((duration + 1.0 / cfg.frame_rate_hz) / dt_imu).ceil() as usize + 1;
    let imu_len = imu_len.min(n_imu);
    let sample_imu = |traj: &Trajectory, rng: &mut ChaCha8Rng| -> Vec<ImuSample> {
        (0..imu_len)
            .map(|j| {
                let t = j as f64 * dt_imu;
                let a_body = traj.attitude.inverse().rotate(&traj.grid_acc(j));
                ImuSample { time: t, accel: a_body + gaussian3(rng, cfg.accel_noise_sigma) }
            })
            .collect()
    };
    let leader_imu = sample_imu(&leader_traj, &mut imu_rng);
    let follower_imu = sample_imu(&follower_traj, &mut imu_rng);

    let layout = MarkerLayout::square(cfg.marker_square_m);
    let scene = MappingScene { wall_x: cfg.forward_span_m + cfg.backdrop_depth_m };

    let mut marker_rng = rng_for(cfg.rng_seed, "sim/markers");
    let mut uwb_rng = rng_for(cfg.rng_seed, "sim/uwb");
    let mut att_rng = rng_for(cfg.rng_seed, "sim/attitude");
    let mut odo_rng = rng_for(cfg.rng_seed, "sim/odometry");
    let mut time_rng = rng_for(cfg.rng_seed, "sim/time");
    let mut front_rng = rng_for(cfg.rng_seed, "sim/front");
    let mut lm_rng = rng_for(cfg.rng_seed, "sim/landmarks");

    let n_frames = cfg.frame_count();
    let frame_dt = 1.0 / cfg.frame_rate_hz;
    let att_sigma = cfg.attitude_noise_deg.to_radians();

    // landmark field, sampled from the leader's view at the last frame
    let t_end = (n_frames - 1) as f64 * frame_dt;
    let landmarks = sample_scene_landmarks(cfg, &scene, &leader_traj.pose(t_end), &follower_traj.pose(t_end), &mut lm_rng);

    let mut drift = Vector3::zeros();
    let mut frames = Vec::with_capacity(n_frames);
    for index in 0..n_frames {
        let time = index as f64 * frame_dt;
        let (p0, v0, _) = leader_traj.state(time);
        let (p1, v1, _) = follower_traj.state(time);
        let pose0 = Pose::new(leader_traj.attitude, p0);
        let pose1 = Pose::new(follower_traj.attitude, p1);
        let r0_inv = leader_traj.attitude.inverse();
        let leader_marker_obs = observe_markers(
            &pose0,
            &pose1,
            &mount::leader_side_camera(),
            &layout,
            &cfg.intrinsics_side,
            cfg.pixel_noise_sigma,
            &mut marker_rng,
        );
        let follower_marker_obs = observe_markers(
            &pose1,
            &pose0,
            &mount::follower_side_camera(),
            &layout,
            &cfg.intrinsics_side,
            cfg.pixel_noise_sigma,
            &mut marker_rng,
        );
        let uwb_range = (p1 - p0).norm() + gaussian(&mut uwb_rng, cfg.uwb_noise_sigma);
        let rp = |r: &Rotation, rng: &mut ChaCha8Rng| {
            let (roll, pitch, _) = r.euler();
            (roll + gaussian(rng, att_sigma), pitch + gaussian(rng, att_sigma))
        };
        let leader_roll_pitch = rp(&leader_traj.attitude, &mut att_rng);
        let follower_roll_pitch = rp(&follower_traj.attitude, &mut att_rng);
        if index > 0 && cfg.odometry_drift > 0.0 {
            drift += gaussian3(&mut odo_rng, cfg.odometry_drift * frame_dt.sqrt());
        }
        let follower_front_time = time + cfg.follower_time_offset_s + gaussian(&mut time_rng, cfg.timestamp_jitter_s);
        let follower_front_pose = follower_traj.pose(follower_front_time.max(0.0));
        let front_obs = |body: &Pose, t: f64, rng: &mut ChaCha8Rng| -> Vec<PixelObs> {
            landmarks
                .iter()
                .filter(|l| l.source == LandmarkSource::Covisible)
                .filter_map(|l| {
                    project_front(body, &cfg.intrinsics_front, &l.position).map(|px| {
                        let (du, dv) = (gaussian(rng, cfg.pixel_noise_sigma), gaussian(rng, cfg.pixel_noise_sigma));
                        PixelObs::new(px.x + du, px.y + dv).at(t).with_id(l.id)
                    })
                })
                .collect()
        };
        let leader_front = front_obs(&pose0, time, &mut front_rng);
        let follower_front = front_obs(&follower_front_pose, follower_front_time, &mut front_rng);

        frames.push(FrameRecord {
            index,
            time,
            leader: AgentTruth { pose: pose0, velocity: v0 },
            follower: AgentTruth { pose: pose1, velocity: v1 },
            rel_position: r0_inv.rotate(&(p1 - p0)),
            rel_velocity: r0_inv.rotate(&(v1 - v0)),
            rel_rotation: r0_inv.compose(&follower_traj.attitude),
            leader_marker_obs,
            follower_marker_obs,
            uwb_range,
            leader_roll_pitch,
            follower_roll_pitch,
            leader_odometry: Pose::new(pose0.rotation, p0 + drift),
            follower_front_time,
            leader_front,
            follower_front,
        });
    }

    let keyframes = (0..cfg.keyframe_count())
        .map(|index| {
            let time = index as f64 * cfg.keyframe_step_m / cfg.forward_speed_mps;
            KeyframeRecord { index, time, leader: leader_traj.pose(time), follower: follower_traj.pose(time) }
        })
        .collect();

    Ok(SensorStream {
        config: cfg.clone(),
        layout,
        frames,
        leader_imu,
        follower_imu,
        keyframes,
        landmarks,
        scene,
        leader_traj,
        follower_traj,
    })
}

/// Co-visible landmarks are ray cast through random pixels of the leader's front camera
/// and kept when the follower sees them too; near-field odometry landmarks lie on the
/// ground within 10 m of the leader.
fn sample_scene_landmarks(
    cfg: &ScenarioConfig,
    scene: &MappingScene,
    leader: &Pose,
    follower: &Pose,
    rng: &mut ChaCha8Rng,
) -> Vec<SceneLandmark> {
    let k = &cfg.intrinsics_front;
    let world_r_cam = leader.rotation.compose(&mount::front_camera());
    let mut out = Vec::new();
    let mut id = 0u64;
    let mut attempts = 0;
    while out.len() < cfg.covisible_landmarks && attempts < cfg.covisible_landmarks * 200 {
        attempts += 1;
        let u = rng.random_range(8.0..k.width as f64 - 8.0);
        let v = rng.random_range(8.0..k.height as f64 - 8.0);
        let dir = world_r_cam.rotate(&k.normalized(u, v));
        let Some(depth) = scene.ray_cast(&leader.translation, &dir) else { continue };
        let world = leader.translation + dir * depth;
        if depth < 4.0 || project_front(follower, k, &world).is_none() {
            continue;
        }
        out.push(SceneLandmark { id, position: world, source: LandmarkSource::Covisible });
        id += 1;
    }
    let mut n_vio = 0;
    attempts = 0;
    while n_vio < cfg.vio_landmarks && attempts < cfg.vio_landmarks * 200 {
        attempts += 1;
        let u = rng.random_range(0.0..k.width as f64);
        let v = rng.random_range(0.0..k.height as f64);
        let dir = world_r_cam.rotate(&k.normalized(u, v));
        let Some(depth) = scene.ray_cast(&leader.translation, &dir) else { continue };
        if depth > 10.0 {
            continue;
        }
        out.push(SceneLandmark { id, position: leader.translation + dir * depth, source: LandmarkSource::SelfVio });
        id += 1;
        n_vio += 1;
    }
    out
}
