//! Relative pose between the leader and follower.
//!
//! Position comes from a sliding-window fusion of mutual marker PnP, relative IMU
//! preintegration and UWB ranging. Orientation is decoupled: roll and pitch are differenced
//! from the two attitude references, yaw comes from the bidirectional view differential
//! of the two centre markers.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Matrix6, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{mount, skew, wrap_angle, CameraIntrinsics, PixelObs, Pose, Rotation};
use crate::lsq::{levenberg_marquardt, LeastSquaresProblem, LmConfig, SolveStatus};
use crate::sim::{ImuSample, MarkerLayout, ScenarioConfig, SensorStream};

pub const WINDOW_SIZE: usize = 10;
pub const LEVEL_THRESHOLD_DEG: f64 = 2.0;
/// Lower bound on every standard deviation used for whitening.
pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelPoseError {
    #[error("need at least {needed} valid observations, got {got}")]
    InsufficientObservations { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("missing IMU data: {0}")]
    MissingData(String),
    #[error("window is unobservable without a visual measurement")]
    Unobservable,
    #[error("insufficient input: {0}")]
    InsufficientInput(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
}

// ---------------------------------------------------------------------------------------
// Planar PnP

#[derive(Debug, Clone, PartialEq)]
pub struct PnpSolution {
    /// Camera from marker frame.
    pub pose: Pose,
    /// Reprojection RMS, pixels.
    pub rms: f64,
    pub iterations: usize,
    /// First-order covariance of the translation for unit pixel noise, camera frame.
    pub translation_cov_unit: Matrix3<f64>,
}

fn projection_jacobian(pc: &Vector3<f64>, k: &CameraIntrinsics) -> Matrix2x3<f64> {
    let iz = 1.0 / pc.z;
    Matrix2x3::new(k.fx * iz, 0.0, -k.fx * pc.x * iz * iz, 0.0, k.fy * iz, -k.fy * pc.y * iz * iz)
}

fn pnp_residuals(pose: &Pose, pts: &[(Vector3<f64>, PixelObs)], k: &CameraIntrinsics) -> Option<DVector<f64>> {
    let mut r = DVector::zeros(2 * pts.len());
    for (i, (x, o)) in pts.iter().enumerate() {
        let pc = pose.transform_point(x);
        if pc.z <= 1e-9 {
            return None;
        }
        let px = k.project_raw(&pc);
        r[2 * i] = px.x - o.u;
        r[2 * i + 1] = px.y - o.v;
    }
    Some(r)
}

/// Jacobian with respect to a left rotation increment and a translation increment.
fn pnp_jacobian(pose: &Pose, pts: &[(Vector3<f64>, PixelObs)], k: &CameraIntrinsics) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * pts.len(), 6);
    for (i, (x, _)) in pts.iter().enumerate() {
        let rx = pose.rotation.rotate(x);
        let dp = projection_jacobian(&(rx + pose.translation), k);
        j.fixed_view_mut::<2, 3>(2 * i, 0).copy_from(&(dp * -skew(&rx)));
        j.fixed_view_mut::<2, 3>(2 * i, 3).copy_from(&dp);
    }
    j
}

fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

/// Marker-frame pose from at least four coplanar correspondences (`obs[i]` pairs with
/// `layout.points[i]`): planar homography initialisation, then Gauss-Newton on reprojection error.
pub fn pnp_planar(obs: &[PixelObs], layout: &MarkerLayout, k: &CameraIntrinsics) -> Result<PnpSolution, RelPoseError> {
    let pts: Vec<(Vector3<f64>, PixelObs)> =
        layout.points.iter().zip(obs).filter(|(_, o)| o.valid).map(|(x, o)| (*x, *o)).collect();
    if pts.len() < 4 {
        return Err(RelPoseError::InsufficientObservations { needed: 4, got: pts.len() });
    }
    let n = pts.len() as f64;
    let c = pts.iter().map(|(x, _)| x).sum::<Vector3<f64>>() / n;
    let scatter = pts.iter().fold(Matrix3::zeros(), |acc, (x, _)| acc + (x - c) * (x - c).transpose());
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let spread = |i: usize| eig.eigenvalues[order[i]].max(0.0).sqrt();
    if spread(1) <= 1e-9 * spread(0) {
        return Err(RelPoseError::DegenerateConfiguration("collinear marker points".into()));
    }
    if spread(2) > 1e-6 * spread(0) {
        return Err(RelPoseError::DegenerateConfiguration("marker points are not coplanar".into()));
    }
    let e1: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    let e2: Vector3<f64> = eig.eigenvectors.column(order[1]).into_owned();
    let basis = Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]);

    // homography from scaled plane coordinates to normalised image coordinates
    let plane: Vec<(f64, f64)> = pts.iter().map(|(x, _)| (e1.dot(&(x - c)), e2.dot(&(x - c)))).collect();
    let sp = (plane.iter().map(|(a, b)| a * a + b * b).sum::<f64>() / n).sqrt();
    let img: Vec<Vector3<f64>> = pts.iter().map(|(_, o)| k.normalized(o.u, o.v)).collect();
    let mut m = DMatrix::zeros(2 * pts.len(), 9);
    for (i, ((a, b), xi)) in plane.iter().zip(&img).enumerate() {
        let xp = [a / sp, b / sp, 1.0];
        for q in 0..3 {
            m[(2 * i, 3 + q)] = -xp[q];
            m[(2 * i, 6 + q)] = xi.y * xp[q];
            m[(2 * i + 1, q)] = xp[q];
            m[(2 * i + 1, 6 + q)] = -xi.x * xp[q];
        }
    }
    let eig = SymmetricEigen::new(m.transpose() * &m);
    let imin = eig.eigenvalues.imin();
    let h = eig.eigenvectors.column(imin);
    let hm = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let (h1, h2, h3) = (hm.column(0) / sp, hm.column(1) / sp, hm.column(2).into_owned());
    let mut lambda = 0.5 * (h1.norm() + h2.norm());
    if h3.z < 0.0 {
        lambda = -lambda;
    }
    let (r1, r2, t) = (h1 / lambda, h2 / lambda, h3 / lambda);
    let r_plane = orthonormalize(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]));
    let r_init = r_plane * basis.transpose();
    let mut pose = Pose::new(Rotation::from_matrix(&r_init), t - r_init * c);

    let mut r = pnp_residuals(&pose, &pts, k)
        .ok_or_else(|| RelPoseError::DegenerateConfiguration("initial pose places markers behind the camera".into()))?;
    let mut cost = r.norm_squared();
    let mut iterations = 0;
    for _ in 0..30 {
        iterations += 1;
        let j = pnp_jacobian(&pose, &pts, k);
        let jtj = j.transpose() * &j;
        let Some(step) = jtj.clone().cholesky().map(|ch| -ch.solve(&(j.transpose() * &r))) else { break };
        if step.norm() < 1e-14 {
            break;
        }
        let mut accepted = false;
        let mut scale = 1.0;
        for _ in 0..12 {
            let dth = Vector3::new(step[0], step[1], step[2]) * scale;
            let dt = Vector3::new(step[3], step[4], step[5]) * scale;
            let cand = Pose::new(Rotation::from_scaled_axis(dth).compose(&pose.rotation), pose.translation + dt);
            if let Some(rc) = pnp_residuals(&cand, &pts, k) {
                let cc = rc.norm_squared();
                if cc < cost {
                    pose = cand;
                    r = rc;
                    cost = cc;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let j = pnp_jacobian(&pose, &pts, k);
    let info = j.transpose() * &j;
    let cov = info
        .try_inverse()
        .ok_or_else(|| RelPoseError::DegenerateConfiguration("singular PnP information matrix".into()))?;
    Ok(PnpSolution {
        pose,
        rms: (cost / pts.len() as f64).sqrt(),
        iterations,
        translation_cov_unit: cov.fixed_view::<3, 3>(3, 3).into_owned(),
    })
}

// ---------------------------------------------------------------------------------------
// Residuals

/// Mutual visual residual: `0.5 (p01_from_0 - p) + 0.5 (p01_from_1 - p)`; both
/// measurements already expressed in the leader frame.
pub fn visual_residual(pnp_01: &Vector3<f64>, pnp_10_in_0: &Vector3<f64>, p01: &Vector3<f64>) -> Vector3<f64> {
    0.5 * (pnp_01 - p01) + 0.5 * (pnp_10_in_0 - p01)
}

/// `d - |p01|`.
pub fn uwb_residual(d: f64, p01: &Vector3<f64>) -> f64 {
    d - p01.norm()
}

/// Relative motion accumulated over one interval, independent of the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuDelta {
    pub dt: f64,
    /// Position increment from rest.
    pub alpha: Vector3<f64>,
    /// Velocity increment.
    pub beta: Vector3<f64>,
}

impl ImuDelta {
    pub fn predict(&self, p: &Vector3<f64>, v: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        (p + v * self.dt + self.alpha, v + self.beta)
    }
}

/// A time-sorted accelerometer stream with its nominal sampling period.
#[derive(Debug, Clone, Copy)]
pub struct ImuSeries<'a> {
    pub samples: &'a [ImuSample],
    pub period: f64,
}

impl<'a> ImuSeries<'a> {
    /// Nominal period is the median sample spacing.
    pub fn new(samples: &'a [ImuSample]) -> Self {
        let mut d: Vec<f64> = samples.windows(2).map(|w| w[1].time - w[0].time).collect();
        d.sort_by(f64::total_cmp);
        let period = d.get(d.len() / 2).copied().unwrap_or(f64::INFINITY);
        Self { samples, period }
    }

    fn check_coverage(&self, t0: f64, t1: f64) -> Result<(), RelPoseError> {
        let eps = 1e-9;
        let (first, last) = match (self.samples.first(), self.samples.last()) {
            (Some(f), Some(l)) if self.samples.len() >= 2 => (f.time, l.time),
            _ => return Err(RelPoseError::MissingData("fewer than two samples".into())),
        };
        if first > t0 + eps || last < t1 - eps {
            return Err(RelPoseError::MissingData(format!("series [{first}, {last}] does not cover [{t0}, {t1}]")));
        }
        let lo = self.samples.partition_point(|s| s.time <= t0).saturating_sub(1);
        let hi = self.samples.partition_point(|s| s.time < t1).min(self.samples.len() - 1);
        for w in self.samples[lo..=hi].windows(2) {
            if w[1].time - w[0].time > 2.0 * self.period + eps {
                return Err(RelPoseError::MissingData(format!("gap of {:.4} s at t = {:.4}", w[1].time - w[0].time, w[0].time)));
            }
        }
        Ok(())
    }

    /// Linear interpolation; `t` must be covered.
    fn at(&self, t: f64) -> Vector3<f64> {
        let s = self.samples;
        let i = s.partition_point(|x| x.time <= t);
        if i == 0 {
            return s[0].accel;
        }
        if i >= s.len() {
            return s[s.len() - 1].accel;
        }
        let (a, b) = (&s[i - 1], &s[i]);
        let w = (t - a.time) / (b.time - a.time);
        a.accel + (b.accel - a.accel) * w
    }
}

/// Exact double integration of the linearly interpolated relative acceleration
/// `R01 a1 - a0` over `[t0, t1]`, with `R01` held constant.
pub fn preintegrate_rel(leader: &ImuSeries, follower: &ImuSeries, t0: f64, t1: f64, r01: &Rotation) -> Result<ImuDelta, RelPoseError> {
    if !(t1 > t0) {
        return Err(RelPoseError::InvalidWindow(format!("interval [{t0}, {t1}] is empty")));
    }
    leader.check_coverage(t0, t1)?;
    follower.check_coverage(t0, t1)?;
    let mut knots: Vec<f64> = vec![t0, t1];
    knots.extend(leader.samples.iter().chain(follower.samples).map(|s| s.time).filter(|&t| t > t0 && t < t1));
    knots.sort_by(f64::total_cmp);
    knots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let rel = |t: f64| r01.rotate(&follower.at(t)) - leader.at(t);
    let (mut alpha, mut beta) = (Vector3::zeros(), Vector3::zeros());
    let mut a_prev = rel(knots[0]);
    for w in knots.windows(2) {
        let h = w[1] - w[0];
        let a_next = rel(w[1]);
        alpha += beta * h + (2.0 * a_prev + a_next) * (h * h / 6.0);
        beta += (a_prev + a_next) * (0.5 * h);
        a_prev = a_next;
    }
    Ok(ImuDelta { dt: t1 - t0, alpha, beta })
}

/// Predicted relative position and velocity at `t1` from the state at `t0`.
pub fn imu_integrate_rel(
    leader: &ImuSeries,
    follower: &ImuSeries,
    t0: f64,
    t1: f64,
    r01: &Rotation,
    p01: &Vector3<f64>,
    v01: &Vector3<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>), RelPoseError> {
    Ok(preintegrate_rel(leader, follower, t0, t1, r01)?.predict(p01, v01))
}

// ---------------------------------------------------------------------------------------
// Orientation

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RelOrientation {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl RelOrientation {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll: wrap_angle(roll), pitch: wrap_angle(pitch), yaw: wrap_angle(yaw) }
    }

    pub fn rotation(&self) -> Rotation {
        Rotation::from_euler(self.roll, self.pitch, self.yaw)
    }
}

/// Componentwise `(roll1 - roll0, pitch1 - pitch0)`, wrapped.
pub fn rel_roll_pitch(rp0: (f64, f64), rp1: (f64, f64)) -> (f64, f64) {
    (wrap_angle(rp1.0 - rp0.0), wrap_angle(rp1.1 - rp0.1))
}

/// One agent's view of the other's centre marker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvdView {
    pub center: PixelObs,
    pub intrinsics: CameraIntrinsics,
    /// Observer's own roll and pitch.
    pub roll_pitch: (f64, f64),
    /// Centre marker in the observer's camera frame, e.g. from PnP.
    pub marker_cam: Option<Vector3<f64>>,
    /// Body-from-camera mounting of the observing camera.
    pub mount: Rotation,
}

impl BvdView {
    fn is_level(&self, threshold: f64) -> bool {
        self.roll_pitch.0.abs() <= threshold && self.roll_pitch.1.abs() <= threshold
    }

    fn view_angle(&self, threshold: f64) -> Result<f64, RelPoseError> {
        if self.is_level(threshold) {
            return Ok(((self.center.u - self.intrinsics.cx) / self.intrinsics.fx).atan());
        }
        let p = self
            .marker_cam
            .ok_or_else(|| RelPoseError::InsufficientInput("tilted observer needs the 3D centre marker".into()))?;
        let tilt = Rotation::rot_y(self.roll_pitch.1).compose(&Rotation::rot_x(self.roll_pitch.0));
        let level = self.mount.inverse().compose(&tilt).compose(&self.mount).rotate(&p);
        if level.z <= 0.0 {
            return Err(RelPoseError::DegenerateConfiguration("levelled marker is behind the camera".into()));
        }
        Ok((level.x / level.z).atan())
    }
}

/// Relative yaw `alpha1 - alpha0` from the two centre-marker view angles. Observers tilted
/// beyond `level_threshold` (radians) are levelled by rotating the 3D marker into a
/// zero-roll, zero-pitch camera before reprojection.
pub fn bvd_yaw(view0: &BvdView, view1: &BvdView, level_threshold: f64) -> Result<f64, RelPoseError> {
    Ok(wrap_angle(view1.view_angle(level_threshold)? - view0.view_angle(level_threshold)?))
}

// ---------------------------------------------------------------------------------------
// Sliding window

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelWindowState {
    pub times: Vec<f64>,
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
}

impl RelWindowState {
    pub fn new(times: Vec<f64>, positions: Vec<Vector3<f64>>, velocities: Vec<Vector3<f64>>) -> Result<Self, RelPoseError> {
        if times.len() < 2 || positions.len() != times.len() || velocities.len() != times.len() {
            return Err(RelPoseError::InvalidWindow(format!(
                "need M >= 2 consistent entries (times {}, positions {}, velocities {})",
                times.len(),
                positions.len(),
                velocities.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(RelPoseError::InvalidWindow("timestamps not strictly increasing".into()));
        }
        Ok(Self { times, positions, velocities })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(6 * self.len());
        for i in 0..self.len() {
            x.fixed_rows_mut::<3>(6 * i).copy_from(&self.positions[i]);
            x.fixed_rows_mut::<3>(6 * i + 3).copy_from(&self.velocities[i]);
        }
        x
    }

    fn from_vector(times: &[f64], x: &DVector<f64>) -> Self {
        let m = times.len();
        Self {
            times: times.to_vec(),
            positions: (0..m).map(|i| x.fixed_rows::<3>(6 * i).into_owned()).collect(),
            velocities: (0..m).map(|i| x.fixed_rows::<3>(6 * i + 3).into_owned()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisualMeas {
    /// Follower position measured by the leader, leader frame.
    pub pnp_01: Vector3<f64>,
    /// Follower position derived from the follower's measurement, rotated into the leader frame.
    pub pnp_10: Vector3<f64>,
    /// Covariance of the averaged measurement; falls back to [`ResidualWeights::visual`].
    pub covariance: Option<Matrix3<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMeas {
    pub time: f64,
    pub visual: Option<VisualMeas>,
    pub uwb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementBundle {
    pub frames: Vec<FrameMeas>,
    /// `imu[i]` links `frames[i]` to `frames[i + 1]`.
    pub imu: Vec<ImuDelta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualWeights {
    pub visual: Matrix3<f64>,
    pub imu: Matrix6<f64>,
    pub uwb: f64,
}

/// Covariance of a relative IMU delta: white relative acceleration with variance
/// `2 sigma_a^2` per sample of period `imu_period`, integrated over `dt`.
pub fn imu_delta_covariance(accel_sigma: f64, imu_period: f64, dt: f64) -> Matrix6<f64> {
    let q = 2.0 * accel_sigma * accel_sigma * imu_period;
    let mut c = Matrix6::zeros();
    for i in 0..3 {
        c[(i, i)] = q * dt.powi(3) / 3.0;
        c[(i, i + 3)] = q * dt * dt / 2.0;
        c[(i + 3, i)] = q * dt * dt / 2.0;
        c[(i + 3, i + 3)] = q * dt;
    }
    c
}

impl ResidualWeights {
    /// Defaults from the sensor noise levels. The visual covariance follows the
    /// side-camera error model: lateral and vertical `l sigma / f`, along-baseline
    /// `l^2 sqrt(2) sigma / f`, halved for the average of two mutual measurements.
    pub fn from_noise(
        pixel_sigma: f64,
        focal: f64,
        baseline: f64,
        uwb_sigma: f64,
        accel_sigma: f64,
        imu_period: f64,
        frame_dt: f64,
    ) -> Self {
        let lat = baseline * pixel_sigma / focal;
        let depth = baseline * baseline * pixel_sigma * std::f64::consts::SQRT_2 / focal;
        Self {
            visual: Matrix3::from_diagonal(&Vector3::new(lat * lat, depth * depth, lat * lat)) * 0.5,
            imu: imu_delta_covariance(accel_sigma, imu_period, frame_dt),
            uwb: uwb_sigma * uwb_sigma,
        }
    }
}

fn whitener3(cov: &Matrix3<f64>) -> Matrix3<f64> {
    let c = cov + Matrix3::identity() * SIGMA_FLOOR * SIGMA_FLOOR;
    c.cholesky().and_then(|ch| ch.l().try_inverse()).unwrap_or_else(|| Matrix3::identity() / SIGMA_FLOOR)
}

fn whitener6(cov: &Matrix6<f64>) -> Matrix6<f64> {
    let c = cov + Matrix6::identity() * SIGMA_FLOOR * SIGMA_FLOOR;
    c.cholesky().and_then(|ch| ch.l().try_inverse()).unwrap_or_else(|| Matrix6::identity() / SIGMA_FLOOR)
}

/// Whitened window cost over stacked `[p_0, v_0, p_1, v_1, ...]`.
#[derive(Debug, Clone)]
pub struct WindowProblem {
    visual: Vec<Option<(Vector3<f64>, Matrix3<f64>)>>,
    uwb: Vec<Option<(f64, f64)>>,
    imu: Vec<(ImuDelta, Matrix6<f64>)>,
    rows: usize,
}

impl WindowProblem {
    pub fn new(bundle: &MeasurementBundle, weights: &ResidualWeights) -> Result<Self, RelPoseError> {
        let m = bundle.frames.len();
        if m < 2 {
            return Err(RelPoseError::InvalidWindow(format!("window has {m} frames")));
        }
        if bundle.imu.len() + 1 != m {
            return Err(RelPoseError::InvalidWindow(format!("{} IMU links for {m} frames", bundle.imu.len())));
        }
        if bundle.frames.iter().all(|f| f.visual.is_none()) {
            return Err(RelPoseError::Unobservable);
        }
        let default_v = whitener3(&weights.visual);
        let visual: Vec<_> = bundle
            .frames
            .iter()
            .map(|f| f.visual.map(|v| (0.5 * (v.pnp_01 + v.pnp_10), v.covariance.map_or(default_v, |c| whitener3(&c)))))
            .collect();
        let w_uwb = 1.0 / (weights.uwb + SIGMA_FLOOR * SIGMA_FLOOR).sqrt();
        let uwb: Vec<_> = bundle.frames.iter().map(|f| f.uwb.map(|d| (d, w_uwb))).collect();
        let base_dt = bundle.imu[0].dt;
        let imu: Vec<_> = bundle
            .imu
            .iter()
            .map(|d| {
                // rescale the nominal covariance to this interval's length
                let s = d.dt / base_dt;
                let mut c = weights.imu;
                for i in 0..3 {
                    c[(i, i)] *= s.powi(3);
                    c[(i, i + 3)] *= s * s;
                    c[(i + 3, i)] *= s * s;
                    c[(i + 3, i + 3)] *= s;
                }
                (*d, whitener6(&c))
            })
            .collect();
        let rows = 3 * visual.iter().flatten().count() + uwb.iter().flatten().count() + 6 * imu.len();
        Ok(Self { visual, uwb, imu, rows })
    }

    pub fn frames(&self) -> usize {
        self.visual.len()
    }
}

impl LeastSquaresProblem for WindowProblem {
    fn num_params(&self) -> usize {
        6 * self.frames()
    }

    fn residuals(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let mut r = DVector::zeros(self.rows);
        let mut row = 0;
        for i in 0..self.frames() {
            let p: Vector3<f64> = x.fixed_rows::<3>(6 * i).into_owned();
            if let Some((mean, w)) = &self.visual[i] {
                r.fixed_rows_mut::<3>(row).copy_from(&(w * (mean - p)));
                row += 3;
            }
            if let Some((d, w)) = self.uwb[i] {
                if p.norm() < 1e-12 {
                    return None;
                }
                r[row] = w * uwb_residual(d, &p);
                row += 1;
            }
        }
        for (i, (delta, w)) in self.imu.iter().enumerate() {
            let p0: Vector3<f64> = x.fixed_rows::<3>(6 * i).into_owned();
            let v0: Vector3<f64> = x.fixed_rows::<3>(6 * i + 3).into_owned();
            let (pp, vp) = delta.predict(&p0, &v0);
            let mut e = nalgebra::Vector6::zeros();
            e.fixed_rows_mut::<3>(0).copy_from(&(x.fixed_rows::<3>(6 * i + 6) - pp));
            e.fixed_rows_mut::<3>(3).copy_from(&(x.fixed_rows::<3>(6 * i + 9) - vp));
            r.fixed_rows_mut::<6>(row).copy_from(&(w * e));
            row += 6;
        }
        Some(r)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.rows, self.num_params());
        let mut row = 0;
        for i in 0..self.frames() {
            let p: Vector3<f64> = x.fixed_rows::<3>(6 * i).into_owned();
            if let Some((_, w)) = &self.visual[i] {
                j.fixed_view_mut::<3, 3>(row, 6 * i).copy_from(&(-w));
                row += 3;
            }
            if let Some((_, w)) = self.uwb[i] {
                let n = p.norm().max(1e-12);
                j.fixed_view_mut::<1, 3>(row, 6 * i).copy_from(&(-w * p.transpose() / n));
                row += 1;
            }
        }
        for (i, (delta, w)) in self.imu.iter().enumerate() {
            let mut block = DMatrix::zeros(6, 12);
            let eye = Matrix3::identity();
            block.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-eye));
            block.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-eye * delta.dt));
            block.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-eye));
            block.fixed_view_mut::<3, 3>(0, 6).copy_from(&eye);
            block.fixed_view_mut::<3, 3>(3, 9).copy_from(&eye);
            let wd = DMatrix::from_column_slice(6, 6, w.as_slice());
            j.view_mut((row, 6 * i), (6, 12)).copy_from(&(wd * block));
            row += 6;
        }
        j
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSolution {
    pub state: RelWindowState,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub cost_history: Vec<f64>,
}

/// Levenberg-Marquardt minimisation of the whitened visual, UWB and IMU residuals.
pub fn solve_window(
    bundle: &MeasurementBundle,
    weights: &ResidualWeights,
    init: &RelWindowState,
    lm: &LmConfig,
) -> Result<WindowSolution, RelPoseError> {
    let problem = WindowProblem::new(bundle, weights)?;
    if init.len() != problem.frames() {
        return Err(RelPoseError::InvalidWindow(format!("init has {} frames, bundle {}", init.len(), problem.frames())));
    }
    let times: Vec<f64> = bundle.frames.iter().map(|f| f.time).collect();
    let report = levenberg_marquardt(&problem, init.to_vector(), lm)
        .ok_or_else(|| RelPoseError::DegenerateConfiguration("residuals undefined at the initial state".into()))?;
    Ok(WindowSolution {
        state: RelWindowState::from_vector(&times, &report.params),
        initial_cost: report.initial_cost,
        final_cost: report.final_cost,
        iterations: report.iterations,
        status: report.status,
        cost_history: report.cost_history,
    })
}

// ---------------------------------------------------------------------------------------
// Estimator over a sensor stream

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// Visual, inertial and ranging residuals in the sliding window.
    Fusion,
    /// Per-frame average of the two mutual PnP positions.
    VisualOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub mode: EstimatorMode,
    pub window: usize,
    /// Radians.
    pub level_threshold: f64,
    pub lm: LmConfig,
    pub pixel_sigma: f64,
    pub uwb_sigma: f64,
    pub accel_sigma: f64,
    pub side_intrinsics: CameraIntrinsics,
}

impl EstimatorConfig {
    pub fn from_scenario(cfg: &ScenarioConfig, mode: EstimatorMode) -> Self {
        Self {
            mode,
            window: WINDOW_SIZE,
            level_threshold: LEVEL_THRESHOLD_DEG.to_radians(),
            lm: LmConfig::default(),
            pixel_sigma: cfg.pixel_noise_sigma,
            uwb_sigma: cfg.uwb_noise_sigma,
            accel_sigma: cfg.accel_noise_sigma,
            side_intrinsics: cfg.intrinsics_side,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateStatus {
    Converged,
    Diverged,
    Visual,
}

impl EstimateStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::Diverged => "diverged",
            Self::Visual => "visual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelPoseEstimate {
    pub frame: usize,
    pub time: f64,
    /// Follower position in the leader body frame.
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub orientation: RelOrientation,
    pub cost: f64,
    pub iterations: usize,
    pub status: EstimateStatus,
}

/// Per-frame front end shared by both estimator modes.
#[derive(Debug, Clone)]
struct FrontEnd {
    time: f64,
    visual: Option<VisualMeas>,
    orientation: RelOrientation,
    uwb: f64,
}

fn front_end<'a>(stream: &'a SensorStream, cfg: &EstimatorConfig) -> impl Fn(usize, f64) -> FrontEnd + 'a {
    let layout = &stream.layout;
    let k = cfg.side_intrinsics;
    let sigma2 = cfg.pixel_sigma * cfg.pixel_sigma;
    let threshold = cfg.level_threshold;
    move |i: usize, fallback_yaw: f64| {
        let f = &stream.frames[i];
        let pnp01 = pnp_planar(&f.leader_marker_obs, layout, &k).ok();
        let pnp10 = pnp_planar(&f.follower_marker_obs, layout, &k).ok();
        let (roll, pitch) = rel_roll_pitch(f.leader_roll_pitch, f.follower_roll_pitch);
        let center = layout.center;
        let view = |obs: &[PixelObs], pnp: &Option<PnpSolution>, rp: (f64, f64), m: Rotation| {
            obs.get(center).filter(|o| o.valid).map(|o| BvdView {
                center: *o,
                intrinsics: k,
                roll_pitch: rp,
                marker_cam: pnp.as_ref().map(|s| s.pose.transform_point(&layout.points[center])),
                mount: m,
            })
        };
        let v0 = view(&f.leader_marker_obs, &pnp01, f.leader_roll_pitch, mount::leader_side_camera());
        let v1 = view(&f.follower_marker_obs, &pnp10, f.follower_roll_pitch, mount::follower_side_camera());
        let yaw = match (v0, v1) {
            (Some(a), Some(b)) => bvd_yaw(&a, &b, threshold).unwrap_or(fallback_yaw),
            _ => fallback_yaw,
        };
        let orientation = RelOrientation::new(roll, pitch, yaw);
        let r01 = orientation.rotation();
        let ml = mount::leader_side_camera();
        let mf = r01.compose(&mount::follower_side_camera());
        let a = pnp01.as_ref().map(|s| (ml.rotate(&s.pose.translation), rotate_cov(&ml, &s.translation_cov_unit) * sigma2));
        let b = pnp10.as_ref().map(|s| (-mf.rotate(&s.pose.translation), rotate_cov(&mf, &s.translation_cov_unit) * sigma2));
        let visual = match (a, b) {
            (Some((pa, ca)), Some((pb, cb))) => Some(VisualMeas { pnp_01: pa, pnp_10: pb, covariance: Some((ca + cb) / 4.0) }),
            (Some((p, c)), None) | (None, Some((p, c))) => Some(VisualMeas { pnp_01: p, pnp_10: p, covariance: Some(c) }),
            (None, None) => None,
        };
        FrontEnd { time: f.time, visual, orientation, uwb: f.uwb_range }
    }
}

fn rotate_cov(r: &Rotation, c: &Matrix3<f64>) -> Matrix3<f64> {
    let m = r.matrix();
    m * c * m.transpose()
}

/// Runs the relative pose estimator over every frame of a stream. Fusion estimates start
/// at the second frame, once the window holds two frames.
pub fn estimate_stream(stream: &SensorStream, cfg: &EstimatorConfig) -> Result<Vec<RelPoseEstimate>, RelPoseError> {
    let fe = front_end(stream, cfg);
    let mut yaw = 0.0;
    let mut fronts = Vec::with_capacity(stream.frames.len());
    for i in 0..stream.frames.len() {
        let f = fe(i, yaw);
        yaw = f.orientation.yaw;
        fronts.push(f);
    }

    if cfg.mode == EstimatorMode::VisualOnly {
        let mut out = Vec::new();
        let mut prev: Option<(f64, Vector3<f64>)> = None;
        for (i, f) in fronts.iter().enumerate() {
            let Some(v) = f.visual else { continue };
            let p = 0.5 * (v.pnp_01 + v.pnp_10);
            let vel = prev.map_or(Vector3::zeros(), |(t, q)| (p - q) / (f.time - t));
            prev = Some((f.time, p));
            out.push(RelPoseEstimate {
                frame: i,
                time: f.time,
                position: p,
                velocity: vel,
                orientation: f.orientation,
                cost: 0.0,
                iterations: 0,
                status: EstimateStatus::Visual,
            });
        }
        return Ok(out);
    }

    let leader = ImuSeries::new(&stream.leader_imu);
    let follower = ImuSeries::new(&stream.follower_imu);
    let mut deltas = Vec::with_capacity(fronts.len().saturating_sub(1));
    for w in fronts.windows(2) {
        deltas.push(preintegrate_rel(&leader, &follower, w[0].time, w[1].time, &w[0].orientation.rotation())?);
    }
    let frame_dt = deltas.first().map_or(1.0 / 30.0, |d| d.dt);
    let l0 = fronts.iter().find_map(|f| f.visual.map(|v| 0.5 * (v.pnp_01 + v.pnp_10))).unwrap_or(Vector3::new(0.0, -1.0, 0.0));
    let weights = ResidualWeights::from_noise(
        cfg.pixel_sigma,
        cfg.side_intrinsics.fx,
        l0.norm(),
        cfg.uwb_sigma,
        cfg.accel_sigma,
        leader.period,
        frame_dt,
    );

    let mut out = Vec::new();
    let mut last: Option<(usize, RelWindowState)> = None;
    for k in 1..fronts.len() {
        let start = (k + 1).saturating_sub(cfg.window.max(2));
        let frames: Vec<FrameMeas> = fronts[start..=k]
            .iter()
            .map(|f| FrameMeas { time: f.time, visual: f.visual, uwb: Some(f.uwb) })
            .collect();
        let bundle = MeasurementBundle { frames, imu: deltas[start..k].to_vec() };
        let init = initial_window(&bundle, start, last.as_ref());
        let sol = solve_window(&bundle, &weights, &init, &cfg.lm)?;
        let n = sol.state.len();
        out.push(RelPoseEstimate {
            frame: k,
            time: fronts[k].time,
            position: sol.state.positions[n - 1],
            velocity: sol.state.velocities[n - 1],
            orientation: fronts[k].orientation,
            cost: sol.final_cost,
            iterations: sol.iterations,
            status: match sol.status {
                SolveStatus::Converged => EstimateStatus::Converged,
                SolveStatus::Diverged => EstimateStatus::Diverged,
            },
        });
        last = Some((start, sol.state));
    }
    Ok(out)
}

/// Warm start: reuse the previous window where it overlaps, propagate the rest with IMU.
fn initial_window(bundle: &MeasurementBundle, start: usize, last: Option<&(usize, RelWindowState)>) -> RelWindowState {
    let m = bundle.frames.len();
    let mut positions = Vec::with_capacity(m);
    let mut velocities = Vec::with_capacity(m);
    for i in 0..m {
        let global = start + i;
        let reused = last.and_then(|(s, st)| global.checked_sub(*s).and_then(|j| (j < st.len()).then(|| (st.positions[j], st.velocities[j]))));
        let (p, v) = match (reused, i) {
            (Some(pv), _) => pv,
            (None, 0) => {
                let p = bundle.frames[0].visual.map_or(Vector3::new(0.0, -1.0, 0.0), |v| 0.5 * (v.pnp_01 + v.pnp_10));
                (p, Vector3::zeros())
            }
            (None, _) => bundle.imu[i - 1].predict(&positions[i - 1], &velocities[i - 1]),
        };
        positions.push(p);
        velocities.push(v);
    }
    RelWindowState { times: bundle.frames.iter().map(|f| f.time).collect(), positions, velocities }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseErrorStats {
    /// Mean Euclidean position error, meters.
    pub position_mae: f64,
    pub position_rmse: f64,
    /// Mean absolute yaw error, radians.
    pub yaw_mae: f64,
    pub count: usize,
}

/// Error of estimates against the stream's ground truth.
pub fn error_stats(estimates: &[RelPoseEstimate], stream: &SensorStream) -> PoseErrorStats {
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut yaw = 0.0;
    for e in estimates {
        let truth = &stream.frames[e.frame];
        let d = (e.position - truth.rel_position).norm();
        abs += d;
        sq += d * d;
        yaw += wrap_angle(e.orientation.yaw - truth.rel_rotation.euler().2).abs();
    }
    let n = estimates.len().max(1) as f64;
    PoseErrorStats { position_mae: abs / n, position_rmse: (sq / n).sqrt(), yaw_mae: yaw / n, count: estimates.len() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::project;
    use crate::lsq::{numeric_jacobian, relative_error};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn render(pose: &Pose, layout: &MarkerLayout, k: &CameraIntrinsics) -> Vec<PixelObs> {
        layout.points.iter().map(|p| project(&pose.transform_point(p), k).unwrap()).collect()
    }

    #[test]
    fn pnp_noiseless_round_trip() {
        let k = CameraIntrinsics::vga(380.0);
        let layout = MarkerLayout::square(0.5);
        let truth = Pose::new(Rotation::from_euler(0.1, -0.05, 0.2), Vector3::new(0.1, -0.05, 3.0));
        let sol = pnp_planar(&render(&truth, &layout, &k), &layout, &k).unwrap();
        assert!((sol.pose.translation - truth.translation).norm() < 1e-6);
        assert!(sol.pose.rotation.angle_to(&truth.rotation) < 1e-6);
        assert!(sol.rms < 1e-6);
    }

    #[test]
    fn pnp_rejects_few_or_collinear_points() {
        let k = CameraIntrinsics::vga(380.0);
        let layout = MarkerLayout::square(0.5);
        let truth = Pose::from_translation(Vector3::new(0.0, 0.0, 3.0));
        let mut obs = render(&truth, &layout, &k);
        obs[0].valid = false;
        obs[1].valid = false;
        assert_eq!(pnp_planar(&obs, &layout, &k).unwrap_err(), RelPoseError::InsufficientObservations { needed: 4, got: 3 });
        let line = MarkerLayout {
            points: [0.0, 0.1, 0.2, 0.3, 0.4].map(|x| Vector3::new(x, 0.0, 0.0)),
            center: 0,
        };
        let obs = render(&truth, &line, &k);
        assert!(matches!(pnp_planar(&obs, &line, &k), Err(RelPoseError::DegenerateConfiguration(_))));
    }

    #[test]
    fn visual_residual_examples() {
        let p = Vector3::new(0.0, -3.0, 0.1);
        assert_eq!(visual_residual(&p, &p, &p), Vector3::zeros());
        let d = Vector3::new(0.02, 0.0, 0.0);
        assert!(visual_residual(&(p + d), &(p - d), &p).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let b = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let q = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let hand = Vector3::from_fn(|i, _| 0.5 * (a[i] - q[i]) + 0.5 * (b[i] - q[i]));
            assert_relative_eq!(visual_residual(&a, &b, &q), hand, epsilon = 1e-12);
        }
    }

    #[test]
    fn uwb_residual_examples() {
        assert_eq!(uwb_residual(3.0, &Vector3::new(0.0, -3.0, 0.0)), 0.0);
        assert_relative_eq!(uwb_residual(3.1, &Vector3::new(0.0, -3.0, 0.0)), 0.1, epsilon = 1e-12);
        let p = Vector3::new(1.0, 2.0, 2.0);
        assert_relative_eq!(uwb_residual(4.0, &p), 4.0 - (1.0f64 + 4.0 + 4.0).sqrt());
    }

    fn const_series(t_end: f64, dt: f64, a: Vector3<f64>) -> Vec<ImuSample> {
        let n = (t_end / dt).round() as usize;
        (0..=n).map(|i| ImuSample { time: i as f64 * dt, accel: a }).collect()
    }

    #[test]
    fn imu_kinematics() {
        let z = const_series(1.0, 0.005, Vector3::zeros());
        let one = const_series(1.0, 0.005, Vector3::new(1.0, 0.0, 0.0));
        let (p, v) = imu_integrate_rel(&ImuSeries::new(&z), &ImuSeries::new(&one), 0.0, 1.0, &Rotation::identity(), &Vector3::zeros(), &Vector3::zeros()).unwrap();
        assert_relative_eq!(v, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(p, Vector3::new(0.5, 0.0, 0.0), epsilon = 1e-12);

        let same = const_series(1.0, 0.005, Vector3::new(0.3, -2.0, 9.0));
        let s = ImuSeries::new(&same);
        let vel = Vector3::new(0.1, 0.2, 0.3);
        let (p, v) = imu_integrate_rel(&s, &s, 0.2, 0.7, &Rotation::identity(), &Vector3::zeros(), &vel).unwrap();
        assert_relative_eq!(v, vel, epsilon = 1e-12);
        assert_relative_eq!(p, vel * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn imu_gap_is_missing_data() {
        let mut s = const_series(1.0, 0.005, Vector3::zeros());
        s.retain(|x| !(x.time > 0.4 && x.time < 0.42));
        let series = ImuSeries::new(&s);
        let r = preintegrate_rel(&series, &series, 0.3, 0.5, &Rotation::identity());
        assert!(matches!(r, Err(RelPoseError::MissingData(_))));
        let r = preintegrate_rel(&series, &series, 0.5, 1.5, &Rotation::identity());
        assert!(matches!(r, Err(RelPoseError::MissingData(_))));
    }

    #[test]
    fn roll_pitch_examples() {
        assert_eq!(rel_roll_pitch((0.1, 0.2), (0.1, 0.2)), (0.0, 0.0));
        assert_relative_eq!(rel_roll_pitch((0.0, 0.03), (0.0, 0.1)).1, 0.07, epsilon = 1e-15);
        let (r, _) = rel_roll_pitch((-3.1, 0.0), (3.1, 0.0));
        assert_relative_eq!(r, -(2.0 * std::f64::consts::PI - 6.2), epsilon = 1e-12);
    }

    fn bvd_view(u: f64, k: &CameraIntrinsics) -> BvdView {
        BvdView {
            center: PixelObs::new(u, k.cy),
            intrinsics: *k,
            roll_pitch: (0.0, 0.0),
            marker_cam: None,
            mount: mount::leader_side_camera(),
        }
    }

    #[test]
    fn bvd_examples_and_symmetry() {
        let k = CameraIntrinsics::vga(380.0);
        let t = LEVEL_THRESHOLD_DEG.to_radians();
        assert_eq!(bvd_yaw(&bvd_view(k.cx, &k), &bvd_view(k.cx, &k), t).unwrap(), 0.0);
        let y = bvd_yaw(&bvd_view(k.cx, &k), &bvd_view(k.cx + k.fx, &k), t).unwrap();
        assert_relative_eq!(y, std::f64::consts::FRAC_PI_4, epsilon = 1e-15);
        let (a, b) = (bvd_view(350.0, &k), bvd_view(290.0, &k));
        assert_eq!(bvd_yaw(&a, &b, t).unwrap(), -bvd_yaw(&b, &a, t).unwrap());
        let mut tilted = a;
        tilted.roll_pitch = (0.1, 0.0);
        assert!(matches!(bvd_yaw(&tilted, &b, t), Err(RelPoseError::InsufficientInput(_))));
    }

    fn random_problem(rng: &mut ChaCha8Rng) -> (WindowProblem, DVector<f64>) {
        let m = 5;
        let frames = (0..m)
            .map(|i| FrameMeas {
                time: i as f64 * 0.033,
                visual: (i % 2 == 0).then(|| VisualMeas {
                    pnp_01: Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)),
                    pnp_10: Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)),
                    covariance: None,
                }),
                uwb: Some(rng.random_range(2.0..4.0)),
            })
            .collect();
        let imu = (1..m)
            .map(|_| ImuDelta {
                dt: 0.033,
                alpha: Vector3::from_fn(|_, _| rng.random_range(-0.01..0.01)),
                beta: Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1)),
            })
            .collect();
        let weights = ResidualWeights::from_noise(1.0, 380.0, 3.0, 0.05, 0.02, 0.005, 0.033);
        let problem = WindowProblem::new(&MeasurementBundle { frames, imu }, &weights).unwrap();
        let x = DVector::from_fn(6 * m, |_, _| rng.random_range(-3.0..3.0));
        (problem, x)
    }

    #[test]
    fn window_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let (problem, x) = random_problem(&mut rng);
            let num = numeric_jacobian(|x| problem.residuals(x).unwrap(), &x, 1e-6);
            assert!(relative_error(&problem.jacobian(&x), &num) < 1e-5);
        }
    }

    #[test]
    fn uwb_only_window_is_unobservable() {
        let frames = (0..3).map(|i| FrameMeas { time: i as f64, visual: None, uwb: Some(3.0) }).collect();
        let imu = vec![ImuDelta { dt: 1.0, alpha: Vector3::zeros(), beta: Vector3::zeros() }; 2];
        let weights = ResidualWeights::from_noise(1.0, 380.0, 3.0, 0.05, 0.02, 0.005, 1.0);
        assert_eq!(WindowProblem::new(&MeasurementBundle { frames, imu }, &weights).unwrap_err(), RelPoseError::Unobservable);
    }

    #[test]
    fn window_state_invariants() {
        assert!(RelWindowState::new(vec![0.0], vec![Vector3::zeros()], vec![Vector3::zeros()]).is_err());
        assert!(RelWindowState::new(vec![0.0, 0.0], vec![Vector3::zeros(); 2], vec![Vector3::zeros(); 2]).is_err());
        assert!(RelWindowState::new(vec![0.0, 0.1], vec![Vector3::zeros(); 2], vec![Vector3::zeros(); 2]).is_ok());
    }
}
