//! Collaborative multi-view triangulation.
//!
//! Every view contributes the cross-product matrix `N = [b]x` of its anchor-frame bearing;
//! stacking `N p = N c` over all views of both agents gives an overdetermined linear
//! system whose normal matrix `A^T A` is gated on its condition number before the
//! solution is accepted and optionally refined on reprojection error.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{mount, BearingObs, CameraIntrinsics, PixelObs, Pose, Rotation};

/// Default gate on `cond(A^T A)`.
pub const DEFAULT_COND_THRESHOLD: f64 = 5000.0;
/// Central-difference step for the sensitivity field (meters / radians).
pub const SENSITIVITY_STEP: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriangulationError {
    #[error("need at least 2 observations, got {0}")]
    InsufficientParallax(usize),
    #[error("degenerate geometry (singular normal matrix)")]
    DegenerateGeometry,
    #[error("condition number {condition:.3e} exceeds threshold {threshold:.3e}")]
    IllConditioned { condition: f64, threshold: f64 },
    #[error("bearings are parallel")]
    ParallelBearings,
    #[error("observation/pose count mismatch ({0} vs {1})")]
    Mismatch(usize, usize),
}

impl TriangulationError {
    /// Condition number carried by a gate rejection (infinite for singular systems).
    pub fn condition_number(&self) -> Option<f64> {
        match self {
            Self::DegenerateGeometry => Some(f64::INFINITY),
            Self::IllConditioned { condition, .. } => Some(*condition),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkSource {
    Covisible,
    SelfVio,
}

impl LandmarkSource {
    pub fn code(self) -> u8 {
        match self {
            Self::Covisible => 0,
            Self::SelfVio => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    /// Position in the anchor frame, meters.
    pub position: Vector3<f64>,
    pub observing_frames: Vec<usize>,
    pub condition_number: f64,
    pub refined: bool,
    pub source: LandmarkSource,
}

/// One view of a landmark: anchor-frame bearing and the camera centre it was taken from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayObs {
    pub bearing: BearingObs,
    pub center: Vector3<f64>,
}

impl RayObs {
    pub fn new(bearing: BearingObs, center: Vector3<f64>) -> Self {
        Self { bearing, center }
    }

    /// Ray from a camera at `pose` (anchor from camera) through pixel `(u, v)`.
    pub fn from_pixel(u: f64, v: f64, k: &CameraIntrinsics, pose: &Pose) -> Self {
        Self::new(BearingObs::from_pixel(u, v, k, &pose.rotation), pose.translation)
    }

    /// Exact ray from `center` towards `point`.
    pub fn towards(center: Vector3<f64>, point: &Vector3<f64>) -> Self {
        Self::new(BearingObs::new(point - center), center)
    }
}

/// Stacks `N_i` blocks into `A` (3n x 3) and `N_i c_i` into `b`.
pub fn stack_system(obs: &[RayObs]) -> Result<(DMatrix<f64>, DVector<f64>), TriangulationError> {
    if obs.len() < 2 {
        return Err(TriangulationError::InsufficientParallax(obs.len()));
    }
    let mut a = DMatrix::zeros(3 * obs.len(), 3);
    let mut b = DVector::zeros(3 * obs.len());
    for (i, o) in obs.iter().enumerate() {
        a.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(&o.bearing.ortho);
        b.fixed_rows_mut::<3>(3 * i).copy_from(&(o.bearing.ortho * o.center));
    }
    Ok((a, b))
}

/// `A^T A` and `A^T b` accumulated without materialising `A`.
pub fn normal_equations(obs: &[RayObs]) -> (Matrix3<f64>, Vector3<f64>) {
    obs.iter().fold((Matrix3::zeros(), Vector3::zeros()), |(m, r), o| {
        let nt_n = o.bearing.ortho.transpose() * o.bearing.ortho;
        (m + nt_n, r + nt_n * o.center)
    })
}

/// `sigma_max / sigma_min` of a symmetric positive semi-definite 3x3 matrix; infinite when singular.
pub fn condition_number(m: &Matrix3<f64>) -> f64 {
    let sv = m.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > smax * 1e-15) {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Condition number of the triangulation of `point` from `centers` with exact bearings.
pub fn point_condition(point: &Vector3<f64>, centers: &[Vector3<f64>]) -> f64 {
    let rays: Vec<RayObs> = centers.iter().map(|c| RayObs::towards(*c, point)).collect();
    condition_number(&normal_equations(&rays).0)
}

/// Solves `(A^T A) p = A^T b` and rejects it when `cond(A^T A)` exceeds `cond_threshold`.
pub fn solve_gated(a: &DMatrix<f64>, b: &DVector<f64>, cond_threshold: f64) -> Result<Landmark, TriangulationError> {
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    let m: Matrix3<f64> = ata.fixed_view::<3, 3>(0, 0).into_owned();
    let r: Vector3<f64> = atb.fixed_rows::<3>(0).into_owned();
    solve_normal(&m, &r, cond_threshold)
}

fn solve_normal(m: &Matrix3<f64>, r: &Vector3<f64>, cond_threshold: f64) -> Result<Landmark, TriangulationError> {
    let condition = condition_number(m);
    if !condition.is_finite() {
        return Err(TriangulationError::DegenerateGeometry);
    }
    if condition > cond_threshold {
        return Err(TriangulationError::IllConditioned { condition, threshold: cond_threshold });
    }
    let position = m.cholesky().map(|c| c.solve(r)).or_else(|| m.lu().solve(r)).ok_or(TriangulationError::DegenerateGeometry)?;
    Ok(Landmark {
        position,
        observing_frames: Vec::new(),
        condition_number: condition,
        refined: false,
        source: LandmarkSource::Covisible,
    })
}

/// Convenience: stack and solve in one go.
pub fn triangulate(obs: &[RayObs], cond_threshold: f64) -> Result<Landmark, TriangulationError> {
    if obs.len() < 2 {
        return Err(TriangulationError::InsufficientParallax(obs.len()));
    }
    let (m, r) = normal_equations(obs);
    solve_normal(&m, &r, cond_threshold)
}

/// Single-pair closed form with the anchor at the first camera:
/// `p = (N0^T N0 + N1^T N1)^-1 N1^T N1 c1`.
pub fn two_view_closed_form(obs0: &BearingObs, obs1: &BearingObs, p_c1: &Vector3<f64>) -> Result<Vector3<f64>, TriangulationError> {
    if obs0.bearing.cross(&obs1.bearing).norm() < 1e-12 {
        return Err(TriangulationError::ParallelBearings);
    }
    let n0 = obs0.ortho.transpose() * obs0.ortho;
    let n1 = obs1.ortho.transpose() * obs1.ortho;
    (n0 + n1).try_inverse().map(|inv| inv * n1 * p_c1).ok_or(TriangulationError::ParallelBearings)
}

/// Reprojection residuals `pi(p) - obs` stacked over views; `poses` are anchor-from-camera.
pub fn reprojection_residuals(p: &Vector3<f64>, obs: &[PixelObs], poses: &[Pose], k: &CameraIntrinsics) -> DVector<f64> {
    let mut r = DVector::zeros(2 * obs.len());
    for (i, (o, pose)) in obs.iter().zip(poses).enumerate() {
        let pc = pose.inverse().transform_point(p);
        let px = k.project_raw(&pc);
        r[2 * i] = px.x - o.u;
        r[2 * i + 1] = px.y - o.v;
    }
    r
}

/// Analytic Jacobian of [`reprojection_residuals`] with respect to the landmark.
pub fn reprojection_jacobian(p: &Vector3<f64>, poses: &[Pose], k: &CameraIntrinsics) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * poses.len(), 3);
    for (i, pose) in poses.iter().enumerate() {
        let cam_from_anchor = pose.inverse();
        let pc = cam_from_anchor.transform_point(p);
        let iz = 1.0 / pc.z;
        let dproj = Matrix2x3::new(k.fx * iz, 0.0, -k.fx * pc.x * iz * iz, 0.0, k.fy * iz, -k.fy * pc.y * iz * iz);
        j.fixed_view_mut::<2, 3>(2 * i, 0).copy_from(&(dproj * cam_from_anchor.rotation.matrix()));
    }
    j
}

fn rms(r: &DVector<f64>) -> f64 {
    (r.norm_squared() / r.len().max(1) as f64).sqrt()
}

/// Gauss-Newton refinement on reprojection error with step halving. Keeps the input and
/// leaves `refined = false` if no trial step lowers the RMS.
pub fn refine_gn(landmark: &Landmark, obs: &[PixelObs], poses: &[Pose], k: &CameraIntrinsics, max_iterations: usize) -> Result<Landmark, TriangulationError> {
    if obs.len() != poses.len() {
        return Err(TriangulationError::Mismatch(obs.len(), poses.len()));
    }
    if obs.len() < 2 {
        return Err(TriangulationError::InsufficientParallax(obs.len()));
    }
    let mut p = landmark.position;
    let mut r = reprojection_residuals(&p, obs, poses, k);
    let mut current = rms(&r);
    let mut improved_or_optimal = false;
    for _ in 0..max_iterations {
        let j = reprojection_jacobian(&p, poses, k);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let Some(step) = jtj.clone().cholesky().map(|c| -c.solve(&g)) else { break };
        let step = Vector3::new(step[0], step[1], step[2]);
        if step.norm() <= 1e-12 * (1.0 + p.norm()) {
            improved_or_optimal = true;
            break;
        }
        let mut accepted = false;
        let mut scale = 1.0;
        for _ in 0..8 {
            let cand = p + step * scale;
            let in_front = poses.iter().all(|pose| pose.inverse().transform_point(&cand).z > 0.0);
            if in_front {
                let rc = reprojection_residuals(&cand, obs, poses, k);
                let cand_rms = rms(&rc);
                if cand_rms <= current {
                    p = cand;
                    r = rc;
                    current = cand_rms;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        improved_or_optimal = true;
    }
    let mut out = landmark.clone();
    if improved_or_optimal {
        out.position = p;
        out.refined = true;
    }
    Ok(out)
}

/// Baseline parameters perturbed in the sensitivity study, expressed in the leader body
/// axes (x forward, y left, z up): `[t_x, t_y, t_z, R_x, R_y, R_z]`; `R_z` is yaw.
pub const SENSITIVITY_LABELS: [&str; 6] = ["t_x", "t_y", "t_z", "R_x", "R_y", "R_z"];

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityConfig {
    /// Position of the second camera in the anchor (first camera) frame.
    pub c1_position: Vector3<f64>,
    pub c1_rotation: Rotation,
    pub landmarks: Vec<Vector3<f64>>,
    pub step: f64,
}

impl SensitivityConfig {
    /// Anchor at the origin, second camera parallel at `(0, -3, 0)`, 20 m plane at 30 m.
    pub fn canonical() -> Self {
        Self {
            c1_position: Vector3::new(0.0, -3.0, 0.0),
            c1_rotation: Rotation::identity(),
            landmarks: crate::sim::gen_landmark_plane(30.0, 20.0, 0.5),
            step: SENSITIVITY_STEP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityRow {
    pub landmark: Vector3<f64>,
    /// `|d p_f / d theta_k|` for each baseline parameter.
    pub gradient: [f64; 6],
}

/// Second-camera pose after perturbing the baseline parameters (body axes) by `theta`.
pub fn perturbed_c1(cfg: &SensitivityConfig, theta: &[f64; 6]) -> (Vector3<f64>, Rotation) {
    let body_from_cam = mount::front_camera();
    let cam_from_body = body_from_cam.inverse();
    let dt = cam_from_body.rotate(&Vector3::new(theta[0], theta[1], theta[2]));
    let dr = cam_from_body.compose(&Rotation::from_euler(theta[3], theta[4], theta[5])).compose(&body_from_cam);
    (cfg.c1_position + dt, dr.compose(&cfg.c1_rotation))
}

/// Central-difference sensitivity of the two-view landmark solution to each baseline
/// parameter, with the pixel observations held fixed at their unperturbed values.
pub fn sensitivity_gradient(cfg: &SensitivityConfig) -> Vec<SensitivityRow> {
    let c1_inv = cfg.c1_rotation.inverse();
    cfg.landmarks
        .par_iter()
        .map(|p| {
            let b0 = BearingObs::new(*p);
            // camera-frame direction of the second view, fixed under perturbation
            let b1_cam = c1_inv.rotate(&(p - cfg.c1_position));
            let solve = |theta: &[f64; 6]| {
                let (c1, r1) = perturbed_c1(cfg, theta);
                two_view_closed_form(&b0, &BearingObs::new(r1.rotate(&b1_cam)), &c1).unwrap_or(Vector3::repeat(f64::NAN))
            };
            let mut gradient = [0.0; 6];
            for (k, g) in gradient.iter_mut().enumerate() {
                let mut plus = [0.0; 6];
                let mut minus = [0.0; 6];
                plus[k] = cfg.step;
                minus[k] = -cfg.step;
                *g = (solve(&plus) - solve(&minus)).norm() / (2.0 * cfg.step);
            }
            SensitivityRow { landmark: *p, gradient }
        })
        .collect()
}

/// Pixel of `p` (anchor frame) in a camera at `pose` (anchor from camera).
pub fn project_in(pose: &Pose, p: &Vector3<f64>, k: &CameraIntrinsics) -> Option<Vector2<f64>> {
    let pc = pose.inverse().transform_point(p);
    (pc.z > 0.0).then(|| k.project_raw(&pc))
}
