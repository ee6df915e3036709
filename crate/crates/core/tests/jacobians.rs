//! Analytic Jacobians against central finite differences at 100 random points each.

use fcs_core::densefit::{exp_residual, exp_residual_gradient};
use fcs_core::geom::{CameraIntrinsics, Pose, Rotation};
use fcs_core::lsq::{numeric_jacobian, relative_error, LeastSquaresProblem};
use fcs_core::relpose::{FrameMeas, ImuDelta, MeasurementBundle, ResidualWeights, VisualMeas, WindowProblem};
use fcs_core::seed::rng_for;
use fcs_core::triangulate::{reprojection_jacobian, reprojection_residuals};
use fcs_core::geom::PixelObs;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-5;

fn v3(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-s..s))
}

#[test]
fn window_residual_jacobian() {
    let mut rng = rng_for(1, "jac/window");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(2..8);
        let frames = (0..m)
            .map(|i| FrameMeas {
                time: i as f64 / 30.0,
                visual: (i == 0 || rng.random_bool(0.7)).then(|| VisualMeas { pnp_01: v3(&mut rng, 3.0), pnp_10: v3(&mut rng, 3.0), covariance: None }),
                uwb: rng.random_bool(0.8).then(|| rng.random_range(1.0..5.0)),
            })
            .collect();
        let imu = (1..m).map(|_| ImuDelta { dt: 1.0 / 30.0, alpha: v3(&mut rng, 0.01), beta: v3(&mut rng, 0.1) }).collect();
        let weights = ResidualWeights::from_noise(1.0, 380.0, 3.0, 0.05, 0.02, 0.005, 1.0 / 30.0);
        let problem = WindowProblem::new(&MeasurementBundle { frames, imu }, &weights).unwrap();
        let x = DVector::from_fn(6 * m, |_, _| rng.random_range(-3.0..3.0));
        let num = numeric_jacobian(|x| problem.residuals(x).unwrap(), &x, 1e-6);
        worst = worst.max(relative_error(&problem.jacobian(&x), &num));
    }
    assert!(worst < TOL, "worst relative error {worst}");
}

#[test]
fn reprojection_jacobian_matches() {
    let mut rng = rng_for(2, "jac/reprojection");
    let k = CameraIntrinsics::vga(380.0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let views = rng.random_range(2..6);
        let poses: Vec<Pose> = (0..views)
            .map(|_| Pose::new(Rotation::from_scaled_axis(v3(&mut rng, 0.2)), v3(&mut rng, 3.0)))
            .collect();
        let p = v3(&mut rng, 5.0) + Vector3::new(0.0, 0.0, 25.0);
        let obs: Vec<PixelObs> = (0..views).map(|_| PixelObs::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0))).collect();
        let f = |x: &DVector<f64>| reprojection_residuals(&Vector3::new(x[0], x[1], x[2]), &obs, &poses, &k);
        let x = DVector::from_column_slice(p.as_slice());
        let num = numeric_jacobian(f, &x, 1e-5);
        worst = worst.max(relative_error(&reprojection_jacobian(&p, &poses, &k), &num));
    }
    assert!(worst < TOL, "worst relative error {worst}");
}

#[test]
fn exponential_fit_jacobian_matches() {
    let mut rng = rng_for(3, "jac/exp");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let params = [rng.random_range(0.5..10.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(-5.0..5.0)];
        let ds: Vec<f64> = (0..20).map(|_| rng.random_range(-1.5..1.5)).collect();
        let zs: Vec<f64> = (0..20).map(|_| rng.random_range(1.0..70.0)).collect();
        let analytic = DMatrix::from_fn(ds.len(), 4, |i, j| exp_residual_gradient(&params, ds[i])[j]);
        let f = |x: &DVector<f64>| {
            let p = [x[0], x[1], x[2], x[3]];
            DVector::from_iterator(ds.len(), ds.iter().zip(&zs).map(|(d, z)| exp_residual(&p, *z, *d)))
        };
        let num = numeric_jacobian(f, &DVector::from_column_slice(&params), 1e-6);
        worst = worst.max(relative_error(&analytic, &num));
    }
    assert!(worst < TOL, "worst relative error {worst}");
}
