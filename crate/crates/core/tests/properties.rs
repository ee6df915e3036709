use fcs_core::analysis::{perturb_baseline, BaselineNoiseModel};
use fcs_core::assoc::{retention_stats, AssociationLedger, DropoutFlow, FeatureTrack, TruthMatcher};
use fcs_core::densefit::{apply_fit, fit_exponential, ucd, DepthImage, DepthSample, ExpFitParams};
use fcs_core::geom::{mount, BearingObs, CameraIntrinsics, PixelObs, Rotation};
use fcs_core::lsq::LmConfig;
use fcs_core::relpose::{
    bvd_yaw, rel_roll_pitch, solve_window, uwb_residual, visual_residual, BvdView, FrameMeas, ImuDelta, MeasurementBundle,
    RelWindowState, ResidualWeights, VisualMeas,
};
use fcs_core::seed::rng_for;
use fcs_core::timesync::{interp_sequence, pair_nearest_timestamp, StampedPose};
use fcs_core::triangulate::{triangulate, two_view_closed_form, RayObs};
use fcs_core::geom::Pose;
use nalgebra::Vector3;
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-range..range).prop_map(Vector3::from)
}

fn parallax(p: &Vector3<f64>, c0: &Vector3<f64>, c1: &Vector3<f64>) -> f64 {
    (p - c0).normalize().dot(&(p - c1).normalize()).clamp(-1.0, 1.0).acos()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn closed_form_matches_stacked_solve(p in vec3(20.0), c1 in vec3(5.0)) {
        let p = p + Vector3::new(0.0, 0.0, 30.0);
        prop_assume!(parallax(&p, &Vector3::zeros(), &c1) > 1f64.to_radians());
        let b0 = BearingObs::new(p);
        let b1 = BearingObs::new(p - c1);
        let closed = two_view_closed_form(&b0, &b1, &c1).unwrap();
        let stacked = triangulate(&[RayObs::new(b0, Vector3::zeros()), RayObs::new(b1, c1)], f64::INFINITY).unwrap();
        prop_assert!((closed - stacked.position).norm() < 1e-9 * p.norm().max(1.0));
    }

    #[test]
    fn noiseless_multiview_recovers_point(p in vec3(10.0), centers in prop::collection::vec(vec3(4.0), 2..8)) {
        let p = p + Vector3::new(0.0, 0.0, 25.0);
        prop_assume!(parallax(&p, &centers[0], &centers[1]) > 1f64.to_radians());
        let obs: Vec<RayObs> = centers.iter().map(|c| RayObs::towards(*c, &p)).collect();
        let lm = triangulate(&obs, f64::INFINITY).unwrap();
        prop_assert!((lm.position - p).norm() < 1e-8);
    }

    #[test]
    fn pairing_is_symmetric(
        a in prop::collection::vec(0.0..10.0f64, 0..60),
        b in prop::collection::vec(0.0..10.0f64, 0..60),
        skew in 0.001..0.05f64,
    ) {
        let (mut a, mut b) = (a, b);
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let ab: Vec<(usize, usize)> = pair_nearest_timestamp(&a, &b, skew).iter().map(|p| (p.a_index, p.b_index)).collect();
        let mut ba: Vec<(usize, usize)> = pair_nearest_timestamp(&b, &a, skew).iter().map(|p| (p.b_index, p.a_index)).collect();
        ba.sort();
        prop_assert_eq!(&ab, &ba);
        prop_assert!(pair_nearest_timestamp(&a, &b, skew).iter().all(|p| p.skew() <= skew));
        let mut seen_b: Vec<usize> = ab.iter().map(|p| p.1).collect();
        seen_b.sort();
        seen_b.dedup();
        prop_assert_eq!(seen_b.len(), ab.len());
    }

    #[test]
    fn aligned_streams_pair_index_to_index(n in 1usize..200, offset in -0.005..0.005f64) {
        let a: Vec<f64> = (0..n).map(|i| i as f64 / 30.0).collect();
        let b: Vec<f64> = a.iter().map(|t| t + offset).collect();
        let pairs = pair_nearest_timestamp(&a, &b, 0.0167);
        prop_assert_eq!(pairs.len(), n);
        prop_assert!(pairs.iter().all(|p| p.a_index == p.b_index));
    }

    #[test]
    fn interpolation_hits_endpoints(t0 in 0.0..5.0f64, dt in 0.01..1.0f64, p0 in vec3(5.0), p1 in vec3(5.0), yaw in -3.0..3.0f64) {
        let a = StampedPose::new(t0, Pose::new(Rotation::identity(), p0));
        let b = StampedPose::new(t0 + dt, Pose::new(Rotation::rot_z(yaw), p1));
        let seq = [a, b];
        prop_assert!((interp_sequence(&seq, t0).unwrap().translation - p0).norm() < 1e-12);
        prop_assert!((interp_sequence(&seq, t0 + dt).unwrap().translation - p1).norm() < 1e-9);
        prop_assert!(interp_sequence(&seq, t0 + 2.0 * dt).is_err());
    }

    #[test]
    fn baseline_noise_scaling(l in 0.5..8.0f64, k in 0.5..3.0f64, du in -2.0..2.0f64, dv in -2.0..2.0f64, s in 0.1..3.0f64) {
        let base = perturb_baseline(&BaselineNoiseModel::new(l, 380.0, du, dv).unwrap());
        let longer = perturb_baseline(&BaselineNoiseModel::new(k * l, 380.0, du, dv).unwrap());
        let noisier = perturb_baseline(&BaselineNoiseModel::new(l, 380.0, s * du, s * dv).unwrap());
        let tol = 1e-12 * (1.0 + base.norm() * k * k);
        prop_assert!((longer.x - k * base.x).abs() < tol);
        prop_assert!((longer.y - k * k * base.y).abs() < tol);
        prop_assert!((longer.z - k * base.z).abs() < tol);
        prop_assert!((noisier - s * base).norm() < 1e-12 * (1.0 + s * base.norm()));
        prop_assert!(base.y >= 0.0);
    }

    #[test]
    fn residual_oracles(a in vec3(5.0), b in vec3(5.0), q in vec3(5.0), d in 0.1..10.0f64) {
        let hand = (a + b) / 2.0 - q;
        prop_assert!((visual_residual(&a, &b, &q) - hand).norm() < 1e-12);
        prop_assert!((uwb_residual(d, &q) - (d - q.norm())).abs() < 1e-12);
    }

    #[test]
    fn bvd_swap_negates_yaw(u0 in 10.0..630.0f64, u1 in 10.0..630.0f64) {
        let k = CameraIntrinsics::vga(380.0);
        let view = |u: f64, m: Rotation| BvdView {
            center: PixelObs::new(u, 240.0),
            intrinsics: k,
            roll_pitch: (0.0, 0.0),
            marker_cam: None,
            mount: m,
        };
        let v0 = view(u0, mount::leader_side_camera());
        let v1 = view(u1, mount::follower_side_camera());
        let fwd = bvd_yaw(&v0, &v1, 0.035).unwrap();
        let back = bvd_yaw(&v1, &v0, 0.035).unwrap();
        prop_assert!((fwd + back).abs() < 1e-12);
        prop_assert!(fwd.abs() <= std::f64::consts::PI);
    }

    #[test]
    fn relative_roll_pitch_is_a_difference(r0 in -0.5..0.5f64, p0 in -0.5..0.5f64, r1 in -0.5..0.5f64, p1 in -0.5..0.5f64) {
        let (r, p) = rel_roll_pitch((r0, p0), (r1, p1));
        prop_assert!((r - (r1 - r0)).abs() < 1e-12 && (p - (p1 - p0)).abs() < 1e-12);
    }

    #[test]
    fn ucd_matches_brute_force(
        pred in prop::collection::vec(vec3(10.0), 1..60),
        gt in prop::collection::vec(vec3(10.0), 1..60),
    ) {
        let brute = pred.iter().map(|p| gt.iter().map(|g| (p - g).norm()).fold(f64::INFINITY, f64::min)).sum::<f64>() / pred.len() as f64;
        prop_assert!((ucd(&pred, &gt).unwrap() - brute).abs() <= 1e-12 * brute.max(1.0));
    }
}

fn warp_samples(warp: &ExpFitParams, n: usize) -> Vec<DepthSample> {
    (0..n)
        .map(|i| {
            let z = 1.0 + 69.0 * i as f64 / (n - 1) as f64;
            DepthSample::new(z, warp.inverse(z).unwrap())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_fit_recovers_and_is_idempotent(a in 1.0..10.0f64, b in 0.3..2.0f64, offset in 0.0..8.0f64) {
        let warp = ExpFitParams::new(a, b, 0.0, offset);
        let samples = warp_samples(&warp, 40);
        let fit = fit_exponential(&samples).unwrap();
        prop_assert!((fit.b - b).abs() < 1e-8 * b);
        prop_assert!((fit.scale() / warp.scale() - 1.0).abs() < 1e-8);
        prop_assert!((fit.offset - offset).abs() < 1e-8 * (1.0 + offset));

        let refit_samples: Vec<DepthSample> = samples.iter().map(|s| DepthSample::new(fit.eval(s.d), s.d)).collect();
        let refit = fit_exponential(&refit_samples).unwrap();
        prop_assert!((refit.b - fit.b).abs() < 1e-9 * fit.b.abs());
        prop_assert!((refit.scale() / fit.scale() - 1.0).abs() < 1e-9);
        prop_assert!((refit.offset - fit.offset).abs() < 1e-9 * (1.0 + fit.offset.abs()));
    }

    #[test]
    fn applying_the_warp_fit_round_trips_depth(a in 1.0..10.0f64, b in 0.3..2.0f64, offset in 0.0..8.0f64) {
        let warp = ExpFitParams::new(a, b, 0.0, offset);
        let truth = DepthImage { width: 8, height: 4, data: (0..32).map(|i| 1.0 + 2.0 * i as f64).collect() };
        let mono = DepthImage { width: 8, height: 4, data: truth.data.iter().map(|z| warp.inverse(*z).unwrap()).collect() };
        let metric = apply_fit(&mono, &warp);
        for (m, t) in metric.data.iter().zip(&truth.data) {
            prop_assert!((m - t).abs() < 1e-6);
        }
    }

    #[test]
    fn window_cost_never_increases(seed in any::<u64>(), frames in 2usize..8) {
        use rand::Rng;
        let mut rng = rng_for(seed, "window");
        let mut v3 = |s: f64| Vector3::from_fn(|_, _| rng.random_range(-s..s));
        let frames_meas: Vec<FrameMeas> = (0..frames)
            .map(|i| FrameMeas {
                time: i as f64 / 30.0,
                visual: (i % 2 == 0).then(|| VisualMeas { pnp_01: v3(3.0), pnp_10: v3(3.0), covariance: None }),
                uwb: Some(2.0 + v3(1.0).x.abs()),
            })
            .collect();
        let imu: Vec<ImuDelta> = (1..frames).map(|_| ImuDelta { dt: 1.0 / 30.0, alpha: v3(0.01), beta: v3(0.1) }).collect();
        let bundle = MeasurementBundle { frames: frames_meas, imu };
        let weights = ResidualWeights::from_noise(1.0, 380.0, 3.0, 0.05, 0.02, 0.005, 1.0 / 30.0);
        let init = RelWindowState::new(
            bundle.frames.iter().map(|f| f.time).collect(),
            (0..frames).map(|_| v3(3.0)).collect(),
            (0..frames).map(|_| v3(1.0)).collect(),
        ).unwrap();
        let sol = solve_window(&bundle, &weights, &init, &LmConfig::default()).unwrap();
        prop_assert!(sol.cost_history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(sol.final_cost <= sol.initial_cost);
    }

    #[test]
    fn retention_is_monotone(p in 0.0..=1.0f64, seed in any::<u64>()) {
        let mut tracks: Vec<FeatureTrack> = (0..200u64).map(|id| FeatureTrack::new(id, 0, 0, PixelObs::new(0.0, 0.0).with_id(id))).collect();
        let mut flow = DropoutFlow::new(p, rng_for(seed, "flow"), |_: u8, _: u64, _: usize| Some(PixelObs::new(0.0, 0.0)));
        for f in 1..=10 {
            fcs_core::assoc::predict_tracks(tracks.iter_mut(), f, &mut flow);
        }
        let r = retention_stats(&tracks, 0, 10);
        prop_assert_eq!(r[0], 200);
        prop_assert!(r.windows(2).all(|w| w[1] <= w[0]));
        if p == 0.0 { prop_assert_eq!(r[10], 200); }
        if p == 1.0 { prop_assert_eq!(r[1], 0); }
    }

    #[test]
    fn ledger_keeps_ids_unique_and_inherited(seed in any::<u64>(), dropout in 0.0..0.5f64, capacity in 1usize..40) {
        use rand::Rng;
        let mut vis_rng = rng_for(seed, "visibility");
        // landmark visibility per (frame, agent)
        let visible: Vec<[Vec<u64>; 2]> = (0..40)
            .map(|_| [0, 1].map(|_| (0..30u64).filter(|_| vis_rng.random::<f64>() < 0.8).collect()))
            .collect();
        let obs_at = |frame: usize, agent: usize| -> Vec<PixelObs> {
            visible[frame][agent].iter().map(|&id| PixelObs::new(id as f64, frame as f64).with_id(id)).collect()
        };
        let mut flow = DropoutFlow::new(dropout, rng_for(seed, "flow"), |agent: u8, lm: u64, frame: usize| {
            visible.get(frame).filter(|v| v[agent as usize].contains(&lm)).map(|_| PixelObs::new(lm as f64, frame as f64).with_id(lm))
        });
        let mut ledger = AssociationLedger::new(capacity);
        for frame in 0..40 {
            ledger.predict(frame, &mut flow);
            if frame % 3 == 0 {
                ledger.run_guidance(frame, &obs_at(frame, 0), &obs_at(frame, 1), &mut TruthMatcher);
            }
            prop_assert!(ledger.inheritance_holds(frame));
            prop_assert!(ledger.ids_unique());
            prop_assert!(ledger.live_pairs().count() <= capacity);
        }
    }
}
