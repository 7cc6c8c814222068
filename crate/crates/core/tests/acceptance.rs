//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (run with `--nocapture` to see them).

use lidar_odometry::config::PipelineConfig;
use lidar_odometry::consistency::{
    consistency_loss, consistency_loss_bilinear, loss_gradient_fd, pose_loss, total_loss,
    ConsistencyOptions, LossWeights, PoseLoss,
};
use lidar_odometry::error::Error;
use lidar_odometry::evaluation::{evaluate_trajectory, pair_composition_check, SEGMENT_LENGTHS};
use lidar_odometry::frontend::{estimate_relative_pose, smoothness, FrontendConfig};
use lidar_odometry::ingest::{Point3I, Scan};
use lidar_odometry::mapping::{predict_initial_pose, run_pipeline, WorldTrajectory};
use lidar_odometry::normals::{estimate_normals, pca_normals, smooth_normals, NormalMap};
use lidar_odometry::pose::PoseSE3;
use lidar_odometry::projection::{project, unproject, ProjectionConfig, ScanMatrix};
use lidar_odometry::synth::{
    add_clutter, corridor_world, forward_path, gaussian, ground_world, random_pose, star_scan,
    three_plane_world, World,
};
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn report(criterion: &str, pass: bool, details: String) {
    println!(
        "acceptance {criterion}: {} ({details})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion}: {details}");
}

fn matrix_with_normals(scan: &Scan, cfg: &ProjectionConfig, window: usize) -> ScanMatrix {
    let mut m = project(scan, cfg).unwrap();
    let nm = smooth_normals(&estimate_normals(&m), window).unwrap();
    m.set_normals(nm).unwrap();
    m
}

#[test]
fn criterion_01_smoothness_kernel_annihilates_constants() {
    let started = Instant::now();
    let (h, w) = (64, 1800);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    // Several constant fields in random directions, some cells invalid.
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let dir = lidar_odometry::synth::random_unit_vector(&mut rng);
        let n = [dir[0], dir[1], dir[2]];
        let mut valid = vec![true; h * w];
        for _ in 0..500 {
            valid[rng.gen_range(0..h * w)] = false;
        }
        let nm = NormalMap::from_parts(h, w, vec![n; h * w], valid).unwrap();
        let sm = smoothness(&nm);
        for i in 0..h {
            for j in 0..w {
                if sm.is_valid(i, j) {
                    worst = worst.max(sm.value_at(i, j).abs());
                }
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    report(
        "criterion 1 (zero-sum smoothness kernel)",
        worst == 0.0 && elapsed < 1.0,
        format!("max |c| = {worst:.3e} on constant fields, {elapsed:.2} s"),
    );
}

#[test]
fn criterion_02_projection_round_trip_and_collisions() {
    let started = Instant::now();
    let cfg = ProjectionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut max_range_err: f64 = 0.0;
    let mut collision_mismatches = 0usize;
    for _ in 0..1000 {
        let n_points = 3000 + rng.gen_range(0..2000);
        let mut points = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            let az = rng.gen::<f64>() * std::f64::consts::TAU;
            let el = -24.9f64.to_radians() + rng.gen::<f64>() * 26.8f64.to_radians();
            let r = 2.0 + rng.gen::<f64>() * 75.0;
            let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let p = dir * r;
            points.push(Point3I::new(p[0], p[1], p[2], rng.gen()));
        }
        let scan = Scan {
            points,
            timestamp: 0.0,
            sequence_index: 0,
        };
        let m1 = project(&scan, &cfg).unwrap();

        // Brute-force per-cell minimum oracle for the collision rule.
        let mut oracle = vec![f64::INFINITY; cfg.cells()];
        for p in &scan.points {
            let pos = p.position();
            let r = pos.norm();
            let mut az = pos.y.atan2(pos.x);
            if az < 0.0 {
                az += std::f64::consts::TAU;
            }
            let el = (pos.z / r).clamp(-1.0, 1.0).asin();
            if let (Some(row), Some(col)) = (cfg.row_for_elevation(el), cfg.col_for_azimuth(az)) {
                let idx = row * cfg.width + col;
                if r < oracle[idx] {
                    oracle[idx] = r;
                }
            }
        }
        for i in 0..cfg.height {
            for j in 0..cfg.width {
                let idx = i * cfg.width + j;
                let expected = oracle[idx];
                if expected.is_finite() {
                    if !m1.is_valid(i, j) || (m1.range_at(i, j) - expected).abs() > 1e-12 {
                        collision_mismatches += 1;
                    }
                } else if m1.is_valid(i, j) {
                    collision_mismatches += 1;
                }
            }
        }

        // Fixed point: project -> unproject -> project.
        let m2 = project(&unproject(&m1), &cfg).unwrap();
        if m1.valid_count() != m2.valid_count() {
            collision_mismatches += 1;
        }
        for i in 0..cfg.height {
            for j in 0..cfg.width {
                if m1.is_valid(i, j) {
                    if !m2.is_valid(i, j) {
                        collision_mismatches += 1;
                    } else {
                        max_range_err =
                            max_range_err.max((m1.range_at(i, j) - m2.range_at(i, j)).abs());
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    report(
        "criterion 2 (projection round trip)",
        max_range_err < 1e-6 && collision_mismatches == 0 && elapsed < 30.0,
        format!(
            "1000 scans, max range error {max_range_err:.3e} m, {collision_mismatches} collision mismatches, {elapsed:.1} s"
        ),
    );
}

#[test]
fn criterion_03_normal_correctness() {
    let started = Instant::now();
    let cfg = ProjectionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    // Noiseless plane vs analytic normal.
    let world = ground_world(2.0);
    let (scan, _) = world.scan_from_pose(&PoseSE3::identity(), &cfg, 0, 0.0, &mut rng);
    let m = matrix_with_normals(&scan, &cfg, 3);
    let up = Vector3::new(0.0, 0.0, 1.0);
    let nm = m.normals().unwrap();
    let mut errs = Vec::new();
    for i in 0..cfg.height {
        for j in 0..cfg.width {
            if let Some(n) = nm.normal_at(i, j) {
                errs.push(n.dot(&up).clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
    }
    let clean_mean = errs.iter().sum::<f64>() / errs.len() as f64;

    // Noisy wall (sigma = 1 cm) vs analytic normal, after smoothing.
    let wall = World::new(
        vec![lidar_odometry::synth::PlanePatch::rect(
            Vector3::new(35.0, 0.0, -7.0),
            Vector3::new(-1.0, 0.0, 0.0),
            28.0,
            11.0,
        )],
        90.0,
    );
    let (noisy_scan, _) = wall.scan_from_pose(&PoseSE3::identity(), &cfg, 0, 0.01, &mut rng);
    let m_noisy = matrix_with_normals(&noisy_scan, &cfg, 5);
    let nm_noisy = m_noisy.normals().unwrap();
    let toward = Vector3::new(-1.0, 0.0, 0.0);
    let mut errs_noisy = Vec::new();
    for i in 0..cfg.height {
        for j in 0..cfg.width {
            if let Some(n) = nm_noisy.normal_at(i, j) {
                errs_noisy.push(n.dot(&toward).clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
    }
    let noisy_mean = errs_noisy.iter().sum::<f64>() / errs_noisy.len() as f64;

    // Grid vs PCA oracle on a three-plane scene.
    let world3 = three_plane_world(&mut rng);
    let (scan3, _) = world3.scan_from_pose(&PoseSE3::identity(), &cfg, 0, 0.0, &mut rng);
    let m3 = matrix_with_normals(&scan3, &cfg, 3);
    let oracle = pca_normals(&scan3, 1.0).unwrap();
    let gap = lidar_odometry::normals::evaluate_normals(m3.normals().unwrap(), &m3, &oracle)
        .unwrap();

    let elapsed = started.elapsed().as_secs_f64();
    report(
        "criterion 3 (normal correctness)",
        clean_mean < 0.5 && noisy_mean < 2.0 && gap.mean_deg < 2.0 && elapsed < 10.0,
        format!(
            "noiseless plane mean {clean_mean:.4} deg, noisy plane mean {noisy_mean:.4} deg, grid-vs-pca mean {:.4} deg, {elapsed:.1} s",
            gap.mean_deg
        ),
    );
}

#[test]
fn criterion_04_loss_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);

    // Total-loss recomposition on random draws.
    let mut worst_identity: f64 = 0.0;
    for _ in 0..10_000 {
        let weights = LossWeights {
            consistency_weight: rng.gen::<f64>() * 2.0,
            regularizer_weight: rng.gen::<f64>() * 2.0,
            translation_log_var: rng.gen::<f64>() * 4.0 - 2.0,
            rotation_log_var: rng.gen::<f64>() * 4.0 - 2.0,
        };
        let pose = PoseLoss {
            translation: rng.gen::<f64>() * 10.0,
            rotation: rng.gen::<f64>(),
            balanced: rng.gen::<f64>() * 20.0 - 10.0,
        };
        let consistency = rng.gen::<f64>() * 1000.0;
        let regularizer = rng.gen::<f64>() * 1000.0;
        let b = total_loss(consistency, regularizer, &pose, &weights, 1);
        let recomputed = pose.balanced
            + weights.consistency_weight * consistency
            + weights.regularizer_weight * regularizer;
        worst_identity = worst_identity.max((b.total - recomputed).abs());
    }

    // Exact pose loss at the truth with the default balancers.
    let defaults = LossWeights::default();
    let gt = random_pose(&mut rng, 1.0, 5.0);
    let at_truth = pose_loss(&gt, &gt, &defaults);
    let exact_minus_2_5 = at_truth.balanced == -2.5
        && at_truth.translation == 0.0
        && at_truth.rotation == 0.0;

    // Zero mask kills the consistency term; scaling the mask scales it.
    let cfg = ProjectionConfig::new(32, 360);
    let mut rng2 = ChaCha8Rng::seed_from_u64(405);
    let world = corridor_world(10.0);
    let (scan, _) = world.scan_from_pose(&PoseSE3::identity(), &cfg, 0, 0.0, &mut rng2);
    let m = matrix_with_normals(&scan, &cfg, 3);
    let opts = ConsistencyOptions::default();
    let t = PoseSE3::new(
        UnitQuaternion::from_scaled_axis(Vector3::new(0.001, -0.002, 0.004)),
        Vector3::new(0.05, -0.03, 0.01),
    );
    let zero_mask = vec![0.0; cfg.cells()];
    let zero_term = consistency_loss(&m, &m, &t, Some(&zero_mask), &opts).unwrap();
    let base = consistency_loss(&m, &m, &t, None, &opts).unwrap();
    let mut worst_linearity: f64 = 0.0;
    for _ in 0..20 {
        let s: f64 = rng.gen();
        let mask = vec![s; cfg.cells()];
        let term = consistency_loss(&m, &m, &t, Some(&mask), &opts).unwrap();
        let err = (term.sum - s * base.sum).abs() / base.sum.abs().max(1.0);
        worst_linearity = worst_linearity.max(err);
    }

    report(
        "criterion 4 (loss identities)",
        worst_identity <= 1e-12
            && exact_minus_2_5
            && zero_term.sum == 0.0
            && worst_linearity <= 1e-12,
        format!(
            "total identity err {worst_identity:.3e}, balanced at truth exact {exact_minus_2_5}, zero-mask sum {:.1e}, mask linearity err {worst_linearity:.3e}",
            zero_term.sum
        ),
    );
}

#[test]
fn criterion_05_finite_difference_gradient() {
    // Smooth full-grid scene on a coarse grid so bilinear kinks stay far from
    // the evaluation points; border rows are masked out smoothly so validity
    // edges cannot inject jumps.
    let cfg = ProjectionConfig::new(32, 180);
    let scan = star_scan(&cfg, 8.0, 0.15, 0);
    let m = matrix_with_normals(&scan, &cfg, 3);
    let opts = ConsistencyOptions::default();
    let mask = border_ramp_mask(&cfg, 4);

    // Gradient vanishes at the optimum relative to the curvature scale.
    let h0 = 8e-4;
    let identity = PoseSE3::identity();
    let g0 = loss_gradient_fd(&m, &m, &identity, Some(&mask), h0, &opts).unwrap();
    let g0_norm = g0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let f0 = consistency_loss_bilinear(&m, &m, &identity, Some(&mask), &opts)
        .unwrap()
        .sum;
    let mut curvature = 0.0;
    for k in 0..6 {
        let mut delta = nalgebra::Vector6::zeros();
        delta[k] = h0;
        let fp = consistency_loss_bilinear(&m, &m, &identity.with_increment(&delta), Some(&mask), &opts)
            .unwrap()
            .sum;
        delta[k] = -h0;
        let fm = consistency_loss_bilinear(&m, &m, &identity.with_increment(&delta), Some(&mask), &opts)
            .unwrap()
            .sum;
        curvature += (fp - 2.0 * f0 + fm).abs() / (h0 * h0);
    }
    let vanishes = g0_norm < 1e-3 * curvature && f0 == 0.0;

    // Richardson step-halving consistency at a perturbed pose.
    let eval_pose = PoseSE3::new(
        UnitQuaternion::from_scaled_axis(Vector3::new(0.001, -0.0015, 0.004)),
        Vector3::new(0.012, -0.008, 0.005),
    );
    let g = |h: f64| loss_gradient_fd(&m, &m, &eval_pose, Some(&mask), h, &opts).unwrap();
    let (ga, gb, gc) = (g(h0), g(h0 / 2.0), g(h0 / 4.0));
    let d1 = diff_norm(&ga, &gb);
    let d2 = diff_norm(&gb, &gc);
    let ratio = d1 / d2;
    let richardson_ok = d2 < d1 && (3.0..=5.0).contains(&ratio);

    report(
        "criterion 5 (finite-difference gradient)",
        vanishes && richardson_ok,
        format!(
            "|g| at optimum {g0_norm:.3e} vs curvature {curvature:.3e}, Richardson ratio {ratio:.2} (d1 {d1:.3e}, d2 {d2:.3e})"
        ),
    );
}

fn diff_norm(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mask that is exactly zero on the two outermost rows (where normal-validity
/// rejection happens, so dropped samples carry zero weight) and ramps
/// linearly to one over the next `band` rows.
fn border_ramp_mask(cfg: &ProjectionConfig, band: usize) -> Vec<f64> {
    let mut mask = vec![1.0; cfg.cells()];
    for i in 0..cfg.height {
        let edge = i.min(cfg.height - 1 - i);
        let v = if edge < 2 {
            0.0
        } else {
            (((edge - 2) as f64 + 1.0) / (band as f64 + 1.0)).min(1.0)
        };
        for j in 0..cfg.width {
            mask[i * cfg.width + j] = v;
        }
    }
    mask
}

#[test]
fn criterion_06_scan_to_scan_recovery() {
    let started = Instant::now();
    let cfg = ProjectionConfig::default();
    let fe = FrontendConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let trials = 200;
    let mut successes = 0usize;
    let mut worst_rot: f64 = 0.0;
    let mut worst_trans: f64 = 0.0;
    for trial in 0..trials {
        let world = three_plane_world(&mut rng);
        let truth = random_pose(&mut rng, 2.0f64.to_radians(), 0.3);
        let (mut prev_scan, mut prev_gt) =
            world.scan_from_pose(&PoseSE3::identity(), &cfg, 0, 0.002, &mut rng);
        let (mut cur_scan, mut cur_gt) = world.scan_from_pose(&truth, &cfg, 1, 0.002, &mut rng);
        add_clutter(&mut prev_scan, &mut prev_gt, &cfg, 300, &mut rng);
        add_clutter(&mut cur_scan, &mut cur_gt, &cfg, 300, &mut rng);
        let prev = matrix_with_normals(&prev_scan, &cfg, 3);
        let cur = matrix_with_normals(&cur_scan, &cfg, 3);
        match estimate_relative_pose(&prev, &cur, &PoseSE3::identity(), &fe) {
            Ok((pose, diag)) => {
                let rot_err = pose.rotation_angle_to(&truth).to_degrees();
                let trans_err = pose.translation_distance_to(&truth);
                if rot_err < 0.05 && trans_err < 0.005 && diag.iterations <= 15 {
                    successes += 1;
                    worst_rot = worst_rot.max(rot_err);
                    worst_trans = worst_trans.max(trans_err);
                } else if trial < 5 {
                    eprintln!(
                        "trial {trial}: rot {rot_err:.4} deg trans {:.2} mm iters {}",
                        trans_err * 1e3,
                        diag.iterations
                    );
                }
            }
            Err(e) => {
                if trial < 5 {
                    eprintln!("trial {trial}: {e}");
                }
            }
        }
    }

    // Degenerate single-plane scenes must raise the observability error.
    let mut degenerate_flagged = 0usize;
    let degenerate_trials = 20;
    for _ in 0..degenerate_trials {
        let world = ground_world(2.0);
        let truth = random_pose(&mut rng, 1.0f64.to_radians(), 0.2);
        let (prev_scan, _) = world.scan_from_pose(&PoseSE3::identity(), &cfg, 0, 0.0, &mut rng);
        let (cur_scan, _) = world.scan_from_pose(&truth, &cfg, 1, 0.0, &mut rng);
        let prev = matrix_with_normals(&prev_scan, &cfg, 3);
        let cur = matrix_with_normals(&cur_scan, &cfg, 3);
        if matches!(
            estimate_relative_pose(&prev, &cur, &PoseSE3::identity(), &fe),
            Err(Error::InsufficientGeometry(_))
        ) {
            degenerate_flagged += 1;
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    let rate = successes as f64 / trials as f64;
    report(
        "criterion 6 (scan-to-scan recovery)",
        rate >= 0.99 && degenerate_flagged == degenerate_trials && elapsed < 120.0,
        format!(
            "{successes}/{trials} recovered (worst {worst_rot:.4} deg / {:.2} mm), {degenerate_flagged}/{degenerate_trials} degenerate flagged, {elapsed:.1} s",
            worst_trans * 1e3
        ),
    );
}

#[test]
fn criterion_07_mapping_pipeline_drift() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut cfg = PipelineConfig::default();
    cfg.mapping.distortion_compensation = false; // scans are rigid snapshots
    let world = corridor_world(20.0);
    let poses = forward_path(50, 0.3, 0.2f64.to_radians());
    let mut scans = Vec::new();
    for (k, pose) in poses.iter().enumerate() {
        let (scan, _) = world.scan_from_pose(pose, &cfg.projection, k, 0.002, &mut rng);
        scans.push(scan);
    }
    let out = run_pipeline(&scans, &cfg).unwrap();
    let mut worst_rot: f64 = 0.0;
    let mut worst_trans: f64 = 0.0;
    for (est, gt) in out.trajectory.poses().iter().zip(&poses) {
        worst_rot = worst_rot.max(est.rotation_angle_to(gt).to_degrees());
        worst_trans = worst_trans.max(est.translation_distance_to(gt));
    }
    let path_len: f64 = poses
        .windows(2)
        .map(|w| (w[1].translation() - w[0].translation()).norm())
        .sum();
    let endpoint_drift = out
        .trajectory
        .poses()
        .last()
        .unwrap()
        .translation_distance_to(poses.last().unwrap());
    let drift_pct = endpoint_drift / path_len * 100.0;

    // Stationary sensor: identical scans must pin the pose at the identity.
    let (static_scan, _) =
        world.scan_from_pose(&PoseSE3::identity(), &cfg.projection, 0, 0.002, &mut rng);
    let static_scans: Vec<Scan> = (0..20)
        .map(|k| {
            let mut s = static_scan.clone();
            s.sequence_index = k;
            s.timestamp = k as f64 * 0.1;
            s
        })
        .collect();
    let static_out = run_pipeline(&static_scans, &cfg).unwrap();
    let mut worst_static: f64 = 0.0;
    for pose in static_out.trajectory.poses() {
        worst_static = worst_static
            .max(pose.rotation_angle())
            .max(pose.translation().norm());
    }

    let elapsed = started.elapsed().as_secs_f64();
    report(
        "criterion 7 (mapping pipeline drift)",
        worst_rot < 0.1
            && worst_trans < 0.02
            && drift_pct < 0.5
            && worst_static < 1e-6
            && elapsed < 180.0,
        format!(
            "worst pose err {worst_rot:.4} deg / {:.2} mm, endpoint drift {drift_pct:.4}% of {path_len:.1} m, stationary max {worst_static:.2e}, {elapsed:.1} s",
            worst_trans * 1e3
        ),
    );
}

#[test]
fn criterion_08_constant_velocity_predictor_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let a = random_pose(&mut rng, 3.0, 10.0);
        let b = random_pose(&mut rng, 3.0, 10.0);
        let traj = WorldTrajectory::from_poses(vec![a, b]);
        let predicted = predict_initial_pose(&traj).to_homogeneous();
        let oracle =
            b.to_homogeneous() * a.to_homogeneous().try_inverse().unwrap() * b.to_homogeneous();
        worst = worst.max((predicted - oracle).abs().max());
    }
    report(
        "criterion 8 (constant-velocity predictor)",
        worst < 1e-12,
        format!("max element gap vs 4x4 oracle {worst:.3e} over 10000 pairs"),
    );
}

#[test]
fn criterion_09_evaluation_metric() {
    // Identical trajectories evaluate to zero.
    let gt: Vec<PoseSE3> = (0..900)
        .map(|i| {
            PoseSE3::new(
                UnitQuaternion::identity(),
                Vector3::new(i as f64, 0.0, 0.0),
            )
        })
        .collect();
    let gt_traj = WorldTrajectory::from_poses(gt.clone());
    let self_report = evaluate_trajectory(&gt_traj, &gt_traj).unwrap();

    // Uniform 1% scale inflation on a straight line reads as 1%.
    let est: Vec<PoseSE3> = (0..900)
        .map(|i| {
            PoseSE3::new(
                UnitQuaternion::identity(),
                Vector3::new(i as f64 * 1.01, 0.0, 0.0),
            )
        })
        .collect();
    let est_traj = WorldTrajectory::from_poses(est.clone());
    let report_1pct = evaluate_trajectory(&est_traj, &gt_traj).unwrap();

    // Brute-force oracle over all (start, length) segments.
    let dist: Vec<f64> = (0..gt.len()).map(|i| i as f64).collect();
    let mut t_sum = 0.0;
    let mut n_seg = 0usize;
    for start in 0..gt.len() {
        for length in SEGMENT_LENGTHS {
            let target = dist[start] + length;
            let Some(end) = (start + 1..gt.len()).find(|&j| dist[j] >= target) else {
                continue;
            };
            let gt_delta = gt[end].to_homogeneous().try_inverse().unwrap() * gt[start].to_homogeneous();
            let est_delta =
                est[end].to_homogeneous().try_inverse().unwrap() * est[start].to_homogeneous();
            let err = gt_delta.try_inverse().unwrap() * est_delta;
            let t_err = Vector3::new(err[(0, 3)], err[(1, 3)], err[(2, 3)]).norm();
            t_sum += t_err / length * 100.0;
            n_seg += 1;
        }
    }
    let oracle_pct = t_sum / n_seg as f64;

    let zero_ok =
        self_report.translation_rel_pct < 1e-12 && self_report.rotation_rel_deg_per_100m < 1e-10;
    let one_pct_ok = (report_1pct.translation_rel_pct - 1.0).abs() < 1e-6
        && (report_1pct.translation_rel_pct - oracle_pct).abs() < 1e-9
        && report_1pct.segments == n_seg;
    report(
        "criterion 9 (evaluation metric)",
        zero_ok && one_pct_ok,
        format!(
            "self-eval t {:.2e}% r {:.2e}, 1%-scale reads {:.9}% vs oracle {:.9}% over {n_seg} segments",
            self_report.translation_rel_pct,
            self_report.rotation_rel_deg_per_100m,
            report_1pct.translation_rel_pct,
            oracle_pct
        ),
    );
}

#[test]
fn criterion_10_throughput_report() {
    // Soft target: reported, not gated.
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut cfg = PipelineConfig::default();
    cfg.mapping.distortion_compensation = false;
    let world = corridor_world(10.0);
    let poses = forward_path(15, 0.3, 0.1f64.to_radians());
    let scans: Vec<Scan> = poses
        .iter()
        .enumerate()
        .map(|(k, pose)| {
            world
                .scan_from_pose(pose, &cfg.projection, k, 0.002, &mut rng)
                .0
        })
        .collect();
    let out = run_pipeline(&scans, &cfg).unwrap();
    let t = out.timing;
    report(
        "criterion 10 (throughput, soft)",
        true,
        format!(
            "avg per 64x1800 scan: total {:.1} ms (projection {:.1}, normals {:.1}, frontend {:.1}, mapping {:.1}); target < 100 ms not gated",
            t.total_ms, t.projection_ms, t.normals_ms, t.frontend_ms, t.mapping_ms
        ),
    );
}

#[test]
fn criterion_11_triplet_composition() {
    let started = Instant::now();
    let cfg = ProjectionConfig::default();
    let fe = FrontendConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let world = three_plane_world(&mut rng);
    let step = PoseSE3::new(
        UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, 0.4f64.to_radians())),
        Vector3::new(0.12, 0.05, 0.0),
    );
    let mut poses = vec![PoseSE3::identity()];
    for _ in 1..6 {
        let last = *poses.last().unwrap();
        poses.push(last.compose(&step));
    }
    let matrices: Vec<ScanMatrix> = poses
        .iter()
        .enumerate()
        .map(|(k, pose)| {
            let (scan, _) = world.scan_from_pose(pose, &cfg, k, 0.0, &mut rng);
            matrix_with_normals(&scan, &cfg, 3)
        })
        .collect();
    let mut consecutive = Vec::new();
    for k in 0..matrices.len() - 1 {
        let (pose, _) = estimate_relative_pose(
            &matrices[k],
            &matrices[k + 1],
            &PoseSE3::identity(),
            &fe,
        )
        .unwrap();
        consecutive.push(pose);
    }
    let mut skip = Vec::new();
    for k in 0..matrices.len() - 2 {
        let (pose, _) = estimate_relative_pose(
            &matrices[k],
            &matrices[k + 2],
            &PoseSE3::identity(),
            &fe,
        )
        .unwrap();
        skip.push(pose);
    }
    let triplets = pair_composition_check(&consecutive, &skip).unwrap();

    // Identical consecutive scans compose to the identity exactly.
    let (same_pose, _) =
        estimate_relative_pose(&matrices[0], &matrices[0], &PoseSE3::identity(), &fe).unwrap();
    let identical_ok =
        same_pose.rotation_angle() < 1e-9 && same_pose.translation().norm() < 1e-9;

    let elapsed = started.elapsed().as_secs_f64();
    report(
        "criterion 11 (triplet composition)",
        triplets.max_rotation_deg < 0.05 && triplets.max_translation < 0.005 && identical_ok,
        format!(
            "max inconsistency {:.4} deg / {:.2} mm over {} triplets, identical-pair identity {identical_ok}, {elapsed:.1} s",
            triplets.max_rotation_deg,
            triplets.max_translation * 1e3,
            triplets.triplets
        ),
    );
}
