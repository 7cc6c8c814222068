//! Scan-to-map refinement: sliding-window global map, constant-velocity pose
//! prediction, motion-distortion compensation, point-to-plane registration
//! against the map, and the full per-scan pipeline.

use crate::config::{DistortionPoseSource, MaskMode, PipelineConfig};
use crate::consistency::heuristic_mask;
use crate::error::Error;
use crate::frontend::{estimate_relative_pose, select_planar_points, smoothness};
use crate::icp::{point_to_plane_step, rms_residual, SourceCloud, TargetCloud, MIN_CORRESPONDENCES};
use crate::ingest::Scan;
use crate::normals::{estimate_normals, smooth_normals};
use crate::pose::PoseSE3;
use crate::projection::{project, ScanMatrix};
use crate::spatial::KdTree3;
use nalgebra::Vector3;
use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

#[derive(Clone, Copy, Debug)]
pub struct MappingConfig {
    /// Registration iteration cap.
    pub max_iterations: usize,
    /// Scans retained in the sliding-window map.
    pub window_scans: usize,
    /// Fraction of grid cells inserted into and registered against the map.
    pub selection_fraction: f64,
    pub correspondence_max_dist: f64,
    pub convergence_eps: f64,
    pub huber_delta: f64,
    pub distortion_compensation: bool,
    /// Points closer than this to an existing map point are not inserted;
    /// resident geometry keeps anchoring the map instead of being layered
    /// over by later (noisier) observations of the same surface. Zero keeps
    /// every point.
    pub insertion_min_spacing: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            max_iterations: 15,
            window_scans: 100,
            selection_fraction: 0.01,
            correspondence_max_dist: 1.0,
            convergence_eps: 1e-5,
            huber_delta: 0.1,
            distortion_compensation: true,
            insertion_min_spacing: 0.1,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.window_scans == 0 {
            return Err(Error::Config("window_scans must be positive".into()));
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return Err(Error::Config("selection_fraction must lie in (0, 1]".into()));
        }
        if !(self.correspondence_max_dist > 0.0)
            || !(self.convergence_eps > 0.0)
            || !(self.huber_delta > 0.0)
        {
            return Err(Error::Config("mapping thresholds must be positive".into()));
        }
        if !(self.insertion_min_spacing >= 0.0) {
            return Err(Error::Config(
                "insertion_min_spacing must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// A map point in world frame.
#[derive(Clone, Copy, Debug)]
pub struct MapPoint {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
}

/// Sliding window of the most recent globally-posed point sets with an exact
/// spatial index over all resident points. Eviction is strictly oldest-first.
#[derive(Debug)]
pub struct MapWindow {
    sets: VecDeque<Vec<MapPoint>>,
    capacity: usize,
    flat: Vec<MapPoint>,
    index: KdTree3,
}

impl MapWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            sets: VecDeque::new(),
            capacity: capacity.max(1),
            flat: Vec::new(),
            index: KdTree3::build(&[]),
        }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.flat.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends a point set, evicting the oldest set past capacity, and
    /// rebuilds the index to exactly the resident points.
    pub fn insert(&mut self, set: Vec<MapPoint>) {
        self.sets.push_back(set);
        while self.sets.len() > self.capacity {
            self.sets.pop_front();
        }
        self.rebuild();
    }

    fn rebuild(&mut self) {
        self.flat.clear();
        for set in &self.sets {
            self.flat.extend_from_slice(set);
        }
        let coords: Vec<[f64; 3]> = self
            .flat
            .iter()
            .map(|p| [p.position[0], p.position[1], p.position[2]])
            .collect();
        self.index = KdTree3::build(&coords);
    }

    pub fn nearest(&self, query: &Vector3<f64>, max_dist: f64) -> Option<&MapPoint> {
        self.index
            .nearest(&[query[0], query[1], query[2]], max_dist)
            .map(|(i, _)| &self.flat[i])
    }

    fn target_cloud(&self) -> TargetCloud {
        TargetCloud::new(
            self.flat.iter().map(|p| p.position).collect(),
            self.flat.iter().map(|p| p.normal).collect(),
        )
    }

    pub fn resident_sets(&self) -> impl Iterator<Item = &[MapPoint]> {
        self.sets.iter().map(|s| s.as_slice())
    }

    /// ASCII dump, one `x y z nx ny nz` line per point, one file per resident
    /// set (`map_000.txt`, oldest first).
    pub fn dump_ascii(&self, dir: &std::path::Path) -> Result<(), Error> {
        std::fs::create_dir_all(dir)?;
        for (k, set) in self.sets.iter().enumerate() {
            let mut file = std::fs::File::create(dir.join(format!("map_{k:03}.txt")))?;
            for p in set {
                writeln!(
                    file,
                    "{} {} {} {} {} {}",
                    p.position[0], p.position[1], p.position[2], p.normal[0], p.normal[1],
                    p.normal[2]
                )?;
            }
        }
        Ok(())
    }
}

/// World-from-sensor poses indexed by scan; the first pose is the identity.
#[derive(Clone, Debug, Default)]
pub struct WorldTrajectory {
    poses: Vec<PoseSE3>,
}

impl WorldTrajectory {
    pub fn new() -> Self {
        Self { poses: Vec::new() }
    }

    pub fn from_poses(poses: Vec<PoseSE3>) -> Self {
        Self { poses }
    }

    pub fn push(&mut self, pose: PoseSE3) {
        self.poses.push(pose);
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&PoseSE3> {
        self.poses.get(index)
    }

    pub fn last(&self) -> Option<&PoseSE3> {
        self.poses.last()
    }

    pub fn poses(&self) -> &[PoseSE3] {
        &self.poses
    }

    /// Arc length of the translation polyline up to each pose.
    pub fn cumulative_distances(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.poses.len());
        let mut acc = 0.0;
        for (i, p) in self.poses.iter().enumerate() {
            if i > 0 {
                acc += (p.translation() - self.poses[i - 1].translation()).norm();
            }
            out.push(acc);
        }
        out
    }
}

/// Constant-velocity prediction of the next world pose:
/// the last motion `M_{t-2} -> M_{t-1}` replayed onto `M_{t-1}`. With one
/// prior pose it returns that pose; with none, the identity.
pub fn predict_initial_pose(traj: &WorldTrajectory) -> PoseSE3 {
    let n = traj.len();
    match n {
        0 => PoseSE3::identity(),
        1 => traj.poses[0],
        _ => {
            let last = &traj.poses[n - 1];
            let before = &traj.poses[n - 2];
            last.compose(&before.inverse()).compose(last)
        }
    }
}

/// A scan sample carrying its azimuthal sweep fraction, used for intra-sweep
/// pose interpolation.
#[derive(Clone, Copy, Debug)]
pub struct SweepPoint {
    pub position: Vector3<f64>,
    pub normal: Option<Vector3<f64>>,
    /// Fraction of the revolution at which the sample was taken, in [0, 1);
    /// the start-of-sweep column is 0.
    pub sweep_fraction: f64,
}

/// Sweep samples for the given cells of a matrix; the fraction comes from the
/// column index over the width.
pub fn sweep_points_from_matrix(m: &ScanMatrix, cells: &[(usize, usize)]) -> Vec<SweepPoint> {
    let w = m.width() as f64;
    cells
        .iter()
        .map(|&(i, j)| SweepPoint {
            position: m.point_at(i, j),
            normal: m.normals().and_then(|nm| nm.normal_at(i, j)),
            sweep_fraction: j as f64 / w,
        })
        .collect()
}

/// Sweep samples for raw scan points; the fraction comes from the azimuth.
pub fn sweep_points_from_scan(scan: &Scan) -> Vec<SweepPoint> {
    scan.points
        .iter()
        .map(|p| {
            let mut az = p.y.atan2(p.x);
            if az < 0.0 {
                az += std::f64::consts::TAU;
            }
            SweepPoint {
                position: p.position(),
                normal: None,
                sweep_fraction: az / std::f64::consts::TAU,
            }
        })
        .collect()
}

/// Removes intra-sweep motion distortion: every sample is moved by the
/// inverse of the relative motion interpolated at its sweep fraction
/// (quaternion slerp plus linear translation). Normals rotate along. The
/// identity motion is a no-op.
pub fn compensate_distortion(points: &[SweepPoint], t_rel: &PoseSE3) -> Vec<SweepPoint> {
    if t_rel.is_identity() {
        return points.to_vec();
    }
    points
        .iter()
        .map(|p| {
            let correction = t_rel.fraction(p.sweep_fraction).inverse();
            SweepPoint {
                position: correction.transform_point(&p.position),
                normal: p.normal.map(|n| correction.rotate_vector(&n)),
                sweep_fraction: p.sweep_fraction,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RegistrationDiagnostics {
    pub iterations: usize,
    pub rms_residual: f64,
    pub matches: usize,
    pub condition: f64,
    pub converged: bool,
}

/// Registers sensor-frame points (with normals) against the map.
///
/// Points are transformed by `m_init` and iteratively refined with
/// point-to-plane steps against map normals; per-iteration increments
/// accumulate onto `m_init`, so zero iterations return `m_init` exactly.
/// Steps that would increase the residual are rejected and iteration stops,
/// keeping the residual non-increasing.
pub fn register_to_map(
    points: &[SweepPoint],
    map: &MapWindow,
    m_init: &PoseSE3,
    cfg: &MappingConfig,
) -> Result<(PoseSE3, RegistrationDiagnostics), Error> {
    cfg.validate()?;
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    let source = SourceCloud {
        points: points.iter().map(|p| p.position).collect(),
        normals: points.iter().map(|p| p.normal).collect(),
    };
    if source.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientGeometry(format!(
            "{} points to register, need at least {MIN_CORRESPONDENCES}",
            source.len()
        )));
    }
    let target = map.target_cloud();
    let mut pose = *m_init;
    let mut diag = RegistrationDiagnostics::default();
    if cfg.max_iterations == 0 {
        return Ok((pose, diag));
    }
    let (mut current_rms, _) = rms_residual(&source, &pose, &target, cfg.correspondence_max_dist);
    'outer: for iter in 1..=cfg.max_iterations {
        let step = point_to_plane_step(
            &source,
            &pose,
            &target,
            cfg.correspondence_max_dist,
            cfg.huber_delta,
        )?;
        // Backtracking keeps the residual non-increasing: halve a step that
        // overshoots, give up once even a small fraction does not help.
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..6 {
            let candidate = pose.with_increment(&(step.delta * scale));
            let (candidate_rms, _) =
                rms_residual(&source, &candidate, &target, cfg.correspondence_max_dist);
            if candidate_rms <= current_rms * (1.0 + 1e-12) {
                accepted = Some((candidate, candidate_rms));
                break;
            }
            scale *= 0.5;
        }
        let Some((candidate, candidate_rms)) = accepted else {
            break 'outer;
        };
        pose = candidate;
        current_rms = candidate_rms;
        diag.iterations = iter;
        diag.matches = step.matches;
        diag.condition = step.condition;
        if (step.delta * scale).norm() < cfg.convergence_eps {
            diag.converged = true;
            break;
        }
    }
    diag.rms_residual = current_rms;
    Ok((pose, diag))
}

/// Re-interpolates the scan into world frame between the previous and current
/// pose (per-point sweep fraction, same blend as distortion compensation) and
/// appends it to the map. Samples without a normal are skipped; map points
/// need normals to serve as registration targets.
pub fn insert_scan(
    map: &mut MapWindow,
    points: &[SweepPoint],
    m_prev: &PoseSE3,
    m_t: &PoseSE3,
) {
    let mut set = Vec::with_capacity(points.len());
    for p in points {
        let Some(n) = p.normal else { continue };
        let world = m_prev.interpolate(m_t, p.sweep_fraction);
        set.push(MapPoint {
            position: world.transform_point(&p.position),
            normal: world.rotate_vector(&n),
        });
    }
    map.insert(set);
}

/// Per-scan pipeline record, serializable as one key=value line.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScanDiagnostics {
    pub index: usize,
    pub frontend_iterations: usize,
    pub frontend_rms: f64,
    pub frontend_matches: usize,
    pub frontend_fallback: bool,
    pub registration_iterations: usize,
    pub registration_rms: f64,
    pub registration_matches: usize,
    pub registration_fallback: bool,
    pub selected_points: usize,
    pub millis: f64,
}

impl ScanDiagnostics {
    pub fn machine_form(&self) -> String {
        format!(
            "scan={} frontend_iterations={} frontend_rms={:.6e} frontend_matches={} frontend_fallback={} registration_iterations={} registration_rms={:.6e} registration_matches={} registration_fallback={} selected_points={} millis={:.3}",
            self.index,
            self.frontend_iterations,
            self.frontend_rms,
            self.frontend_matches,
            self.frontend_fallback,
            self.registration_iterations,
            self.registration_rms,
            self.registration_matches,
            self.registration_fallback,
            self.selected_points,
            self.millis
        )
    }
}

/// Average per-scan stage timings, milliseconds.
#[derive(Clone, Copy, Debug, Default)]
pub struct TimingSummary {
    pub scans: usize,
    pub projection_ms: f64,
    pub normals_ms: f64,
    pub frontend_ms: f64,
    pub mapping_ms: f64,
    pub total_ms: f64,
}

impl TimingSummary {
    pub fn machine_form(&self) -> String {
        format!(
            "scans={} projection_ms={:.2} normals_ms={:.2} frontend_ms={:.2} mapping_ms={:.2} total_ms={:.2}",
            self.scans,
            self.projection_ms,
            self.normals_ms,
            self.frontend_ms,
            self.mapping_ms,
            self.total_ms
        )
    }
}

pub struct PipelineOutput {
    pub trajectory: WorldTrajectory,
    pub diagnostics: Vec<ScanDiagnostics>,
    pub timing: TimingSummary,
}

/// Streaming odometry pipeline. Scans must arrive in sequence order; each call
/// to [`Pipeline::process`] appends one world pose.
pub struct Pipeline {
    cfg: PipelineConfig,
    map: MapWindow,
    trajectory: WorldTrajectory,
    prev_matrix: Option<ScanMatrix>,
    prev_relative: PoseSE3,
    diagnostics: Vec<ScanDiagnostics>,
    stage_totals: [f64; 5],
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let window = cfg.mapping.window_scans;
        Ok(Self {
            cfg,
            map: MapWindow::new(window),
            trajectory: WorldTrajectory::new(),
            prev_matrix: None,
            prev_relative: PoseSE3::identity(),
            diagnostics: Vec::new(),
            stage_totals: [0.0; 5],
        })
    }

    pub fn trajectory(&self) -> &WorldTrajectory {
        &self.trajectory
    }

    pub fn map(&self) -> &MapWindow {
        &self.map
    }

    pub fn diagnostics(&self) -> &[ScanDiagnostics] {
        &self.diagnostics
    }

    /// Ingests the next scan and returns its world pose.
    pub fn process(&mut self, scan: &Scan) -> Result<PoseSE3, Error> {
        let started = Instant::now();
        let index = self.trajectory.len();
        let mut diag = ScanDiagnostics {
            index,
            ..Default::default()
        };

        let t_proj = Instant::now();
        let mut matrix = project(scan, &self.cfg.projection)?;
        let projection_ms = t_proj.elapsed().as_secs_f64() * 1e3;

        let t_norm = Instant::now();
        let raw_normals = estimate_normals(&matrix);
        let smoothed = smooth_normals(&raw_normals, self.cfg.smooth_window)?;
        matrix.set_normals(smoothed)?;
        let normals_ms = t_norm.elapsed().as_secs_f64() * 1e3;

        // First scan: the world frame. Seed the map and the trajectory.
        if self.prev_matrix.is_none() {
            let pose = PoseSE3::identity();
            self.seed_map(&matrix, &pose, &mut diag);
            self.trajectory.push(pose);
            self.prev_matrix = Some(matrix);
            diag.millis = started.elapsed().as_secs_f64() * 1e3;
            self.accumulate(projection_ms, normals_ms, 0.0, 0.0, &diag);
            self.diagnostics.push(diag);
            return Ok(pose);
        }

        let predicted_relative = self.prev_relative;

        // Optional mask on the current matrix before selection.
        match &self.cfg.mask {
            MaskMode::None => {}
            MaskMode::Heuristic => {
                let prev = self.prev_matrix.as_ref().unwrap();
                if let Ok(mask) = heuristic_mask(
                    prev,
                    &matrix,
                    &predicted_relative,
                    self.cfg.mask_residual_threshold,
                ) {
                    matrix.set_mask(mask)?;
                }
            }
            MaskMode::Directory(dir) => {
                let path = dir.join(format!("{index:06}.mask"));
                let mask = crate::ingest::read_mask_bin(
                    &path,
                    self.cfg.projection.height,
                    self.cfg.projection.width,
                )?;
                matrix.set_mask(mask)?;
            }
        }

        let t_front = Instant::now();
        let prev = self.prev_matrix.as_ref().unwrap();
        // Scan-to-scan estimation starts from the identity: seeding it with
        // motion extrapolated from the trajectory would leak accumulated
        // trajectory error into directions the pair geometry constrains
        // weakly, turning the loop into an error amplifier.
        let relative = match estimate_relative_pose(
            prev,
            &matrix,
            &PoseSE3::identity(),
            &self.cfg.frontend,
        ) {
            Ok((pose, fdiag)) => {
                diag.frontend_iterations = fdiag.iterations;
                diag.frontend_rms = fdiag.rms_residual;
                diag.frontend_matches = fdiag.matches;
                pose
            }
            Err(err) => {
                log::warn!("scan {index}: frontend fallback to predicted motion: {err}");
                diag.frontend_fallback = true;
                predicted_relative
            }
        };
        let frontend_ms = t_front.elapsed().as_secs_f64() * 1e3;

        let t_map = Instant::now();
        let m_prev = *self.trajectory.last().unwrap();
        let predicted = predict_initial_pose(&self.trajectory);
        // The scan-to-scan estimate anchors the registration start; feeding
        // the constant-velocity extrapolation back in amplifies whatever
        // error registration leaves behind (it doubles the last pose error),
        // while the frontend error is independent per scan. The prediction
        // remains the fallback when the frontend failed.
        let m_init = if diag.frontend_fallback {
            predicted
        } else {
            m_prev.compose(&relative)
        };

        let selected = self.select_cells(&matrix, &mut diag);
        let sweep = sweep_points_from_matrix(&matrix, &selected);
        let corrected = if self.cfg.mapping.distortion_compensation {
            let motion = match self.cfg.distortion_pose_source {
                DistortionPoseSource::Frontend => relative,
                DistortionPoseSource::Predicted => m_prev.inverse().compose(&predicted),
            };
            compensate_distortion(&sweep, &motion)
        } else {
            sweep
        };

        let pose = if corrected.is_empty() {
            log::warn!("scan {index}: nothing selected; using predicted pose");
            diag.registration_fallback = true;
            predicted
        } else {
            match register_to_map(&corrected, &self.map, &m_init, &self.cfg.mapping) {
                Ok((pose, rdiag)) => {
                    diag.registration_iterations = rdiag.iterations;
                    diag.registration_rms = rdiag.rms_residual;
                    diag.registration_matches = rdiag.matches;
                    pose
                }
                Err(err) => {
                    log::warn!("scan {index}: registration fallback to predicted pose: {err}");
                    diag.registration_fallback = true;
                    predicted
                }
            }
        };

        // With distortion modeling off the scan is a rigid snapshot at the
        // final pose; blending from the previous pose would smear the map.
        let (insert_from, insert_to) = if self.cfg.mapping.distortion_compensation {
            (m_prev, pose)
        } else {
            (pose, pose)
        };
        let novel = self.novel_points(&corrected, &insert_from, &insert_to);
        insert_scan(&mut self.map, &novel, &insert_from, &insert_to);
        let mapping_ms = t_map.elapsed().as_secs_f64() * 1e3;

        self.prev_relative = m_prev.inverse().compose(&pose);
        self.trajectory.push(pose);
        self.prev_matrix = Some(matrix);
        diag.millis = started.elapsed().as_secs_f64() * 1e3;
        self.accumulate(projection_ms, normals_ms, frontend_ms, mapping_ms, &diag);
        self.diagnostics.push(diag);
        Ok(pose)
    }

    fn select_cells(&self, matrix: &ScanMatrix, diag: &mut ScanDiagnostics) -> Vec<(usize, usize)> {
        let selected = matrix
            .normals()
            .map(|nm| smoothness(nm))
            .and_then(|sm| {
                select_planar_points(&sm, matrix.mask(), self.cfg.mapping.selection_fraction).ok()
            })
            .unwrap_or_default();
        diag.selected_points = selected.len();
        selected
    }

    fn seed_map(&mut self, matrix: &ScanMatrix, pose: &PoseSE3, diag: &mut ScanDiagnostics) {
        let selected = self.select_cells(matrix, diag);
        let sweep = sweep_points_from_matrix(matrix, &selected);
        insert_scan(&mut self.map, &sweep, pose, pose);
    }

    /// Points that do not already have a map neighbor within the configured
    /// insertion spacing (at their would-be world position).
    fn novel_points(
        &self,
        points: &[SweepPoint],
        from: &PoseSE3,
        to: &PoseSE3,
    ) -> Vec<SweepPoint> {
        let spacing = self.cfg.mapping.insertion_min_spacing;
        if spacing <= 0.0 || self.map.is_empty() {
            return points.to_vec();
        }
        points
            .iter()
            .filter(|p| {
                let world = from.interpolate(to, p.sweep_fraction);
                self.map
                    .nearest(&world.transform_point(&p.position), spacing)
                    .is_none()
            })
            .copied()
            .collect()
    }

    fn accumulate(
        &mut self,
        projection_ms: f64,
        normals_ms: f64,
        frontend_ms: f64,
        mapping_ms: f64,
        diag: &ScanDiagnostics,
    ) {
        self.stage_totals[0] += projection_ms;
        self.stage_totals[1] += normals_ms;
        self.stage_totals[2] += frontend_ms;
        self.stage_totals[3] += mapping_ms;
        self.stage_totals[4] += diag.millis;
    }

    pub fn timing(&self) -> TimingSummary {
        let n = self.diagnostics.len().max(1) as f64;
        TimingSummary {
            scans: self.diagnostics.len(),
            projection_ms: self.stage_totals[0] / n,
            normals_ms: self.stage_totals[1] / n,
            frontend_ms: self.stage_totals[2] / n,
            mapping_ms: self.stage_totals[3] / n,
            total_ms: self.stage_totals[4] / n,
        }
    }

    pub fn into_output(self) -> PipelineOutput {
        let timing = self.timing();
        PipelineOutput {
            trajectory: self.trajectory,
            diagnostics: self.diagnostics,
            timing,
        }
    }
}

/// Runs the whole pipeline over a scan sequence.
pub fn run_pipeline(scans: &[Scan], cfg: &PipelineConfig) -> Result<PipelineOutput, Error> {
    if scans.is_empty() {
        return Err(Error::Format("pipeline needs at least one scan".into()));
    }
    let mut pipeline = Pipeline::new(cfg.clone())?;
    for scan in scans {
        pipeline.process(scan)?;
    }
    Ok(pipeline.into_output())
}
